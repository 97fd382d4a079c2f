#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ssr/depth/depth.hpp"
#include "ssr/dkenet/dkenet.hpp"
#include "ssr/kernelfield/field.hpp"
#include "ssr/metrics/metrics.hpp"
#include "ssr/nbsr/nbsr.hpp"

namespace ssr {

// EMA orientation: algorithm1 puts gamma on the fresh estimate,
// equation2 puts gamma on the previous field.
enum class EmaVariant { algorithm1, equation2 };

inline EmaVariant ema_variant_from_string(const std::string& s) {
  if (s == "algorithm1") return EmaVariant::algorithm1;
  if (s == "equation2") return EmaVariant::equation2;
  fail(Errc::invalid_argument, "unknown ema variant: " + s);
}

struct SvkrIterate {
  DepthMap depth;
  KernelField field;
  Image image;  // I^t; the LR input at t = 0
  std::optional<float> kernel_err;
  std::optional<float> depth_err;
};

// Per-iteration record, length T + 1 including initialization.
struct SvkrTrace {
  std::vector<SvkrIterate> iterates;
};

struct SvkrSettings {
  int iterations = 3;
  float gamma = 0.9f;
  EmaVariant variant = EmaVariant::algorithm1;
  float sigma_max = kSigmaSynthMax;  // normalizes the oracle blur level
};

struct SvkrResult {
  DepthMap depth;
  KernelField field;
  SvkrTrace trace;
};

// Alternating refinement: depth from the latest SR image, kernels from the
// LR image and that depth (EMA-blended with history), then non-blind SR.
// The initial depth estimate is taken at full blur (no kernel estimate
// exists yet); afterwards the blur level fed to the depth provider comes
// from the current kernel field.
inline SvkrResult svkr_refine(const Image& lr, const DepthProvider& de,
                              const std::optional<DepthMap>& gt_depth,
                              const std::optional<KernelField>& gt_field,
                              const Dkenet<float>& ke_net, ParamStore<float>& ke_ps,
                              const Nbsr<float>& nbsr_net, ParamStore<float>& nbsr_ps,
                              const KernelProjection& proj, const SvkrSettings& st) {
  require(st.iterations >= 1, Errc::invalid_argument, "svkr: iterations must be >= 1");
  require(st.gamma >= 0.0f && st.gamma <= 1.0f, Errc::invalid_argument, "svkr: gamma must be in [0,1]");

  auto blend = [&](const KernelField& fresh, const KernelField& prev) {
    return st.variant == EmaVariant::algorithm1 ? ema_blend(fresh, prev, st.gamma)
                                                : ema_blend(prev, fresh, st.gamma);
  };
  auto record = [&](SvkrTrace& tr, DepthMap d, KernelField k, Image img) {
    SvkrIterate it{std::move(d), std::move(k), std::move(img), std::nullopt, std::nullopt};
    if (gt_field) it.kernel_err = kernel_field_error(it.field, *gt_field);
    if (gt_depth) it.depth_err = depth_mae(it.depth, *gt_depth);
    tr.iterates.push_back(std::move(it));
  };

  SvkrTrace trace;
  Image current = lr;
  DepthMap depth;
  KernelField field;
  int stage = -1;  // -1 marks initialization in error reports
  try {
    depth = estimate_depth(current, de, gt_depth, /*blur_level=*/1.0f);
    field = dkenet_estimate(ke_net, ke_ps, lr, resize_depth(depth, lr.height(), lr.width()));
    record(trace, depth, field, current);

    for (stage = 0; stage < st.iterations; ++stage) {
      float blur = field_blur_level(field, st.sigma_max);
      depth = estimate_depth(current, de, gt_depth, blur);
      KernelField fresh =
          dkenet_estimate(ke_net, ke_ps, lr, resize_depth(depth, lr.height(), lr.width()));
      field = blend(fresh, field);
      current = nbsr_super_resolve(nbsr_net, nbsr_ps, lr, field, proj);
      record(trace, depth, field, current);
    }
  } catch (const Error& e) {
    std::string where = stage < 0 ? "initialization" : "iteration t=" + std::to_string(stage);
    throw Error(e.code(), "svkr " + where + ": " + e.what());
  }

  return SvkrResult{std::move(depth), std::move(field), std::move(trace)};
}

inline Image depth_to_image(const DepthMap& d) {
  Image img(1, d.height(), d.width());
  img.t = d.t;
  img.clamp01();
  return img;
}

// Writes iter_{t}/depth.png, iter_{t}/kvar.png, iter_{t}/sr.png and a
// summary.tsv with the per-iteration error metrics.
inline void export_trace(const SvkrTrace& trace, const std::string& dir) {
  require(!trace.iterates.empty(), Errc::invalid_argument, "export_trace: empty trace");
  std::filesystem::create_directories(dir);
  std::ofstream tsv(dir + "/summary.tsv");
  require(tsv.good(), Errc::io_unwritable, "export_trace: cannot write summary in " + dir);
  tsv << "t\tkernel_err\tdepth_err\n";
  for (std::size_t t = 0; t < trace.iterates.size(); ++t) {
    const auto& it = trace.iterates[t];
    std::string sub = dir + "/iter_" + std::to_string(t);
    std::filesystem::create_directories(sub);
    write_image(depth_to_image(it.depth), sub + "/depth.png");
    save_variance_heatmap(it.field, sub + "/kvar.png");
    write_image(it.image, sub + "/sr.png");
    tsv << t << "\t" << (it.kernel_err ? format_f32(*it.kernel_err) : "nan") << "\t"
        << (it.depth_err ? format_f32(*it.depth_err) : "nan") << "\n";
  }
}

}  // namespace ssr
