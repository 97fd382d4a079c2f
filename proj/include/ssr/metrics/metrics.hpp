#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ssr/core/error.hpp"
#include "ssr/core/image.hpp"

namespace ssr {

constexpr float kPsnrCapDb = 100.0f;  // returned for identical images

inline Image to_luma(const Image& img) {
  if (img.channels() == 1) return img;
  Image out(1, img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(0, y, x) = 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
  return out;
}

// PSNR in dB on [0,1] data; capped at kPsnrCapDb when MSE is zero.
inline float psnr(const Image& a, const Image& b, bool on_luma = false) {
  if (on_luma) return psnr(to_luma(a), to_luma(b), false);
  check_same_shape(a.t, b.t, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.t.v.size(); ++i) {
    double d = static_cast<double>(a.t.v[i]) - static_cast<double>(b.t.v[i]);
    se += d * d;
  }
  double mse = se / static_cast<double>(a.t.v.size());
  if (mse <= 0.0) return kPsnrCapDb;
  float db = static_cast<float>(10.0 * std::log10(1.0 / mse));
  return std::min(db, kPsnrCapDb);
}

namespace detail {
inline std::vector<double> ssim_window(int side = 11, double sigma = 1.5) {
  std::vector<double> w(static_cast<std::size_t>(side) * side);
  int r = side / 2;
  double sum = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      double g = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(y + r) * side + (x + r)] = g;
      sum += g;
    }
  for (double& g : w) g /= sum;
  return w;
}
}  // namespace detail

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1. Windows fully inside the image; averaged over positions
// and channels.
inline float ssim(const Image& a, const Image& b) {
  check_same_shape(a.t, b.t, "ssim");
  const int side = 11, r = side / 2;
  require(a.height() >= side && a.width() >= side, Errc::invalid_argument,
          "ssim: image smaller than 11x11 window");
  static const std::vector<double> win = detail::ssim_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  double acc = 0.0;
  long count = 0;
  for (int ch = 0; ch < a.channels(); ++ch)
    for (int y = r; y < a.height() - r; ++y)
      for (int x = r; x < a.width() - r; ++x) {
        double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            double wgt = win[static_cast<std::size_t>(dy + r) * side + (dx + r)];
            double va = a.at(ch, y + dy, x + dx);
            double vb = b.at(ch, y + dy, x + dx);
            mu_a += wgt * va;
            mu_b += wgt * vb;
            aa += wgt * va * va;
            bb += wgt * vb * vb;
            ab += wgt * va * vb;
          }
        double var_a = aa - mu_a * mu_a;
        double var_b = bb - mu_b * mu_b;
        double cov = ab - mu_a * mu_b;
        double s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        acc += s;
        ++count;
      }
  return static_cast<float>(acc / static_cast<double>(count));
}

struct MetricRow {
  std::string id;
  float psnr_db = 0.0f;
  float ssim = 0.0f;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  void add(const std::string& id, float psnr_db, float ssim_val) {
    rows.push_back({id, psnr_db, ssim_val});
  }

  float mean_psnr() const {
    double s = 0;
    for (const auto& r : rows) s += r.psnr_db;
    return rows.empty() ? 0.0f : static_cast<float>(s / static_cast<double>(rows.size()));
  }
  float mean_ssim() const {
    double s = 0;
    for (const auto& r : rows) s += r.ssim;
    return rows.empty() ? 0.0f : static_cast<float>(s / static_cast<double>(rows.size()));
  }
  float std_psnr() const { return stddev([](const MetricRow& r) { return r.psnr_db; }); }
  float std_ssim() const { return stddev([](const MetricRow& r) { return r.ssim; }); }

  template <typename F>
  float stddev(F get) const {
    if (rows.size() < 2) return 0.0f;
    double m = 0;
    for (const auto& r : rows) m += get(r);
    m /= static_cast<double>(rows.size());
    double s = 0;
    for (const auto& r : rows) {
      double d = get(r) - m;
      s += d * d;
    }
    return static_cast<float>(std::sqrt(s / static_cast<double>(rows.size())));
  }
};

// Floats are printed with 9 significant digits so that parsing them back
// reproduces the exact f32 value.
inline std::string format_f32(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

inline void write_metric_report(const MetricReport& rep, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), Errc::io_unwritable, "write_metric_report: cannot open " + path);
  f << "id\tpsnr_db\tssim\n";
  for (const auto& r : rep.rows)
    f << r.id << "\t" << format_f32(r.psnr_db) << "\t" << format_f32(r.ssim) << "\n";
}

inline MetricReport read_metric_report(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Errc::io_missing_file, "read_metric_report: cannot open " + path);
  std::string line;
  std::getline(f, line);
  require(line == "id\tpsnr_db\tssim", Errc::io_unsupported_format,
          "read_metric_report: bad header in " + path);
  MetricReport rep;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    MetricRow row;
    std::string p, s;
    std::getline(is, row.id, '\t');
    std::getline(is, p, '\t');
    std::getline(is, s, '\t');
    row.psnr_db = std::stof(p);
    row.ssim = std::stof(s);
    rep.rows.push_back(row);
  }
  return rep;
}

// Hook for externally computed perceptual metrics: a TSV of `id<TAB>score`
// rows (first line is a header naming the metric).
inline std::pair<std::string, std::map<std::string, double>> load_external_scores(
    const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Errc::io_missing_file, "load_external_scores: cannot open " + path);
  std::string header;
  std::getline(f, header);
  auto tab = header.find('\t');
  require(tab != std::string::npos && header.substr(0, tab) == "id", Errc::io_unsupported_format,
          "load_external_scores: header must be id<TAB><metric>");
  std::string metric = header.substr(tab + 1);
  std::map<std::string, double> scores;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto t = line.find('\t');
    require(t != std::string::npos, Errc::io_unsupported_format,
            "load_external_scores: malformed row in " + path);
    scores[line.substr(0, t)] = std::stod(line.substr(t + 1));
  }
  return {metric, scores};
}

}  // namespace ssr
