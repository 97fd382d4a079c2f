#include <catch2/catch_amalgamated.hpp>

#include "ssr/dkenet/dkenet.hpp"
#include "support/test_util.hpp"

using namespace ssr;

namespace {

// Sets a square conv to the identity map (center tap 1 on the diagonal).
template <typename T>
void make_identity_conv(ParamStore<T>& ps, const std::string& name, int ch, int k) {
  auto& w = ps.param(name + ".w");
  std::fill(w.v.begin(), w.v.end(), T(0));
  for (int c = 0; c < ch; ++c) w(c, c, k / 2, k / 2) = T(1);
  auto& b = ps.param(name + ".b");
  std::fill(b.v.begin(), b.v.end(), T(0));
}

DkenetConfig tiny_config() {
  DkenetConfig cfg;
  cfg.in_channels = 2;
  cfg.base_channels = 4;
  cfg.kernel_side = 3;
  cfg.scale = 1;
  cfg.depth_branch_channels = 2;
  return cfg;
}

}  // namespace

TEST_CASE("sft: zero-initialized modulation stacks are an exact identity") {
  RngStream rng(61);
  ParamStore<double> ps;
  SftLayer<double> sft("sft", 4, 2);
  sft.init(ps, rng);  // g2/b2 zero-initialized

  Tape<double> tp;
  Binding<double> bd(tp, ps, false);
  auto feat = tp.leaf(test::random_tensor<double>({4, 5, 5}, rng));
  auto cond = tp.leaf(test::random_tensor<double>({2, 5, 5}, rng));
  auto out = sft.apply(bd, feat, cond);
  REQUIRE(tp.val(out).v == tp.val(feat).v);
}

TEST_CASE("sft: zero features reduce to the beta stack response") {
  RngStream rng(62);
  ParamStore<double> ps;
  SftLayer<double> sft("sft", 4, 2);
  sft.init(ps, rng);
  // Give the beta output conv real weights so Beta(cond) is nonzero.
  orthogonal_fill(ps.param("sft.b2.w"), rng, 1.0);

  Tape<double> tp;
  Binding<double> bd(tp, ps, false);
  auto feat = tp.leaf(BasicTensor<double>({4, 5, 5}));
  auto cond = tp.leaf(test::random_tensor<double>({2, 5, 5}, rng));
  auto out = sft.apply(bd, feat, cond);

  auto beta = sft.b2.apply(bd, tp.relu(sft.b1.apply(bd, cond)));
  REQUIRE(tp.val(out).v == tp.val(beta).v);
}

TEST_CASE("sft: gradient of sum(out^2) matches finite differences") {
  RngStream rng(63);
  ParamStore<double> ps;
  SftLayer<double> sft("sft", 4, 2);
  sft.init(ps, rng);
  orthogonal_fill(ps.param("sft.g2.w"), rng, 0.5);
  orthogonal_fill(ps.param("sft.b2.w"), rng, 0.5);
  auto feat = test::random_tensor<double>({4, 4, 4}, rng);
  auto cond = test::random_tensor<double>({2, 4, 4}, rng);

  double err = test::gradcheck_params(ps, [&](bool with_grad) {
    Tape<double> tp;
    Binding<double> bd(tp, ps, true);
    auto out = sft.apply(bd, tp.leaf(feat), tp.leaf(cond));
    auto loss = tp.sum_sq(out);
    if (with_grad) {
      tp.backward(loss);
      bd.pull_grads();
    }
    return tp.val(loss).v[0];
  });
  REQUIRE(err < 1e-3);
}

TEST_CASE("maconv: zero predictors with identity convolutions pass features through") {
  RngStream rng(64);
  ParamStore<double> ps;
  MaConvLayer<double> ma("ma", 4);
  ma.init(ps, rng);
  make_identity_conv(ps, "ma.main_a", 2, 3);
  make_identity_conv(ps, "ma.main_b", 2, 3);

  Tape<double> tp;
  Binding<double> bd(tp, ps, false);
  auto x = tp.leaf(test::random_tensor<double>({4, 5, 5}, rng));
  auto out = ma.apply(bd, x);
  REQUIRE(tp.val(out).v == tp.val(x).v);
}

TEST_CASE("maconv: mirrored parameters give a half-swap equivariance") {
  RngStream rng(65);
  ParamStore<double> ps;
  MaConvLayer<double> ma("ma", 4);
  ma.init(ps, rng);
  for (const char* n : {"ma.pred_a2.w", "ma.pred_b2.w"}) orthogonal_fill(ps.param(n), rng, 0.5);

  ParamStore<double> mirrored = ps;
  auto swap_params = [&](const std::string& a, const std::string& b) {
    std::swap(mirrored.params.at(a + ".w").value, mirrored.params.at(b + ".w").value);
    std::swap(mirrored.params.at(a + ".b").value, mirrored.params.at(b + ".b").value);
  };
  swap_params("ma.pred_a1", "ma.pred_b1");
  swap_params("ma.pred_a2", "ma.pred_b2");
  swap_params("ma.main_a", "ma.main_b");

  auto x = test::random_tensor<double>({4, 5, 5}, rng);
  BasicTensor<double> xs({4, 5, 5});
  const std::size_t half = 2 * 25;
  std::copy(x.v.begin() + static_cast<std::ptrdiff_t>(half), x.v.end(), xs.v.begin());
  std::copy(x.v.begin(), x.v.begin() + static_cast<std::ptrdiff_t>(half),
            xs.v.begin() + static_cast<std::ptrdiff_t>(half));

  Tape<double> tp;
  Binding<double> bd(tp, ps, false);
  auto out = tp.val(ma.apply(bd, tp.leaf(x)));

  Tape<double> tpm;
  Binding<double> bdm(tpm, mirrored, false);
  auto out_m = tpm.val(ma.apply(bdm, tpm.leaf(xs)));

  for (std::size_t i = 0; i < half; ++i) {
    REQUIRE(out_m.v[i] == Catch::Approx(out.v[half + i]).margin(1e-12));
    REQUIRE(out_m.v[half + i] == Catch::Approx(out.v[i]).margin(1e-12));
  }
}

TEST_CASE("maconv: gradients match finite differences") {
  RngStream rng(66);
  ParamStore<double> ps;
  MaConvLayer<double> ma("ma", 4);
  ma.init(ps, rng);
  for (const char* n : {"ma.pred_a2.w", "ma.pred_b2.w"}) orthogonal_fill(ps.param(n), rng, 0.5);
  auto x = test::random_tensor<double>({4, 4, 4}, rng);
  auto tgt = test::random_tensor<double>({4, 4, 4}, rng);

  double err = test::gradcheck_params(ps, [&](bool with_grad) {
    Tape<double> tp;
    Binding<double> bd(tp, ps, true);
    auto loss = tp.mse(ma.apply(bd, tp.leaf(x)), tp.leaf(tgt));
    if (with_grad) {
      tp.backward(loss);
      bd.pull_grads();
    }
    return tp.val(loss).v[0];
  });
  REQUIRE(err < 1e-3);
  REQUIRE_THROWS_AS(MaConvLayer<double>("bad", 5), Error);
}

TEST_CASE("dablock: all-identity sublayers pass features through, shape is preserved") {
  RngStream rng(67);
  ParamStore<double> ps;
  DaBlock<double> da("da", 4, 2);
  da.init(ps, rng);
  make_identity_conv(ps, "da.ma1.main_a", 2, 3);
  make_identity_conv(ps, "da.ma1.main_b", 2, 3);
  make_identity_conv(ps, "da.ma2.main_a", 2, 3);
  make_identity_conv(ps, "da.ma2.main_b", 2, 3);
  make_identity_conv(ps, "da.split_l", 2, 3);
  make_identity_conv(ps, "da.split_r", 2, 3);

  Tape<double> tp;
  Binding<double> bd(tp, ps, false);
  // Non-negative features so the interleaved ReLUs are transparent.
  auto xval = test::random_tensor<double>({4, 5, 5}, rng);
  for (double& v : xval.v) v = std::abs(v) + 0.1;
  auto x = tp.leaf(xval);
  auto cond = tp.leaf(test::random_tensor<double>({2, 5, 5}, rng));
  auto out = da.apply(bd, x, cond, /*use_sft=*/true);
  REQUIRE(tp.val(out).shape == xval.shape);
  REQUIRE(tp.val(out).v == xval.v);
}

TEST_CASE("dablock: full block passes the finite-difference check") {
  RngStream rng(68);
  ParamStore<double> ps;
  DaBlock<double> da("da", 4, 2);
  da.init(ps, rng);
  auto x = test::random_tensor<double>({4, 4, 4}, rng);
  auto cond = test::random_tensor<double>({2, 4, 4}, rng);
  auto tgt = test::random_tensor<double>({4, 4, 4}, rng);

  double err = test::gradcheck_params(ps, [&](bool with_grad) {
    Tape<double> tp;
    Binding<double> bd(tp, ps, true);
    auto loss = tp.mse(da.apply(bd, tp.leaf(x), tp.leaf(cond), true), tp.leaf(tgt));
    if (with_grad) {
      tp.backward(loss);
      bd.pull_grads();
    }
    return tp.val(loss).v[0];
  });
  REQUIRE(err < 1e-3);
}

TEST_CASE("dkenet: softmax head yields normalized kernels at scaled dims") {
  RngStream rng(69);
  DkenetConfig cfg;
  cfg.in_channels = 3;
  cfg.base_channels = 8;
  cfg.kernel_side = 5;
  cfg.scale = 4;
  cfg.depth_branch_channels = 4;
  Dkenet<float> net(cfg);
  ParamStore<float> ps;
  RngStream init(70);
  net.init(ps, init);
  // Perturb so the softmax sees non-trivial logits.
  for (auto& [name, e] : ps.params)
    for (float& v : e.value.v) v += 0.01f * static_cast<float>(rng.normal());

  Image lr = test::random_image(3, 8, 8, rng);
  DepthMap d(8, 8);
  for (float& v : d.t.v) v = static_cast<float>(rng.uniform());

  KernelField f = dkenet_estimate(net, ps, lr, d);
  REQUIRE(f.height() == 32);
  REQUIRE(f.width() == 32);
  REQUIRE(f.kdim() == 25);
  REQUIRE(f.max_norm_deviation() < 1e-5f);  // 1024 per-pixel kernels
  for (float v : f.t.v) REQUIRE(v >= 0.0f);

  KernelField g = dkenet_estimate(net, ps, lr, d);
  REQUIRE(f.t.v == g.t.v);  // bitwise determinism
}

TEST_CASE("dkenet: constant inputs give a spatially constant field") {
  RngStream rng(71);
  DkenetConfig cfg = tiny_config();
  cfg.in_channels = 3;
  cfg.scale = 2;
  Dkenet<float> net(cfg);
  ParamStore<float> ps;
  net.init(ps, rng);
  for (auto& [name, e] : ps.params)
    for (float& v : e.value.v) v += 0.05f * static_cast<float>(rng.normal());

  Image lr(3, 8, 8);
  for (float& v : lr.t.v) v = 0.35f;
  DepthMap d(8, 8);
  for (float& v : d.t.v) v = 0.6f;

  KernelField f = dkenet_estimate(net, ps, lr, d);
  std::vector<float> k0(static_cast<std::size_t>(f.kdim()));
  f.pixel_kernel(0, 0, k0.data());
  std::vector<float> k(static_cast<std::size_t>(f.kdim()));
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x) {
      f.pixel_kernel(y, x, k.data());
      for (int i = 0; i < f.kdim(); ++i)
        REQUIRE(k[static_cast<std::size_t>(i)] ==
                Catch::Approx(k0[static_cast<std::size_t>(i)]).margin(1e-6));
    }
}

TEST_CASE("dkenet: loss basics and the end-to-end gradient check") {
  RngStream rng(72);
  DkenetConfig cfg = tiny_config();
  Dkenet<double> net(cfg);
  ParamStore<double> ps;
  net.init(ps, rng);

  auto lr = test::random_tensor<double>({2, 4, 4}, rng, 0.3);
  for (double& v : lr.v) v = std::abs(v);
  auto depth = test::random_tensor<double>({1, 4, 4}, rng, 0.3);
  for (double& v : depth.v) v = std::min(1.0, std::abs(v));

  // A normalized random target field.
  BasicTensor<double> gt({9, 4, 4});
  RngStream grng(73);
  for (int p = 0; p < 16; ++p) {
    double sum = 0;
    for (int k = 0; k < 9; ++k) {
      double e = std::exp(grng.normal());
      gt.v[static_cast<std::size_t>(k) * 16 + p] = e;
      sum += e;
    }
    for (int k = 0; k < 9; ++k) gt.v[static_cast<std::size_t>(k) * 16 + p] /= sum;
  }

  {
    Tape<double> tp;
    auto same = dkenet_loss(tp, tp.leaf(gt), tp.leaf(gt));
    REQUIRE(tp.val(same).v[0] == 0.0);
  }

  double err = test::gradcheck_params(ps, [&](bool with_grad) {
    Tape<double> tp;
    Binding<double> bd(tp, ps, true);
    auto field = net.forward(bd, tp.leaf(lr), tp.leaf(depth));
    auto loss = dkenet_loss(tp, field, tp.leaf(gt));
    if (with_grad) {
      tp.backward(loss);
      bd.pull_grads();
    }
    return tp.val(loss).v[0];
  }, /*entries_per_tensor=*/4);
  REQUIRE(err < 1e-3);
}

TEST_CASE("dkenet: dimension mismatches are rejected") {
  RngStream rng(74);
  DkenetConfig cfg = tiny_config();
  cfg.in_channels = 3;
  Dkenet<float> net(cfg);
  ParamStore<float> ps;
  net.init(ps, rng);
  Image lr = test::random_image(3, 4, 4, rng);
  DepthMap d(6, 6);
  REQUIRE_THROWS_AS(dkenet_estimate(net, ps, lr, d), Error);
}
