#include <catch2/catch_amalgamated.hpp>

#include "ssr/core/tensor_io.hpp"
#include "ssr/depth/depth.hpp"
#include "support/test_util.hpp"

using namespace ssr;

TEST_CASE("synth_depth: single flat plane is constant") {
  DepthMap d = synth_depth({1, 0.0f, 5}, 16, 16);
  for (float v : d.t.v) REQUIRE(v == 0.5f);
}

TEST_CASE("synth_depth: non-constant maps span [0,1] after normalization") {
  DepthMap d = synth_depth({4, 0.8f, 6}, 32, 32);
  float lo = 1e9f, hi = -1e9f;
  for (float v : d.t.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  REQUIRE(lo == Catch::Approx(0.0).margin(1e-6));
  REQUIRE(hi == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("synth_depth: seeded reproducibility") {
  DepthMap a = synth_depth({3, 0.5f, 77}, 16, 16);
  DepthMap b = synth_depth({3, 0.5f, 77}, 16, 16);
  DepthMap c = synth_depth({3, 0.5f, 78}, 16, 16);
  REQUIRE(a.t.v == b.t.v);
  REQUIRE(a.t.v != c.t.v);
  REQUIRE_THROWS_AS(synth_depth({0, 0.5f, 1}, 8, 8), Error);
}

TEST_CASE("resize_depth: identity, constants, and smooth-ramp accuracy") {
  DepthMap d = synth_depth({2, 0.7f, 9}, 12, 12);
  DepthMap same = resize_depth(d, 12, 12);
  REQUIRE(same.t.v == d.t.v);

  DepthMap c(8, 8);
  for (float& v : c.t.v) v = 0.42f;
  DepthMap up = resize_depth(c, 19, 5);
  for (float v : up.t.v) REQUIRE(v == Catch::Approx(0.42).margin(1e-6));

  // 64 -> 16 -> 64 on an analytic ramp. With half-pixel sampling the
  // round trip is exact in the interior; the clamped border contributes
  // 3/126 at the corners, which the bound freezes.
  DepthMap ramp(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) ramp.at(y, x) = (x + y) / 126.0f;
  DepthMap rt = resize_depth(resize_depth(ramp, 16, 16), 64, 64);
  float worst = 0.0f, worst_interior = 0.0f;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      float err = std::abs(rt.at(y, x) - ramp.at(y, x));
      worst = std::max(worst, err);
      if (y >= 2 && y < 62 && x >= 2 && x < 62) worst_interior = std::max(worst_interior, err);
    }
  REQUIRE(worst < 0.025f);
  REQUIRE(worst_interior < 1e-5f);
}

TEST_CASE("oracle: zero corruption or zero blur returns ground truth") {
  RngStream rng(31);
  Image img = test::random_image(3, 16, 16, rng);
  DepthMap gt = synth_depth({3, 0.5f, 41}, 16, 16);

  auto p0 = DepthProvider::oracle(0.0f, 9);
  DepthMap d0 = estimate_depth(img, p0, gt, 1.0f);
  REQUIRE(d0.t.v == gt.t.v);

  auto p1 = DepthProvider::oracle(4.0f, 9);
  DepthMap d1 = estimate_depth(img, p1, gt, 0.0f);
  REQUIRE(d1.t.v == gt.t.v);

  REQUIRE_THROWS_AS(estimate_depth(img, p1, std::nullopt, 0.5f), Error);
}

TEST_CASE("oracle: deterministic and monotone in blur level") {
  RngStream rng(32);
  Image img = test::random_image(3, 32, 32, rng);

  auto p = DepthProvider::oracle(4.0f, 13);
  DepthMap gt = synth_depth({3, 0.6f, 55}, 32, 32);
  DepthMap a = estimate_depth(img, p, gt, 0.7f);
  DepthMap b = estimate_depth(img, p, gt, 0.7f);
  REQUIRE(a.t.v == b.t.v);

  // Mean abs error vs ground truth grows with blur level, averaged over
  // 100 scene seeds.
  double err_hi = 0.0, err_lo = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    DepthMap g = synth_depth({3, 0.6f, 1000 + static_cast<std::uint64_t>(trial)}, 32, 32);
    auto prov = DepthProvider::oracle(4.0f, 2000 + static_cast<std::uint64_t>(trial));
    err_hi += depth_mae(estimate_depth(img, prov, g, 1.0f), g);
    err_lo += depth_mae(estimate_depth(img, prov, g, 0.2f), g);
  }
  REQUIRE(err_hi / 100.0 > err_lo / 100.0);
}

TEST_CASE("external provider: adapter runs the command and normalizes output") {
  auto dir = test::temp_dir("depth_ext");
  Tensor raw({6, 6});
  for (int i = 0; i < 36; ++i) raw.v[static_cast<std::size_t>(i)] = 10.0f + static_cast<float>(i);
  write_tensor(raw, dir + "/fixed.tnsr");

  auto p = DepthProvider::external("cp " + dir + "/fixed.tnsr {output_tnsr_path}", dir + "/work");
  RngStream rng(33);
  Image img = test::random_image(3, 6, 6, rng);
  DepthMap d = estimate_depth(img, p, std::nullopt, 0.0f);
  REQUIRE(d.height() == 6);
  REQUIRE(d.at(0, 0) == Catch::Approx(0.0).margin(1e-6));
  REQUIRE(d.at(5, 5) == Catch::Approx(1.0).margin(1e-6));

  auto bad = DepthProvider::external("false", dir + "/work2");
  REQUIRE_THROWS_AS(estimate_depth(img, bad, std::nullopt, 0.0f), Error);

  std::ofstream(dir + "/junk.tnsr") << "not a tensor";
  auto junk = DepthProvider::external("cp " + dir + "/junk.tnsr {output_tnsr_path}", dir + "/work3");
  try {
    estimate_depth(img, junk, std::nullopt, 0.0f);
    FAIL("expected tensor error");
  } catch (const Error& e) {
    REQUIRE((e.code() == Errc::tnsr_bad_magic || e.code() == Errc::tnsr_truncated));
  }
}
