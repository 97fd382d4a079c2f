#include <catch2/catch_amalgamated.hpp>

#include "ssr/nn/modules.hpp"
#include "ssr/nn/tape.hpp"
#include "support/test_util.hpp"

using namespace ssr;
using Var = Tape<double>::Var;

namespace {

// Runs fn twice: with_grad pass leaves gradients in ps; value pass returns
// the scalar. fn receives a fresh tape+binding each call.
double check_op(ParamStore<double>& ps,
                const std::function<Tape<double>::Var(Tape<double>&, Binding<double>&)>& build,
                int entries = 8) {
  return test::gradcheck_params(ps, [&](bool with_grad) {
    Tape<double> tp;
    Binding<double> bd(tp, ps, /*train=*/true);
    auto loss = build(tp, bd);
    double value = tp.val(loss).v[0];
    if (with_grad) {
      tp.backward(loss);
      bd.pull_grads();
    }
    return value;
  }, entries);
}

}  // namespace

TEST_CASE("ops: conv2d gradients match finite differences") {
  RngStream rng(41);
  ParamStore<double> ps;
  auto& w = ps.declare("w", {3, 2, 3, 3});
  orthogonal_fill(w, rng, 1.0);
  ps.declare("b", {3});
  auto x = test::random_tensor<double>({2, 4, 4}, rng);
  auto tgt = test::random_tensor<double>({3, 4, 4}, rng);

  double err = check_op(ps, [&](Tape<double>& tp, Binding<double>& bd) {
    auto y = tp.conv2d(tp.leaf(x), bd("w"), bd("b"));
    return tp.mse(y, tp.leaf(tgt));
  });
  REQUIRE(err < 1e-6);
}

TEST_CASE("ops: conv2d input gradients via a learnable front") {
  RngStream rng(42);
  ParamStore<double> ps;
  auto& w1 = ps.declare("w1", {2, 2, 1, 1});
  orthogonal_fill(w1, rng, 1.0);
  auto& w2 = ps.declare("w2", {2, 2, 3, 3});
  orthogonal_fill(w2, rng, 1.0);
  auto x = test::random_tensor<double>({2, 5, 4}, rng);
  auto tgt = test::random_tensor<double>({2, 5, 4}, rng);

  double err = check_op(ps, [&](Tape<double>& tp, Binding<double>& bd) {
    Var b;
    auto h = tp.conv2d(tp.leaf(x), bd("w1"), b);
    auto y = tp.conv2d(h, bd("w2"), b);
    return tp.mse(y, tp.leaf(tgt));
  });
  REQUIRE(err < 1e-6);
}

TEST_CASE("ops: activation, pooling and resampling gradients") {
  RngStream rng(43);
  ParamStore<double> ps;
  auto& w = ps.declare("w", {4, 3, 3, 3});
  orthogonal_fill(w, rng, 1.0);
  ps.declare("b", {4});
  auto x = test::random_tensor<double>({3, 4, 4}, rng);

  SECTION("relu + avg_pool") {
    auto tgt = test::random_tensor<double>({4, 2, 2}, rng);
    double err = check_op(ps, [&](Tape<double>& tp, Binding<double>& bd) {
      auto y = tp.avg_pool(tp.relu(tp.conv2d(tp.leaf(x), bd("w"), bd("b"))), 2);
      return tp.mse(y, tp.leaf(tgt));
    });
    REQUIRE(err < 1e-6);
  }
  SECTION("leaky_relu + bilinear") {
    auto tgt = test::random_tensor<double>({4, 6, 7}, rng);
    double err = check_op(ps, [&](Tape<double>& tp, Binding<double>& bd) {
      auto y = tp.bilinear(tp.leaky_relu(tp.conv2d(tp.leaf(x), bd("w"), bd("b")), 0.2), 6, 7);
      return tp.mse(y, tp.leaf(tgt));
    });
    REQUIRE(err < 1e-5);  // leaky_relu kink crossings dominate the FD error
  }
  SECTION("nearest_up + pixel_shuffle") {
    auto tgt = test::random_tensor<double>({1, 8, 8}, rng);
    double err = check_op(ps, [&](Tape<double>& tp, Binding<double>& bd) {
      auto h = tp.conv2d(tp.leaf(x), bd("w"), bd("b"));  // [4,4,4]
      auto up = tp.pixel_shuffle(h, 2);                  // [1,8,8]
      auto y = tp.nearest_up(tp.avg_pool(up, 2), 2);     // [1,8,8]
      return tp.mse(y, tp.leaf(tgt));
    });
    REQUIRE(err < 1e-6);
  }
}

TEST_CASE("ops: softmax over channels normalizes and differentiates") {
  RngStream rng(44);
  ParamStore<double> ps;
  auto& w = ps.declare("w", {5, 2, 3, 3});
  orthogonal_fill(w, rng, 1.0);
  ps.declare("b", {5});
  auto x = test::random_tensor<double>({2, 3, 3}, rng);
  auto tgt = test::random_tensor<double>({5, 3, 3}, rng, 0.3);

  {
    Tape<double> tp;
    Binding<double> bd(tp, ps, false);
    auto s = tp.softmax_ch(tp.conv2d(tp.leaf(x), bd("w"), bd("b")));
    const auto& sv = tp.val(s);
    for (int p = 0; p < 9; ++p) {
      double sum = 0;
      for (int c = 0; c < 5; ++c) sum += sv.v[static_cast<std::size_t>(c) * 9 + p];
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    }
  }
  double err = check_op(ps, [&](Tape<double>& tp, Binding<double>& bd) {
    auto s = tp.softmax_ch(tp.conv2d(tp.leaf(x), bd("w"), bd("b")));
    return tp.mse(s, tp.leaf(tgt));
  });
  REQUIRE(err < 1e-6);
}

TEST_CASE("ops: channel arithmetic gradients") {
  RngStream rng(45);
  ParamStore<double> ps;
  ps.declare("bias", {4});
  ps.declare("scale", {4});
  ps.declare("shift", {4});
  auto& w = ps.declare("w", {4, 4, 1, 1});
  orthogonal_fill(w, rng, 1.0);
  auto x = test::random_tensor<double>({4, 3, 3}, rng);
  auto tgt = test::random_tensor<double>({4, 3, 3}, rng);

  double err = check_op(ps, [&](Tape<double>& tp, Binding<double>& bd) {
    Var none;
    auto h = tp.conv2d(tp.leaf(x), bd("w"), none);
    h = tp.add_channel_bias(h, bd("bias"));
    h = tp.channel_scale_shift(h, bd("scale"), bd("shift"));
    auto a = tp.slice_ch(h, 0, 2);
    auto b = tp.slice_ch(h, 2, 2);
    auto y = tp.concat_ch(tp.mul(a, b), tp.sub(a, b));
    return tp.mse(y, tp.leaf(tgt));
  });
  REQUIRE(err < 1e-6);
}

TEST_CASE("ops: linear and pooled-vector gradients") {
  RngStream rng(46);
  ParamStore<double> ps;
  LinearLayer<double> l1{"l1", 3, 8, true};
  LinearLayer<double> l2{"l2", 8, 2, true};
  l1.init(ps, rng);
  l2.init(ps, rng);
  auto x = test::random_tensor<double>({3, 4, 4}, rng);
  auto tgt = test::random_tensor<double>({2}, rng);

  double err = check_op(ps, [&](Tape<double>& tp, Binding<double>& bd) {
    auto pooled = tp.global_avg_pool(tp.leaf(x));
    auto y = l2.apply(bd, tp.relu(l1.apply(bd, pooled)));
    return tp.mse(y, tp.leaf(tgt));
  });
  REQUIRE(err < 1e-6);
}

TEST_CASE("ops: batch_norm training and inference gradients") {
  RngStream rng(47);
  ParamStore<double> ps;
  auto& w = ps.declare("w", {3, 2, 3, 3});
  orthogonal_fill(w, rng, 1.0);
  ps.declare("b", {3});
  BatchNormLayer<double> bn{"bn", 3};
  bn.init(ps);
  auto x = test::random_tensor<double>({2, 4, 4}, rng);
  auto tgt = test::random_tensor<double>({3, 4, 4}, rng);

  SECTION("training mode") {
    double err = check_op(ps, [&](Tape<double>& tp, Binding<double>& bd) {
      auto h = tp.conv2d(tp.leaf(x), bd("w"), bd("b"));
      auto y = bn.apply(bd, h);
      return tp.mse(y, tp.leaf(tgt));
    });
    REQUIRE(err < 1e-4);  // variance terms amplify the FD truncation error
  }
  SECTION("inference mode uses running stats") {
    // Train-mode passes to populate the buffers first.
    {
      Tape<double> tp;
      Binding<double> bd(tp, ps, true);
      bn.apply(bd, tp.conv2d(tp.leaf(x), bd("w"), bd("b")));
    }
    double err = test::gradcheck_params(ps, [&](bool with_grad) {
      Tape<double> tp;
      Binding<double> bd(tp, ps, false);  // eval-mode BN
      Binding<double> bd_train(tp, ps, true);
      auto h = tp.conv2d(tp.leaf(x), bd_train("w"), bd_train("b"));
      BnStats<double> st{&ps.buffers.at("bn.running_mean"), &ps.buffers.at("bn.running_var")};
      auto y = tp.batch_norm(h, st, /*training=*/false);
      auto loss = tp.mse(y, tp.leaf(tgt));
      if (with_grad) {
        tp.backward(loss);
        bd_train.pull_grads();
      }
      return tp.val(loss).v[0];
    });
    REQUIRE(err < 1e-6);
  }
  SECTION("constant-per-channel input maps to zero in training mode") {
    Tape<double> tp;
    Binding<double> bd(tp, ps, true);
    BasicTensor<double> c({3, 4, 4});
    for (int ch = 0; ch < 3; ++ch)
      for (int i = 0; i < 16; ++i) c.v[static_cast<std::size_t>(ch) * 16 + i] = 0.5 + ch;
    auto y = bn.apply(bd, tp.leaf(c));
    for (double v : tp.val(y).v) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("ops: reductions (l1, sum_sq, mean_abs_multi) gradients") {
  RngStream rng(48);
  ParamStore<double> ps;
  auto& w = ps.declare("w", {2, 2, 3, 3});
  orthogonal_fill(w, rng, 1.0);
  auto x = test::random_tensor<double>({2, 4, 4}, rng);
  auto tgt = test::random_tensor<double>({2, 4, 4}, rng);

  double err = check_op(ps, [&](Tape<double>& tp, Binding<double>& bd) {
    Var none;
    auto h = tp.conv2d(tp.leaf(x), bd("w"), none);
    auto a = tp.l1(h, tp.leaf(tgt));
    auto b = tp.scale(tp.sum_sq(h), 0.01);
    auto c = tp.mean_abs_multi({h, tp.mul(h, h)});
    return tp.add(tp.add(a, b), c);
  });
  REQUIRE(err < 1e-6);
}

TEST_CASE("orthogonal init produces orthonormal rows or columns") {
  RngStream rng(49);
  BasicTensor<double> w({4, 2, 3, 3});  // 4 rows of length 18 -> orthonormal rows
  orthogonal_fill(w, rng, 1.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j <= i; ++j) {
      double dot = 0;
      for (int l = 0; l < 18; ++l) dot += w.v[static_cast<std::size_t>(i) * 18 + l] * w.v[static_cast<std::size_t>(j) * 18 + l];
      REQUIRE(dot == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-10));
    }
}

TEST_CASE("adam: zero learning rate leaves parameters bit-identical") {
  RngStream rng(50);
  ParamStore<float> ps;
  auto& w = ps.declare("w", {8});
  for (int i = 0; i < 8; ++i) w(i) = static_cast<float>(rng.normal());
  auto snapshot = w.v;
  for (int i = 0; i < 8; ++i) ps.params.at("w").grad(i) = static_cast<float>(rng.normal());
  ps.adam_step(0.0f, 1);
  REQUIRE(ps.param("w").v == snapshot);
}

TEST_CASE("checkpoints: save/load round trip preserves params and buffers") {
  auto dir = test::temp_dir("ckpt");
  RngStream rng(51);
  ParamStore<float> ps;
  auto& w = ps.declare("layer.w", {3, 2});
  for (float& v : w.v) v = static_cast<float>(rng.normal());
  ps.buffer("bn.running_mean", {3}, 0.25f);
  ps.config_hash = "deadbeef";
  ps.save(dir);

  ParamStore<float> back;
  back.load(dir);
  REQUIRE(back.config_hash == "deadbeef");
  REQUIRE(back.param("layer.w").v == w.v);
  REQUIRE(back.buffers.at("bn.running_mean").v[0] == 0.25f);

  ParamStore<float> wrong;
  wrong.declare("layer.w", {2, 2});
  REQUIRE_THROWS_AS(wrong.load(dir), Error);

  ParamStore<float> missing;
  REQUIRE_THROWS_AS(missing.load(dir + "/nope"), Error);
}

TEST_CASE("tape: inference mode records no backward work") {
  RngStream rng(52);
  ParamStore<float> ps;
  Conv2dLayer<float> conv{"c", 2, 2, 3, true};
  conv.init(ps, rng);
  Tape<float> tp;
  Binding<float> bd(tp, ps, /*train=*/false);
  auto x = tp.leaf(test::random_tensor<float>({2, 6, 6}, rng));
  auto y = conv.apply(bd, x);
  REQUIRE_FALSE(tp.needs_grad(y));
}
