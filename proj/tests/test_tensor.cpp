#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "cascade/checkpoint.hpp"
#include "cascade/optim.hpp"
#include "cascade/tensor.hpp"
#include "testutil.hpp"

using namespace cascade;

TEST_CASE("conv2d identity kernel passes input through") {
  Rng rng(1);
  Tensor x = Tensor::randn({1, 1, 3, 3}, rng);
  Tensor k = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor y = conv2d(x, k, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  for (size_t i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("conv2d all-ones 3x3, pad 1: center equals direct summation") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(x, k, 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  // direct summation oracle over the same index space
  auto direct = [&](int oy, int ox) {
    double acc = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const int sy = oy - 1 + i, sx = ox - 1 + j;
        if (sy >= 0 && sy < 3 && sx >= 0 && sx < 3) acc += 1.0;
      }
    return acc;
  };
  CHECK(direct(1, 1) == 9.0);
  CHECK(y.data()[4] == doctest::Approx(9.0));
  for (int oy = 0; oy < 3; ++oy)
    for (int ox = 0; ox < 3; ++ox)
      CHECK(y.data()[static_cast<size_t>(oy * 3 + ox)] == doctest::Approx(direct(oy, ox)));
}

TEST_CASE("conv2d rejects channel mismatch with both shapes in message") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor k = Tensor::zeros({3, 5, 3, 3});
  try {
    conv2d(x, k, 1, 1);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,2,4,4]") != std::string::npos);
    CHECK(msg.find("[3,5,3,3]") != std::string::npos);
  }
}

TEST_CASE("conv2d gradients match central finite differences") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    Tensor x = Tensor::randn({2, 3, 8, 8}, rng, 1.0, true);
    Tensor k = Tensor::randn({4, 3, 3, 3}, rng, 0.3, true);
    Rng target_rng(7);
    Tensor target = Tensor::randn({2, 4, 8, 8}, target_rng);
    auto loss = [&]() { return mse_loss(conv2d(x, k, 1, 1), target); };
    Rng probe(seed);
    CHECK(testutil::max_grad_rel_error(loss, {x, k}, probe) < 1e-3);
  }
}

TEST_CASE("conv2d strided shape formula") {
  Tensor x = Tensor::zeros({1, 1, 9, 11});
  Tensor k = Tensor::zeros({2, 1, 3, 3});
  Tensor y = conv2d(x, k, 2, 1);
  CHECK(y.shape() == Shape{1, 2, (9 + 2 - 3) / 2 + 1, (11 + 2 - 3) / 2 + 1});
}

TEST_CASE("group_norm constant input with unit gain zero bias is zero") {
  Tensor x = Tensor::full({2, 4, 3, 3}, 5.0);
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});
  Tensor y = group_norm(x, 2, gain, bias);
  for (double v : y.data()) CHECK(std::fabs(v) < 1e-9);
}

TEST_CASE("group_norm normalizes per-group statistics pre-affine") {
  Rng rng(42);
  Tensor x = Tensor::randn({2, 8, 4, 4}, rng, 2.5);
  Tensor gain = Tensor::full({8}, 1.0);
  Tensor bias = Tensor::zeros({8});
  const int groups = 4;
  Tensor y = group_norm(x, groups, gain, bias);
  const int64_t cg = 8 / groups, S = 16, m = cg * S;
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t g = 0; g < groups; ++g) {
      double mean = 0.0, var = 0.0;
      for (int64_t i = 0; i < m; ++i) mean += y.data()[(n * 8 + g * cg) * S + i];
      mean /= static_cast<double>(m);
      for (int64_t i = 0; i < m; ++i) {
        const double d = y.data()[(n * 8 + g * cg) * S + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      CHECK(std::fabs(mean) < 1e-6);
      CHECK(std::fabs(var - 1.0) < 1e-4);
    }
  }
}

TEST_CASE("group_norm rejects indivisible channel count") {
  Tensor x = Tensor::zeros({1, 6, 2, 2});
  Tensor gain = Tensor::full({6}, 1.0);
  Tensor bias = Tensor::zeros({6});
  CHECK_THROWS_AS(group_norm(x, 4, gain, bias), ConfigError);
}

TEST_CASE("group_norm gradients match finite differences") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    Tensor x = Tensor::randn({2, 4, 3, 3}, rng, 1.0, true);
    Tensor gain = Tensor::randn({4}, rng, 0.5, true);
    Tensor bias = Tensor::randn({4}, rng, 0.5, true);
    Rng target_rng(9);
    Tensor target = Tensor::randn({2, 4, 3, 3}, target_rng);
    auto loss = [&]() { return mse_loss(group_norm(x, 2, gain, bias), target); };
    Rng probe(seed);
    CHECK(testutil::max_grad_rel_error(loss, {x, gain, bias}, probe) < 1e-3);
  }
}

TEST_CASE("silu values and gradient") {
  Tensor x = Tensor::from_data({3}, {0.0, 20.0, -1.0});
  Tensor y = silu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(std::fabs(y.data()[1] - 20.0) < 1e-6);

  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(300 + seed);
    Tensor v = Tensor::randn({24}, rng, 2.0, true);
    auto loss = [&]() { return mean_all(mul(silu(v), silu(v))); };
    Rng probe(seed);
    CHECK(testutil::max_grad_rel_error(loss, {v}, probe) < 1e-4);
  }
}

TEST_CASE("attention with a single key returns the value row for every query") {
  Rng rng(5);
  Tensor q = Tensor::randn({2, 4, 6}, rng);
  Tensor k = Tensor::randn({2, 1, 6}, rng);
  Tensor v = Tensor::randn({2, 1, 6}, rng);
  Tensor out = attention(q, k, v);
  REQUIRE(out.shape() == Shape{2, 4, 6});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t t = 0; t < 4; ++t)
      for (int64_t d = 0; d < 6; ++d)
        CHECK(out.data()[(n * 4 + t) * 6 + d] == doctest::Approx(v.data()[n * 6 + d]).epsilon(1e-9));
}

TEST_CASE("attention weights rows sum to one") {
  Rng rng(6);
  Tensor q = Tensor::randn({2, 3, 8}, rng);
  Tensor k = Tensor::randn({2, 5, 8}, rng);
  Tensor logits = scale(bmm_nt(q, k), 1.0 / std::sqrt(8.0));
  Tensor w = softmax_lastdim(logits);
  for (int64_t r = 0; r < 2 * 3; ++r) {
    double s = 0.0;
    for (int64_t d = 0; d < 5; ++d) s += w.data()[r * 5 + d];
    CHECK(std::fabs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("attention rejects mismatched dims") {
  Tensor q = Tensor::zeros({2, 3, 8});
  Tensor k = Tensor::zeros({2, 5, 7});
  Tensor v = Tensor::zeros({2, 5, 7});
  CHECK_THROWS_AS(attention(q, k, v), DimensionError);
}

TEST_CASE("attention gradients match finite differences") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(400 + seed);
    Tensor q = Tensor::randn({2, 3, 4}, rng, 1.0, true);
    Tensor k = Tensor::randn({2, 5, 4}, rng, 1.0, true);
    Tensor v = Tensor::randn({2, 5, 4}, rng, 1.0, true);
    Rng target_rng(11);
    Tensor target = Tensor::randn({2, 3, 4}, target_rng);
    auto loss = [&]() { return mse_loss(attention(q, k, v), target); };
    Rng probe(seed);
    CHECK(testutil::max_grad_rel_error(loss, {q, k, v}, probe) < 1e-3);
  }
}

TEST_CASE("finite-difference checks across remaining differentiable ops") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(500 + seed);
    Rng probe(seed);
    Rng target_rng(13);

    SUBCASE("conv1d dilated") {
      Tensor x = Tensor::randn({2, 3, 12}, rng, 1.0, true);
      Tensor k = Tensor::randn({4, 3, 3}, rng, 0.4, true);
      Tensor target = Tensor::randn({2, 4, 12}, target_rng);
      auto loss = [&]() { return mse_loss(conv1d(x, k, 1, 2, 2), target); };
      CHECK(testutil::max_grad_rel_error(loss, {x, k}, probe) < 1e-3);
    }
    SUBCASE("conv_transpose1d") {
      Tensor x = Tensor::randn({2, 3, 6}, rng, 1.0, true);
      Tensor k = Tensor::randn({3, 2, 8}, rng, 0.4, true);
      Tensor target = Tensor::randn({2, 2, 6 * 4}, target_rng);
      auto loss = [&]() { return mse_loss(conv_transpose1d(x, k, 4, 2), target); };
      CHECK(testutil::max_grad_rel_error(loss, {x, k}, probe) < 1e-3);
    }
    SUBCASE("linear and layer_norm") {
      Tensor x = Tensor::randn({3, 4, 6}, rng, 1.0, true);
      Tensor w = Tensor::randn({6, 5}, rng, 0.5, true);
      Tensor b = Tensor::randn({5}, rng, 0.5, true);
      Tensor g2 = Tensor::randn({5}, rng, 0.3, true);
      Tensor b2 = Tensor::randn({5}, rng, 0.3, true);
      Tensor target = Tensor::randn({3, 4, 5}, target_rng);
      auto loss = [&]() { return mse_loss(layer_norm(linear(x, w, b), g2, b2), target); };
      CHECK(testutil::max_grad_rel_error(loss, {x, w, b, g2, b2}, probe) < 1e-3);
    }
    SUBCASE("film") {
      Tensor x = Tensor::randn({2, 4, 7}, rng, 1.0, true);
      Tensor gamma = Tensor::randn({2, 4}, rng, 0.5, true);
      Tensor beta = Tensor::randn({2, 4}, rng, 0.5, true);
      Tensor target = Tensor::randn({2, 4, 7}, target_rng);
      auto loss = [&]() { return mse_loss(film(x, gamma, beta), target); };
      CHECK(testutil::max_grad_rel_error(loss, {x, gamma, beta}, probe) < 1e-3);
    }
    SUBCASE("pool upsample concat transpose mean") {
      Tensor x = Tensor::randn({2, 3, 4, 4}, rng, 1.0, true);
      Tensor y = Tensor::randn({2, 2, 8, 8}, rng, 1.0, true);
      Tensor target = Tensor::randn({2, 5, 8, 8}, target_rng);
      auto loss = [&]() {
        Tensor up = upsample_nearest2d(avg_pool2d(x, 2), 4);
        return mse_loss(concat_channels(up, y), target);
      };
      CHECK(testutil::max_grad_rel_error(loss, {x, y}, probe) < 1e-3);
    }
    SUBCASE("elementwise chain") {
      Tensor x = Tensor::randn({18}, rng, 0.8, true);
      Tensor y = Tensor::randn({18}, rng, 0.8, true);
      auto loss = [&]() {
        Tensor z = add(mul(tanh_op(x), leaky_relu(y, 0.1)), scale(x, 0.3));
        Tensor w = log_op(clamp_min(add_scalar(mul(z, z), 0.1), 0.2));
        return add(mean_all(sqrt_op(add_scalar(abs_op(w), 1.0))), l1_loss(z, y));
      };
      CHECK(testutil::max_grad_rel_error(loss, {x, y}, probe) < 1e-3);
    }
    SUBCASE("embedding and mean_axis1") {
      Tensor table = Tensor::randn({7, 5}, rng, 0.7, true);
      std::vector<std::vector<int>> ids = {{0, 3, 6}, {2, 2, 5}};
      Tensor target = Tensor::randn({2, 5}, target_rng);
      auto loss = [&]() { return mse_loss(mean_axis1(embedding(table, ids)), target); };
      CHECK(testutil::max_grad_rel_error(loss, {table}, probe) < 1e-3);
    }
  }
}

TEST_CASE("forward passes are bit-deterministic") {
  Rng rng1(77), rng2(77);
  Tensor x1 = Tensor::randn({2, 3, 8, 8}, rng1);
  Tensor k1 = Tensor::randn({4, 3, 3, 3}, rng1);
  Tensor x2 = Tensor::randn({2, 3, 8, 8}, rng2);
  Tensor k2 = Tensor::randn({4, 3, 3, 3}, rng2);
  CHECK(testutil::bits_equal(x1.data(), x2.data()));
  Tensor y1 = conv2d(silu(x1), k1, 1, 1);
  Tensor y2 = conv2d(silu(x2), k2, 1, 1);
  CHECK(testutil::bits_equal(y1.data(), y2.data()));
}

TEST_CASE("tape linearity: gradient of a sum equals sum of gradients") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(600 + seed);
    Tensor x = Tensor::randn({2, 2, 4, 4}, rng, 1.0, true);
    Tensor k = Tensor::randn({2, 2, 3, 3}, rng, 0.5, true);

    auto f = [&]() { return mean_all(conv2d(x, k, 1, 1)); };
    auto g = [&]() { return mean_all(mul(silu(x), x)); };

    x.zero_grad();
    k.zero_grad();
    add(f(), g()).backward();
    auto grad_sum = x.grad();

    x.zero_grad();
    k.zero_grad();
    f().backward();
    auto grad_f = x.grad();
    x.zero_grad();
    g().backward();
    auto grad_g = x.grad();

    for (size_t i = 0; i < grad_sum.size(); ++i) {
      CHECK(grad_sum[i] == doctest::Approx(grad_f[i] + grad_g[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("non-finite op output is surfaced as NumericalError") {
  Tensor x = Tensor::from_data({2}, {0.0, 1.0});
  CHECK_THROWS_AS(log_op(x), NumericalError);
  CHECK_THROWS_AS(Tensor::from_data({1}, {std::nan("")}), NumericalError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged, moments decay") {
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  AdamState st;
  st.learning_rate = 0.1;
  const std::vector<double> zeros(3, 0.0);
  adam_step(p, zeros, st);
  CHECK(p.data() == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(st.step_count == 1);

  st.first_moment = {1.0, 1.0, 1.0};
  st.second_moment = {1.0, 1.0, 1.0};
  adam_step(p, zeros, st);
  CHECK(st.first_moment[0] == doctest::Approx(0.9));
  CHECK(st.second_moment[0] == doctest::Approx(0.999));
  CHECK(st.step_count == 2);
}

TEST_CASE("adam: first-step magnitude is learning_rate to first order") {
  // Closed form at t=1: delta = lr * g / (|g| + eps) ~ lr * sign(g).
  Tensor p = Tensor::from_data({2}, {0.0, 0.0}, true);
  AdamState st;
  st.learning_rate = 0.05;
  adam_step(p, {0.7, -1.3}, st);
  CHECK(std::fabs(std::fabs(p.data()[0]) / st.learning_rate - 1.0) < 1e-3);
  CHECK(std::fabs(std::fabs(p.data()[1]) / st.learning_rate - 1.0) < 1e-3);
  CHECK(p.data()[0] < 0.0);
  CHECK(p.data()[1] > 0.0);
}

TEST_CASE("adam: 200 steps on x^2 from x=1 reaches |x| < 0.05") {
  Tensor p = Tensor::from_data({1}, {1.0}, true);
  AdamState st;
  st.learning_rate = 0.1;
  for (int i = 0; i < 200; ++i) {
    const double g = 2.0 * p.data()[0];
    adam_step(p, {g}, st);
  }
  CHECK(std::fabs(p.data()[0]) < 0.05);
  CHECK(st.step_count == 200);
}

TEST_CASE("adam rejects non-finite gradients") {
  Tensor p = Tensor::from_data({1}, {1.0}, true);
  AdamState st;
  CHECK_THROWS_AS(adam_step(p, {std::numeric_limits<double>::infinity()}, st), NumericalError);
  CHECK(p.data()[0] == 1.0);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "casc_ckpt_test";
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.ckpt").string();
  const std::string p2 = (dir / "b.ckpt").string();

  Rng rng(31);
  ParamStore store;
  store.add("m.weight", Tensor::randn({3, 2, 3, 3}, rng));
  store.add("m.bias", Tensor::randn({3}, rng));
  save_checkpoint(p1, store);

  ParamStore store2;
  Rng rng2(99);
  store2.add("m.weight", Tensor::randn({3, 2, 3, 3}, rng2));
  store2.add("m.bias", Tensor::randn({3}, rng2));
  load_checkpoint_into(p1, store2);
  save_checkpoint(p2, store2);

  CHECK(file_fingerprint(p1) == file_fingerprint(p2));

  // loaded doubles are exact f32 values
  for (size_t i = 0; i < store2.at("m.bias").data().size(); ++i) {
    const double v = store2.at("m.bias").data()[i];
    CHECK(static_cast<double>(static_cast<float>(v)) == v);
  }

  ParamStore wrong;
  wrong.add("m.weight", Tensor::zeros({3, 2, 3, 3}));
  CHECK_THROWS_AS(load_checkpoint_into(p1, wrong), StateError);
  fs::remove_all(dir);
}

TEST_CASE("grad buffer matches data length; shape/data invariant enforced") {
  Rng rng(8);
  Tensor x = Tensor::randn({4, 5}, rng, 1.0, true);
  mean_all(x).backward();
  CHECK(x.grad().size() == x.data().size());
  CHECK_THROWS_AS(Tensor::from_data({2, 3}, {1.0}), DimensionError);
}
