#include <doctest.h>

#include <random>

#include "gmlab/ops.hpp"
#include "gradcheck.hpp"

using namespace gmlab;

TEST_CASE("activation definitions") {
  CHECK(act_value(Activation::ReLU6, 7.0) == 6.0);
  CHECK(act_value(Activation::ReLU6, -1.0) == 0.0);
  CHECK(act_value(Activation::ReLU6, 3.0) == 3.0);
  CHECK(act_value(Activation::GELU, 0.0) == 0.0);
  CHECK(act_value(Activation::SiLU, 0.0) == 0.0);
  CHECK(act_value(Activation::Identity, -2.5) == -2.5);
  // subgradient 0 at kinks
  CHECK(act_grad(Activation::ReLU, 0.0) == 0.0);
  CHECK(act_grad(Activation::ReLU6, 0.0) == 0.0);
  CHECK(act_grad(Activation::ReLU6, 6.0) == 0.0);
}

TEST_CASE("activation gradients match finite differences away from kinks") {
  // fixed probe points, none within h of a kink
  auto x = Tensor<double>::from_vector({7}, {-3.1, -0.7, 0.4, 1.3, 2.9, 5.2, 7.8});
  for (auto a : kAllActivations) {
    auto loss = [&] {
      auto y = activation(x, a);
      return sum(mul(y, y));
    };
    CHECK(testing::gradcheck_max_rel_error({x}, loss) < 1e-4);
  }
}

TEST_CASE("batch_norm2d normalizes batch statistics") {
  // batch with per-channel mean 5, variance 4
  std::mt19937_64 rng(3);
  Tensor<double> x({4, 2, 4, 4});
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Index i = 0; i < x.numel(); ++i) x.value()[i] = dist(rng);
  // renormalize exactly to mean 5 / var 4 per channel
  const Index C = 2, HW = 16, N = 4;
  for (Index c = 0; c < C; ++c) {
    double s = 0, s2 = 0;
    for (Index n = 0; n < N; ++n)
      for (Index i = 0; i < HW; ++i) s += x.value()[(n * C + c) * HW + i];
    const double mu = s / (N * HW);
    for (Index n = 0; n < N; ++n)
      for (Index i = 0; i < HW; ++i) {
        double& v = x.value()[(n * C + c) * HW + i];
        v -= mu;
        s2 += v * v;
      }
    const double sd = std::sqrt(s2 / (N * HW));
    for (Index n = 0; n < N; ++n)
      for (Index i = 0; i < HW; ++i) {
        double& v = x.value()[(n * C + c) * HW + i];
        v = 5.0 + 2.0 * v / sd;
      }
  }
  auto gamma = Tensor<double>::full({2}, 1.0);
  auto beta = Tensor<double>::full({2}, 0.0);
  auto rm = Tensor<double>::full({2}, 0.0);
  auto rv = Tensor<double>::full({2}, 1.0);
  auto y = batch_norm2d(x, gamma, beta, rm, rv, /*training=*/true);
  for (Index c = 0; c < C; ++c) {
    double s = 0, s2 = 0;
    for (Index n = 0; n < N; ++n)
      for (Index i = 0; i < HW; ++i) {
        const double v = y.value()[(n * C + c) * HW + i];
        s += v;
        s2 += v * v;
      }
    const double mu = s / (N * HW);
    const double var = s2 / (N * HW) - mu * mu;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);  // eps shifts variance by eps/(var+eps)
    // momentum 0.1 running update toward batch stats
    CHECK(rm.value()[c] == doctest::Approx(0.5).epsilon(1e-6));
  }
}

TEST_CASE("batch_norm2d zero-variance input stays finite via epsilon") {
  auto x = Tensor<double>::full({2, 1, 3, 3}, 4.0);
  auto gamma = Tensor<double>::full({1}, 1.0);
  auto beta = Tensor<double>::full({1}, 0.0);
  auto rm = Tensor<double>::full({1}, 0.0);
  auto rv = Tensor<double>::full({1}, 1.0);
  auto y = batch_norm2d(x, gamma, beta, rm, rv, true);
  CHECK(y.all_finite());
  for (Index i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("batch_norm2d eval mode uses running statistics") {
  auto x = Tensor<double>::from_vector({1, 1, 1, 2}, {3.0, 7.0});
  auto gamma = Tensor<double>::full({1}, 2.0);
  auto beta = Tensor<double>::full({1}, 1.0);
  auto rm = Tensor<double>::full({1}, 3.0);
  auto rv = Tensor<double>::full({1}, 4.0);
  auto y = batch_norm2d(x, gamma, beta, rm, rv, /*training=*/false);
  CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(y[1] == doctest::Approx(1.0 + 2.0 * 4.0 / std::sqrt(4.0 + 1e-5)).epsilon(1e-6));
  // eval does not touch the buffers
  CHECK(rm.value()[0] == 3.0);
  CHECK(rv.value()[0] == 4.0);
}

TEST_CASE("batch_norm2d gradients match finite differences") {
  std::mt19937_64 rng(17);
  auto x = testing::random_tensor<double>({3, 2, 3, 3}, rng);
  auto gamma = testing::random_tensor<double>({2}, rng);
  auto beta = testing::random_tensor<double>({2}, rng);
  auto rm = Tensor<double>::full({2}, 0.0);
  auto rv = Tensor<double>::full({2}, 1.0);
  SUBCASE("training mode") {
    auto loss = [&] {
      auto y = batch_norm2d(x, gamma, beta, rm, rv, true);
      return sum(mul(y, y));
    };
    CHECK(testing::gradcheck_max_rel_error({x, gamma, beta}, loss) < 1e-4);
  }
  SUBCASE("eval mode") {
    rm.value()[0] = 0.3;
    rv.value()[1] = 2.0;
    auto loss = [&] {
      auto y = batch_norm2d(x, gamma, beta, rm, rv, false);
      return sum(mul(y, y));
    };
    CHECK(testing::gradcheck_max_rel_error({x, gamma, beta}, loss) < 1e-4);
  }
}

TEST_CASE("layer_norm normalizes across channels and matches finite differences") {
  std::mt19937_64 rng(23);
  auto x = testing::random_tensor<double>({2, 5, 2, 2}, rng);
  auto gamma = Tensor<double>::full({5}, 1.0);
  auto beta = Tensor<double>::full({5}, 0.0);
  auto y = layer_norm(x, gamma, beta);
  // per-position zero mean, unit variance
  for (Index n = 0; n < 2; ++n)
    for (Index i = 0; i < 4; ++i) {
      double s = 0, s2 = 0;
      for (Index c = 0; c < 5; ++c) {
        const double v = y.value()[(n * 5 + c) * 4 + i];
        s += v;
        s2 += v * v;
      }
      CHECK(std::abs(s / 5) < 1e-9);
      CHECK(std::abs(s2 / 5 - 1.0) < 1e-4);
    }
  auto g2 = testing::random_tensor<double>({5}, rng);
  auto b2 = testing::random_tensor<double>({5}, rng);
  auto loss = [&] {
    auto z = layer_norm(x, g2, b2);
    return sum(mul(z, z));
  };
  CHECK(testing::gradcheck_max_rel_error({x, g2, b2}, loss) < 1e-4);
}

TEST_CASE("avg_pool2d excludes padding from the divisor") {
  auto x = Tensor<double>::full({1, 1, 5, 5}, 3.0);
  auto y = avg_pool2d(x, 3, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 5, 5});
  for (Index i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(3.0));
}

TEST_CASE("avg_pool2d and global_avg_pool match finite differences") {
  std::mt19937_64 rng(31);
  auto x = testing::random_tensor<double>({2, 3, 6, 6}, rng);
  SUBCASE("avg_pool2d") {
    auto loss = [&] {
      auto y = avg_pool2d(x, 3, 2, 1);
      return sum(mul(y, y));
    };
    CHECK(testing::gradcheck_max_rel_error({x}, loss) < 1e-4);
  }
  SUBCASE("global_avg_pool") {
    auto loss = [&] {
      auto y = global_avg_pool(x);
      return sum(mul(y, y));
    };
    CHECK(testing::gradcheck_max_rel_error({x}, loss) < 1e-4);
  }
}

TEST_CASE("linear matches manual product and finite differences") {
  auto x = Tensor<double>::from_vector({1, 2}, {1.0, 2.0});
  auto w = Tensor<double>::from_vector({3, 2}, {1, 0, 0, 1, 1, 1});
  auto b = Tensor<double>::from_vector({3}, {0.5, -0.5, 0.0});
  auto y = linear(x, w, b);
  CHECK(y.shape() == Shape{1, 3});
  CHECK(y[0] == doctest::Approx(1.5));
  CHECK(y[1] == doctest::Approx(1.5));
  CHECK(y[2] == doctest::Approx(3.0));

  std::mt19937_64 rng(37);
  auto x2 = testing::random_tensor<double>({3, 4}, rng);
  auto w2 = testing::random_tensor<double>({5, 4}, rng);
  auto b2 = testing::random_tensor<double>({5}, rng);
  auto loss = [&] {
    auto z = linear(x2, w2, b2);
    return sum(mul(z, z));
  };
  CHECK(testing::gradcheck_max_rel_error({x2, w2, b2}, loss) < 1e-4);
}

TEST_CASE("softmax cross entropy value and gradient") {
  auto logits = Tensor<double>::from_vector({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  std::vector<int> labels{1, 2};
  auto loss = softmax_cross_entropy(logits, labels);
  // manual log-sum-exp
  double total = 0;
  for (int n = 0; n < 2; ++n) {
    double z = 0;
    for (int c = 0; c < 3; ++c) z += std::exp(logits.value()[n * 3 + c]);
    total -= logits.value()[n * 3 + labels[n]] - std::log(z);
  }
  CHECK(loss.item() == doctest::Approx(total / 2).epsilon(1e-12));

  std::mt19937_64 rng(41);
  auto l2 = testing::random_tensor<double>({4, 5}, rng);
  std::vector<int> lab{0, 3, 4, 2};
  SUBCASE("plain") {
    auto fn = [&] { return softmax_cross_entropy(l2, lab); };
    CHECK(testing::gradcheck_max_rel_error({l2}, fn) < 1e-4);
  }
  SUBCASE("label smoothing") {
    auto fn = [&] { return softmax_cross_entropy(l2, lab, 0.1); };
    CHECK(testing::gradcheck_max_rel_error({l2}, fn) < 1e-4);
  }
  CHECK_THROWS_AS(softmax_cross_entropy(l2, std::vector<int>{1}), std::invalid_argument);
  CHECK_THROWS_AS(softmax_cross_entropy(l2, std::vector<int>{9, 0, 0, 0}),
                  std::invalid_argument);
}

TEST_CASE("channel_scale scales per channel and matches finite differences") {
  std::mt19937_64 rng(43);
  auto x = testing::random_tensor<double>({2, 3, 2, 2}, rng);
  auto g = Tensor<double>::from_vector({3}, {1.0, 0.5, -2.0});
  auto y = channel_scale(x, g);
  CHECK(y.value()[0] == doctest::Approx(x.value()[0]));
  CHECK(y.value()[4] == doctest::Approx(0.5 * x.value()[4]));
  auto loss = [&] {
    auto z = channel_scale(x, g);
    return sum(mul(z, z));
  };
  CHECK(testing::gradcheck_max_rel_error({x, g}, loss) < 1e-4);
}

TEST_CASE("drop_path identity cases") {
  std::mt19937_64 rng(47);
  auto x = testing::random_tensor<double>({4, 2, 3, 3}, rng);
  auto y0 = drop_path(x, 0.0, true, &rng);
  auto ye = drop_path(x, 0.7, false, nullptr);
  for (Index i = 0; i < x.numel(); ++i) {
    CHECK(y0[i] == x[i]);
    CHECK(ye[i] == x[i]);
  }
  CHECK_THROWS_AS(drop_path(x, 1.0, true, &rng), std::invalid_argument);
}

TEST_CASE("drop_path keeps expectation: monte carlo") {
  std::mt19937_64 rng(123);
  auto x = Tensor<float>::full({100, 1, 1, 1}, 1.0f);
  const int trials = 1000;  // 100k samples total
  double kept = 0, mass = 0;
  for (int t = 0; t < trials; ++t) {
    auto y = drop_path(x, 0.5, true, &rng);
    for (Index n = 0; n < 100; ++n) {
      if (y[n] != 0.0f) kept += 1;
      mass += y[n];
    }
  }
  const double n_total = 100.0 * trials;
  CHECK(kept / n_total == doctest::Approx(0.5).epsilon(0.02));
  CHECK(mass / n_total == doctest::Approx(1.0).epsilon(0.01));
}
