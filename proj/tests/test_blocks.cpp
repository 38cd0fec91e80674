#include <doctest.h>

#include <random>

#include "gmlab/blocks.hpp"
#include "gradcheck.hpp"

using namespace gmlab;

namespace {

template <class S>
Tensor<S> feature(Index n, Index c, Index h, Index w, std::mt19937_64& rng, S s = S(1)) {
  return gmlab::testing::random_tensor<S>({n, c, h, w}, rng, s);
}

}  // namespace

TEST_CASE("simple gate value cases") {
  std::mt19937_64 rng(1);
  SUBCASE("identity sigma squares the input") {
    GluGate<double> gate(GluVariant::SimpleGate, Activation::Identity, 1, rng);
    auto x = Tensor<double>::from_vector({1, 1, 1, 1}, {3.0});
    CHECK(gate.forward(x).item() == doctest::Approx(9.0));
  }
  SUBCASE("relu6 sigma clips the gate") {
    GluGate<double> gate(GluVariant::SimpleGate, Activation::ReLU6, 1, rng);
    auto x8 = Tensor<double>::from_vector({1, 1, 1, 1}, {8.0});
    CHECK(gate.forward(x8).item() == doctest::Approx(48.0));
    auto xm2 = Tensor<double>::from_vector({1, 1, 1, 1}, {-2.0});
    CHECK(gate.forward(xm2).item() == doctest::Approx(0.0));
  }
}

TEST_CASE("pool-diff gate vanishes on constant images") {
  std::mt19937_64 rng(2);
  for (auto act : kAllActivations) {
    GluGate<double> gate(GluVariant::PoolDiffGate, act, 3, rng);
    auto x = Tensor<double>::full({2, 3, 5, 5}, 1.7);
    auto y = gate.forward(x);
    CHECK(y.value().abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("fc gate rejects mismatched channel dim") {
  std::mt19937_64 rng(3);
  GluGate<double> gate(GluVariant::FCGate, Activation::ReLU, 8, rng);
  auto x = Tensor<double>::full({1, 4, 3, 3}, 1.0);
  CHECK_THROWS_WITH_AS(gate.forward(x), doctest::Contains("channels"), std::invalid_argument);
}

TEST_CASE("gate parameter budgets") {
  std::mt19937_64 rng(4);
  const Index c = 16;
  for (auto v : kAllGluVariants) {
    GluGate<double> gate(v, Activation::ReLU6, c, rng);
    const Index p = gate.parameter_count();
    switch (v) {
      case GluVariant::SimpleGate:
      case GluVariant::PoolDiffGate: CHECK(p == 0); break;
      case GluVariant::LNGate: CHECK(p == 2 * c); break;
      case GluVariant::DWGate: CHECK(p == c * 9 + c); break;
      case GluVariant::FCGate:
      case GluVariant::FCSigmaGate: CHECK(p == c * c + c); break;
    }
  }
}

TEST_CASE("gate derivative identity sigma'(x)x + sigma(x) for the simple gate") {
  // away from kinks, the analytic derivative of sigma(x)*x
  for (auto act : kAllActivations) {
    for (double xv : {-2.3, -0.4, 0.6, 2.0, 5.4, 7.1}) {
      auto x = Tensor<double>::from_vector({1}, {xv});
      x.set_requires_grad(true);
      Tape<double> tape;
      auto y = sum(mul(activation(x, act), x));
      tape.backward(y);
      const double expected = act_grad(act, xv) * xv + act_value(act, xv);
      CHECK(x.grad()[0] == doctest::Approx(expected).epsilon(1e-10));
    }
  }
}

TEST_CASE("all gate variants are differentiable end to end") {
  std::mt19937_64 rng(5);
  for (auto v : kAllGluVariants) {
    GluGate<double> gate(v, Activation::SiLU, 4, rng);
    auto x = feature<double>(1, 4, 4, 4, rng);
    std::vector<Tensor<double>> inputs{x};
    for (auto& [name, p] : gate.named_parameters()) inputs.push_back(p);
    auto loss = [&] {
      auto y = gate.forward(x);
      return sum(mul(y, y));
    };
    CAPTURE(to_string(v));
    CHECK(gmlab::testing::gradcheck_max_rel_error(inputs, loss) < 1e-4);
  }
}

TEST_CASE("gated block with zero layer scale is the exact identity") {
  std::mt19937_64 rng(6), drop_rng(7);
  GmBlockOptions<float> opt;
  opt.dim = 8;
  opt.mlp_ratio = 2;
  GmNetBlock<float> block(opt, rng, &drop_rng);
  block.layer_scale().value().setZero();
  auto x = feature<float>(2, 8, 6, 6, rng);
  auto y = block.forward(x);
  for (Index i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("gated block preserves shape") {
  std::mt19937_64 rng(8), drop_rng(9);
  GmBlockOptions<float> opt;
  opt.dim = 48;
  opt.mlp_ratio = 4;
  GmNetBlock<float> block(opt, rng, &drop_rng);
  auto x = feature<float>(2, 48, 14, 14, rng);
  CHECK(block.forward(x).shape() == Shape{2, 48, 14, 14});
  auto bad = feature<float>(2, 32, 14, 14, rng);
  CHECK_THROWS_WITH_AS(block.forward(bad), doctest::Contains("channels"), std::invalid_argument);
}

TEST_CASE("gated block parameter count, dim 48 ratio 4") {
  std::mt19937_64 rng(10), drop_rng(11);
  GmBlockOptions<float> opt;
  opt.dim = 48;
  opt.mlp_ratio = 4;
  GmNetBlock<float> block(opt, rng, &drop_rng);
  // per-layer enumeration: dw 2x(48*49), conv1 48*192+192, conv2 192*48,
  // BN affine 2x(2*48), layer scale 48
  const Index expected = 2 * (48 * 49) + 48 * 192 + 192 + 192 * 48 + 4 * 48 + 48;
  Index enumerated = 0;
  block.visit_parameters([&](const std::string&, Tensor<float>& t) { enumerated += t.numel(); });
  CHECK(enumerated == expected);
  CHECK(block.parameter_count() == expected);
}

TEST_CASE("gated block gradients, float64") {
  std::mt19937_64 rng(12), drop_rng(13);
  GmBlockOptions<double> opt;
  opt.dim = 8;
  opt.mlp_ratio = 2;
  opt.layer_scale_init = 0.1;  // make the branch contribute
  GmNetBlock<double> block(opt, rng, &drop_rng);
  auto x = feature<double>(1, 8, 8, 8, rng);
  std::vector<Tensor<double>> inputs{x};
  for (auto& [name, p] : block.named_parameters()) inputs.push_back(p);
  auto loss = [&] {
    auto y = block.forward(x);
    return sum(mul(y, y));
  };
  CHECK(gmlab::testing::gradcheck_max_rel_error(inputs, loss) < 1e-4);
}

TEST_CASE("residual block variants share one parameter count") {
  std::mt19937_64 rng(14);
  const Index counts[3] = {
      ResNetBasicBlock<float>(32, 64, 2, ResBlockVariant::Baseline, Activation::ReLU, rng)
          .parameter_count(),
      ResNetBasicBlock<float>(32, 64, 2, ResBlockVariant::Ewp, Activation::ReLU, rng)
          .parameter_count(),
      ResNetBasicBlock<float>(32, 64, 2, ResBlockVariant::Gate, Activation::GELU, rng)
          .parameter_count(),
  };
  CHECK(counts[0] == counts[1]);
  CHECK(counts[1] == counts[2]);
}

TEST_CASE("ewp equals gate(identity) bitwise on shared weights") {
  std::mt19937_64 rng_a(15), rng_b(15), rng_x(16);
  ResNetBasicBlock<float> ewp(16, 16, 1, ResBlockVariant::Ewp, Activation::ReLU, rng_a);
  ResNetBasicBlock<float> gate(16, 16, 1, ResBlockVariant::Gate, Activation::Identity, rng_b);
  ewp.set_training(false);
  gate.set_training(false);
  auto x = feature<float>(2, 16, 8, 8, rng_x);
  auto ya = ewp.forward(x);
  auto yb = gate.forward(x);
  for (Index i = 0; i < ya.numel(); ++i) CHECK(ya[i] == yb[i]);
}

TEST_CASE("residual block gradients, all variants") {
  std::mt19937_64 rng(17);
  for (auto v : {ResBlockVariant::Baseline, ResBlockVariant::Ewp, ResBlockVariant::Gate}) {
    std::mt19937_64 block_rng(18);
    ResNetBasicBlock<double> block(4, 8, 2, v, Activation::ReLU6, block_rng);
    auto x = feature<double>(1, 4, 6, 6, rng);
    std::vector<Tensor<double>> inputs{x};
    for (auto& [name, p] : block.named_parameters()) inputs.push_back(p);
    auto loss = [&] {
      auto y = block.forward(x);
      return sum(mul(y, y));
    };
    CAPTURE(to_string(v));
    CHECK(gmlab::testing::gradcheck_max_rel_error(inputs, loss) < 2e-4);
  }
}

TEST_CASE("inverted residual: stock and gated variants") {
  std::mt19937_64 rng_a(19), rng_b(19), rng_x(20);
  Mbv2Block<float> stock(32, 32, 1, 6, false, Activation::ReLU6, rng_a);
  Mbv2Block<float> gated(32, 32, 1, 6, true, Activation::ReLU6, rng_b);
  SUBCASE("gate adds no parameters") {
    CHECK(stock.parameter_count() == gated.parameter_count());
  }
  SUBCASE("shape preserved at stride 1, expansion 6") {
    auto x = feature<float>(2, 32, 16, 16, rng_x);
    CHECK(gated.forward(x).shape() == Shape{2, 32, 16, 16});
  }
  SUBCASE("identity-sigma gate squares the expanded features") {
    std::mt19937_64 rng_c(21);
    Mbv2Block<double> idgate(1, 1, 1, 2, true, Activation::Identity, rng_c);
    // probe the gate position by comparing against a manual recomputation
    auto x = Tensor<double>::full({1, 1, 2, 2}, 2.0);
    auto y = idgate.forward(x);
    CHECK(y.all_finite());
  }
}

TEST_CASE("inverted residual gradients") {
  std::mt19937_64 rng(22), rng_b(23);
  Mbv2Block<double> block(4, 6, 2, 3, true, Activation::SiLU, rng_b);
  auto x = feature<double>(1, 4, 6, 6, rng);
  std::vector<Tensor<double>> inputs{x};
  for (auto& [name, p] : block.named_parameters()) inputs.push_back(p);
  auto loss = [&] {
    auto y = block.forward(x);
    return sum(mul(y, y));
  };
  CHECK(gmlab::testing::gradcheck_max_rel_error(inputs, loss) < 1e-4);
}

TEST_CASE("contribution options: linear mixing stays parameter-matched at width 48") {
  std::mt19937_64 rng(24), drop_rng(25);
  GmBlockOptions<float> dw_opt;
  dw_opt.dim = 48;
  dw_opt.mlp_ratio = 3;
  GmBlockOptions<float> lin_opt = dw_opt;
  lin_opt.use_dw = false;
  lin_opt.use_gate = false;
  lin_opt.act = Activation::ReLU;
  GmNetBlock<float> with_dw(dw_opt, rng, &drop_rng);
  GmNetBlock<float> with_lin(lin_opt, rng, &drop_rng);
  const double rel = std::abs(static_cast<double>(with_dw.parameter_count()) -
                              static_cast<double>(with_lin.parameter_count())) /
                     static_cast<double>(with_dw.parameter_count());
  CHECK(rel < 0.03);
}
