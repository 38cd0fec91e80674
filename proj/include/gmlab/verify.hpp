#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gmlab/blocks.hpp"
#include "gmlab/models.hpp"
#include "gmlab/spectral.hpp"

namespace gmlab::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

using CheckList = std::vector<CheckResult>;

inline bool all_passed(const CheckList& checks) {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

// ---------------------------------------------------------------------------
// finite-difference gradient checking (float64)
// ---------------------------------------------------------------------------

/// Max relative error between analytic and central finite-difference
/// gradients, normalized by max(1, |analytic|).
template <class LossFn>
double fd_max_rel_error(std::vector<Tensor<double>> inputs, LossFn&& loss_fn, double h = 1e-5) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    Tensor<double> loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<ArrayX<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.grad());
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k];
    for (Index i = 0; i < t.numel(); ++i) {
      const double v = t.value()[i];
      t.value()[i] = v + h;
      const double lp = loss_fn().item();
      t.value()[i] = v - h;
      const double lm = loss_fn().item();
      t.value()[i] = v;
      const double fd = (lp - lm) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - analytic[k][i]) / std::max(1.0, std::abs(analytic[k][i])));
    }
  }
  return worst;
}

namespace detail {

inline Tensor<double> randn(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t.value()[i] = dist(rng) * scale;
  return t;
}

template <class M>
CheckResult check_module_grad(const std::string& name, M& module, Tensor<double> x,
                              double tol = 1e-4) {
  std::vector<Tensor<double>> inputs{x};
  for (auto& [pname, p] : module.named_parameters()) inputs.push_back(p);
  auto loss = [&] {
    auto y = module.forward(x);
    return sum(mul(y, y));
  };
  const double err = fd_max_rel_error(inputs, loss);
  std::ostringstream os;
  os << "max_rel_err=" << err;
  return {name, err < tol, os.str()};
}

}  // namespace detail

/// Criterion-style gradient integrity: every layer type, then composed
/// blocks including every gate variant x activation combination.
inline CheckList gradcheck_suite(bool include_blocks = true) {
  CheckList checks;
  std::mt19937_64 rng(20240811);

  auto simple = [&](const std::string& name, auto make_loss,
                    std::vector<Tensor<double>> inputs) {
    const double err = fd_max_rel_error(std::move(inputs), make_loss);
    std::ostringstream os;
    os << "max_rel_err=" << err;
    checks.push_back({name, err < 1e-4, os.str()});
  };

  {
    auto x = detail::randn({2, 3, 6, 6}, rng);
    auto w = detail::randn({4, 3, 3, 3}, rng);
    auto b = detail::randn({4}, rng);
    simple("conv2d", [&] {
      auto y = conv2d(x, w, b, 2, 1);
      return sum(mul(y, y));
    }, {x, w, b});
  }
  {
    auto x = detail::randn({1, 4, 6, 6}, rng);
    auto w = detail::randn({4, 1, 3, 3}, rng);
    simple("conv2d_depthwise", [&] {
      auto y = conv2d(x, w, 1, 1, 4);
      return sum(mul(y, y));
    }, {x, w});
  }
  {
    // fixed points clear of the ReLU/ReLU6 kinks
    auto x = Tensor<double>::from_vector({8}, {-3.1, -1.2, -0.4, 0.7, 1.9, 3.3, 5.2, 7.4});
    for (auto act : kAllActivations) {
      simple(std::string("activation_") + to_string(act), [&, act] {
        auto y = activation(x, act);
        return sum(mul(y, y));
      }, {x});
    }
  }
  {
    auto x = detail::randn({3, 2, 4, 4}, rng);
    auto g = detail::randn({2}, rng);
    auto b = detail::randn({2}, rng);
    auto rm = Tensor<double>::zeros({2});
    auto rv = Tensor<double>::full({2}, 1.0);
    simple("batch_norm2d_train", [&] {
      auto y = batch_norm2d(x, g, b, rm, rv, true);
      return sum(mul(y, y));
    }, {x, g, b});
    simple("batch_norm2d_eval", [&] {
      auto y = batch_norm2d(x, g, b, rm, rv, false);
      return sum(mul(y, y));
    }, {x, g, b});
  }
  {
    auto x = detail::randn({2, 5, 3, 3}, rng);
    auto g = detail::randn({5}, rng);
    auto b = detail::randn({5}, rng);
    simple("layer_norm", [&] {
      auto y = layer_norm(x, g, b);
      return sum(mul(y, y));
    }, {x, g, b});
  }
  {
    auto x = detail::randn({2, 3, 6, 6}, rng);
    simple("avg_pool2d", [&] {
      auto y = avg_pool2d(x, 3, 2, 1);
      return sum(mul(y, y));
    }, {x});
    simple("global_avg_pool", [&] {
      auto y = global_avg_pool(x);
      return sum(mul(y, y));
    }, {x});
  }
  {
    auto x = detail::randn({3, 5}, rng);
    auto w = detail::randn({4, 5}, rng);
    auto b = detail::randn({4}, rng);
    simple("linear", [&] {
      auto y = linear(x, w, b);
      return sum(mul(y, y));
    }, {x, w, b});
  }
  {
    auto x = detail::randn({4, 6}, rng);
    const std::vector<int> labels{0, 2, 5, 3};
    simple("softmax_cross_entropy", [&] { return softmax_cross_entropy(x, labels, 0.1); }, {x});
  }
  {
    auto x = detail::randn({2, 3, 4, 4}, rng);
    auto g = detail::randn({3}, rng);
    simple("layer_scale", [&] {
      auto y = channel_scale(x, g);
      return sum(mul(y, y));
    }, {x, g});
    simple("drop_path_eval", [&] {
      auto y = drop_path(x, 0.5, false, nullptr);
      return sum(mul(y, y));
    }, {x});
  }

  if (!include_blocks) return checks;

  for (auto variant : kAllGluVariants)
    for (auto act : kAllActivations) {
      std::mt19937_64 gate_rng(7);
      GluGate<double> gate(variant, act, 4, gate_rng);
      auto x = detail::randn({1, 4, 5, 5}, rng);
      checks.push_back(detail::check_module_grad(
          std::string("glu_") + to_string(variant) + "_" + to_string(act), gate, x));
    }
  {
    std::mt19937_64 block_rng(11), drop_rng(12);
    GmBlockOptions<double> opt;
    opt.dim = 8;
    opt.mlp_ratio = 2;
    opt.layer_scale_init = 0.1;
    GmNetBlock<double> block(opt, block_rng, &drop_rng);
    checks.push_back(detail::check_module_grad("gm_block", block, detail::randn({1, 8, 8, 8}, rng)));
  }
  for (auto v : {ResBlockVariant::Baseline, ResBlockVariant::Ewp, ResBlockVariant::Gate}) {
    std::mt19937_64 block_rng(13);
    ResNetBasicBlock<double> block(4, 8, 2, v, Activation::ReLU6, block_rng);
    checks.push_back(detail::check_module_grad(std::string("res_block_") + to_string(v), block,
                                               detail::randn({1, 4, 6, 6}, rng), 2e-4));
  }
  {
    std::mt19937_64 block_rng(17);
    Mbv2Block<double> block(4, 6, 1, 3, true, Activation::SiLU, block_rng);
    checks.push_back(
        detail::check_module_grad("mbv2_block", block, detail::randn({1, 4, 6, 6}, rng)));
  }
  return checks;
}

// ---------------------------------------------------------------------------
// spectral suites
// ---------------------------------------------------------------------------

inline CheckList conv_theorem_suite(int pairs = 100, int size = 64, double tol = 1e-10) {
  CheckList checks;
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> dist(0.0, 1.0);
  double worst = 0;
  for (int p = 0; p < pairs; ++p) {
    spectral::Image u(size, size), v(size, size);
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j) {
        u(i, j) = dist(rng);
        v(i, j) = dist(rng);
      }
    worst = std::max(worst, spectral::verify_convolution_theorem(u, v));
  }
  {
    std::ostringstream os;
    os << "pairs=" << pairs << " size=" << size << " max_residual=" << worst;
    checks.push_back({"conv_theorem_residual", worst < tol, os.str()});
  }
  {
    // band-limited self-product: support doubles, nothing leaks past it
    const double omega = 10.0;
    spectral::Image noise(size, size);
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j) noise(i, j) = dist(rng);
    auto [low, unused] = spectral::radial_decompose(noise, omega);
    spectral::Spectrum s = spectral::dft2_forward(spectral::Image(low * low));
    const auto d = spectral::centered_distance_grid(size, size);
    double outside = 0, total = 0;
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j) {
        const double e = std::norm(s.coeffs(i, j));
        total += e;
        if (d(i, j) >= 2.0 * omega) outside += e;
      }
    std::ostringstream os;
    os << "out_of_support_energy_fraction=" << outside / total;
    checks.push_back({"bandlimited_support_2omega", outside / total < 1e-9, os.str()});
  }
  return checks;
}

inline CheckList decay_suite() {
  CheckList checks;
  // step probe built directly; the library fit runs on the same grid
  std::vector<double> step(4096);
  for (int i = 0; i < 4096; ++i) {
    const double t = -8.0 + 16.0 * i / 4096;
    step[static_cast<std::size_t>(i)] =
        (t > 0 ? 1.0 : 0.0) * 0.5 * (1.0 + std::cos(std::numbers::pi * t / 8.0));
  }
  const auto f_step = spectral::decay_fit_from_samples(step, 8.0, Activation::Identity);
  const auto f_relu = spectral::activation_decay_fit(Activation::ReLU);
  const auto f_relu6 = spectral::activation_decay_fit(Activation::ReLU6);
  const auto f_gelu = spectral::activation_decay_fit(Activation::GELU);
  const auto f_silu = spectral::activation_decay_fit(Activation::SiLU);

  auto row = [&](const std::string& name, bool ok, double n, double resid) {
    std::ostringstream os;
    os << "n_hat=" << n << " residual=" << resid;
    checks.push_back({name, ok, os.str()});
  };
  row("decay_step_n1", std::abs(f_step.exponent - 1.0) <= 0.3, f_step.exponent, f_step.residual);
  row("decay_relu_n2", std::abs(f_relu.exponent - 2.0) <= 0.3, f_relu.exponent, f_relu.residual);
  row("decay_relu6_n2", std::abs(f_relu6.exponent - 2.0) <= 0.3, f_relu6.exponent,
      f_relu6.residual);
  row("decay_gelu_past_relu", f_gelu.exponent >= f_relu.exponent + 1.0, f_gelu.exponent,
      f_gelu.residual);
  row("decay_silu_smooth", f_silu.exponent > 2.5, f_silu.exponent, f_silu.residual);
  row("decay_ordering",
      f_step.exponent < f_relu.exponent && f_relu.exponent < f_gelu.exponent, f_gelu.exponent,
      0.0);
  return checks;
}

inline CheckList counts_suite() {
  CheckList checks;
  struct Row {
    const char* scale;
    double params_ref, macs_ref;
  };
  const Row rows[] = {{"s1", 3.7e6, 0.6e9},
                      {"s2", 6.2e6, 0.9e9},
                      {"s3", 7.8e6, 1.2e9},
                      {"s4", 17.0e6, 2.7e9}};
  for (const auto& row : rows) {
    GmNet<float> net(gmnet_scale_config(row.scale), 0);
    const CostReport report = cost_report(net, 224);
    const double p_gap = std::abs(report.params - row.params_ref) / row.params_ref;
    const double m_gap = std::abs(report.macs - row.macs_ref) / row.macs_ref;
    {
      std::ostringstream os;
      os << "measured=" << report.params << " reference=" << row.params_ref
         << " rel_gap=" << p_gap;
      checks.push_back({std::string("params_") + row.scale, p_gap < 0.03, os.str()});
    }
    {
      std::ostringstream os;
      os << "measured=" << report.macs << " reference=" << row.macs_ref << " rel_gap=" << m_gap;
      checks.push_back({std::string("macs_") + row.scale, m_gap < 0.10, os.str()});
    }
  }
  return checks;
}

}  // namespace gmlab::verify
