#pragma once

#include <iomanip>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "gmlab/models.hpp"
#include "gmlab/spectral.hpp"

namespace gmlab {

struct ProbeRow {
  std::string layer;
  std::string stage;
  std::string metric;
  double value = 0;
};

inline void write_probe_csv(std::ostream& os, const std::vector<ProbeRow>& rows) {
  os << "layer,stage,metric,value\n";
  os << std::setprecision(10);
  for (const auto& r : rows) os << r.layer << "," << r.stage << "," << r.metric << "," << r.value
                                << "\n";
}

inline std::string stage_of(const std::string& layer) {
  const auto dot = layer.find('.');
  const std::string head = dot == std::string::npos ? layer : layer.substr(0, dot);
  return head.rfind("stage", 0) == 0 ? head : std::string("-");
}

/// Probe tap names for a model config: gate input/output of the last block
/// of every stage plus the first depth-wise conv of every stage.
inline std::vector<std::string> gmnet_probe_taps(const GmNetConfig& cfg) {
  std::vector<std::string> taps;
  for (int stage = 0; stage < 4; ++stage) {
    const Index last = cfg.depths[static_cast<std::size_t>(stage)] - 1;
    const std::string prefix = "stage" + std::to_string(stage) + ".block";
    taps.push_back(prefix + "0.dw1");
    taps.push_back(prefix + std::to_string(last) + ".gate_in");
    taps.push_back(prefix + std::to_string(last) + ".gate_out");
  }
  return taps;
}

/// Runs one eval-mode forward pass with a tap sink installed and computes
/// the high/low spectral energy ratio at every requested tap. Each ratio is
/// recomputed from the captured feature map, never derived from another
/// tap. A requested tap the forward pass never reaches is an error.
inline std::vector<ProbeRow> spectral_probe(Module<float>& model, const Tensor<float>& probe_batch,
                                            const std::vector<std::string>& required_taps) {
  std::map<std::string, spectral::EnergyRatio> captured;
  TapSink<float> sink;
  sink.put = [&](const std::string& name, const Tensor<float>& t) {
    for (const auto& want : required_taps)
      if (want == name) {
        captured[name] = spectral::energy_ratio_high_low_nchw(t);
        return;
      }
  };
  const bool was_training = model.training();
  model.set_training(false);
  {
    typename TapSink<float>::Scope scope(sink);
    model.forward(probe_batch);
  }
  model.set_training(was_training);

  std::vector<ProbeRow> rows;
  for (const auto& name : required_taps) {
    auto it = captured.find(name);
    if (it == captured.end())
      throw std::runtime_error("spectral probe: missing tap '" + name + "'");
    rows.push_back({name, stage_of(name), "high_low_ratio", it->second.ratio});
    if (it->second.degenerate_low)
      rows.push_back({name, stage_of(name), "degenerate_low", 1.0});
  }
  return rows;
}

/// Zero-mean unit-variance probe batch.
inline Tensor<float> white_noise_batch(std::uint64_t seed, Index n, Index c, Index h, Index w) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<float> t({n, c, h, w});
  for (Index i = 0; i < t.numel(); ++i) t.value()[i] = static_cast<float>(dist(rng));
  return t;
}

/// Bandwidths of every spatial conv kernel slice (kernels with spatial
/// extent above 1x1), one row per 2-D slice, plus a per-layer 20-bin
/// histogram of the distribution.
inline std::vector<ProbeRow> analyze_kernel_bandwidths(Module<float>& model, int pad_to = 64,
                                                       double energy_fraction = 0.9) {
  std::vector<ProbeRow> rows;
  model.visit_parameters([&](const std::string& name, Tensor<float>& t) {
    if (t.ndim() != 4) return;
    const Index o = t.dim(0), i = t.dim(1), kh = t.dim(2), kw = t.dim(3);
    if (kh <= 1 && kw <= 1) return;
    std::vector<int> hist(20, 0);
    for (Index oc = 0; oc < o; ++oc)
      for (Index ic = 0; ic < i; ++ic) {
        Eigen::ArrayXXd kernel(kh, kw);
        for (Index y = 0; y < kh; ++y)
          for (Index x = 0; x < kw; ++x)
            kernel(y, x) = static_cast<double>(t.value()[((oc * i + ic) * kh + y) * kw + x]);
        auto bw = spectral::kernel_bandwidth(kernel, pad_to, energy_fraction);
        rows.push_back({name, stage_of(name), "kernel_bandwidth", bw.bandwidth});
        const int bin = std::min(19, static_cast<int>(bw.bandwidth * 20.0));
        ++hist[static_cast<std::size_t>(bin)];
      }
    for (int b = 0; b < 20; ++b) {
      std::ostringstream metric;
      metric << "bw_hist[" << std::fixed << std::setprecision(2) << b * 0.05 << ","
             << (b + 1) * 0.05 << ")";
      rows.push_back({name, stage_of(name), metric.str(), static_cast<double>(hist[b])});
    }
  });
  return rows;
}

}  // namespace gmlab
