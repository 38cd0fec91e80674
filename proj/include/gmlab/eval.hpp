#pragma once

#include <map>
#include <utility>
#include <vector>

#include "gmlab/data.hpp"
#include "gmlab/nn.hpp"
#include "gmlab/spectral.hpp"

namespace gmlab {

/// Band-decomposed copies of a test set, one dataset per annulus plus the
/// untouched originals. Labels and cardinality match the raw set; band
/// images stay in the pixel domain and are normalized with the raw-set
/// statistics at evaluation time.
struct FrequencyEvalSet {
  std::vector<double> radii;  // interior cuts; bands = radii.size() + 1
  data::Dataset raw;
  std::vector<data::Dataset> bands;

  static FrequencyEvalSet build(const data::Dataset& test, const std::vector<double>& radii) {
    FrequencyEvalSet out;
    out.radii = radii;
    out.raw = test;
    out.bands.assign(radii.size() + 1, data::Dataset{});
    for (auto& b : out.bands) {
      b = test;  // copy labels/geometry, then overwrite pixels
    }
    spectral::Image img(test.height, test.width);
    for (Index i = 0; i < test.n; ++i) {
      for (Index c = 0; c < test.channels; ++c) {
        const float* src = test.image(i) + c * test.height * test.width;
        for (Index y = 0; y < test.height; ++y)
          for (Index x = 0; x < test.width; ++x)
            img(y, x) = static_cast<double>(src[y * test.width + x]);
        spectral::BandSplit split = spectral::band_split(img, radii);
        for (std::size_t b = 0; b < split.components.size(); ++b) {
          float* dst = out.bands[b].image(i) + c * test.height * test.width;
          for (Index y = 0; y < test.height; ++y)
            for (Index x = 0; x < test.width; ++x)
              dst[y * test.width + x] = static_cast<float>(split.components[b](y, x));
        }
      }
    }
    return out;
  }

  std::pair<double, double> band_range(std::size_t b) const {
    const double lo = b == 0 ? 0.0 : radii[b - 1];
    const double hi =
        b < radii.size() ? radii[b] : std::numeric_limits<double>::infinity();
    return {lo, hi};
  }
};

/// Top-1 accuracy of a model over a dataset, evaluated in eval mode without
/// gradient recording.
inline double evaluate_accuracy(Module<float>& model, const data::Dataset& ds,
                                const data::Normalization& norm, Index batch = 256) {
  const bool was_training = model.training();
  model.set_training(false);
  Index correct = 0;
  for (Index start = 0; start < ds.n; start += batch) {
    const Index stop = std::min(ds.n, start + batch);
    std::vector<Index> idx(static_cast<std::size_t>(stop - start));
    for (Index i = start; i < stop; ++i) idx[static_cast<std::size_t>(i - start)] = i;
    Tensor<float> x = data::make_batch(ds, idx, norm);
    auto pred = argmax_rows(model.forward(x));
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (pred[i] == ds.labels[static_cast<std::size_t>(idx[i])]) ++correct;
  }
  model.set_training(was_training);
  return static_cast<double>(correct) / static_cast<double>(ds.n);
}

struct BandAccuracy {
  double r_low = 0;
  double r_high = 0;  // +inf for the open band
  double accuracy = 0;
};

struct FrequencyEvalResult {
  double overall = 0;
  std::vector<BandAccuracy> bands;
};

/// Overall accuracy plus accuracy on every band-decomposed copy; each band
/// result comes from its own forward pass.
inline FrequencyEvalResult eval_frequency(Module<float>& model, const FrequencyEvalSet& set,
                                          const data::Normalization& norm, Index batch = 256) {
  FrequencyEvalResult out;
  out.overall = evaluate_accuracy(model, set.raw, norm, batch);
  for (std::size_t b = 0; b < set.bands.size(); ++b) {
    const auto [lo, hi] = set.band_range(b);
    out.bands.push_back({lo, hi, evaluate_accuracy(model, set.bands[b], norm, batch)});
  }
  return out;
}

}  // namespace gmlab
