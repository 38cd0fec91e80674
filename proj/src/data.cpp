#include "gmlab/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace gmlab::data {

namespace {

constexpr Index kCifarRecord = 1 + 3 * 32 * 32;

void append_cifar_file(Dataset& ds, const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cifar10: cannot open " + file.string());
  const auto bytes = static_cast<Index>(in.tellg());
  if (bytes == 0 || bytes % kCifarRecord != 0)
    throw std::runtime_error("cifar10: truncated file " + file.string() + " (" +
                             std::to_string(bytes) + " bytes, record size " +
                             std::to_string(kCifarRecord) + ")");
  in.seekg(0);
  const Index records = bytes / kCifarRecord;
  std::vector<unsigned char> raw(static_cast<std::size_t>(bytes));
  in.read(reinterpret_cast<char*>(raw.data()), bytes);
  if (!in) throw std::runtime_error("cifar10: read failed on " + file.string());
  ds.images.reserve(ds.images.size() + static_cast<std::size_t>(records * 3072));
  for (Index r = 0; r < records; ++r) {
    const unsigned char* rec = raw.data() + r * kCifarRecord;
    ds.labels.push_back(rec[0]);
    for (Index i = 0; i < 3072; ++i)
      ds.images.push_back(static_cast<float>(rec[1 + i]) / 255.0f);
  }
  ds.n += records;
}

}  // namespace

Dataset load_cifar10_file(const std::filesystem::path& file) {
  Dataset ds;
  append_cifar_file(ds, file);
  return ds;
}

Cifar10 load_cifar10(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::path root = dir;
  if (!fs::exists(root / "test_batch.bin") && fs::exists(root / "cifar-10-batches-bin"))
    root /= "cifar-10-batches-bin";
  Cifar10 out;
  for (int b = 1; b <= 5; ++b) {
    const fs::path f = root / ("data_batch_" + std::to_string(b) + ".bin");
    if (!fs::exists(f)) throw std::runtime_error("cifar10: missing file " + f.string());
    append_cifar_file(out.train, f);
  }
  const fs::path ft = root / "test_batch.bin";
  if (!fs::exists(ft)) throw std::runtime_error("cifar10: missing file " + ft.string());
  append_cifar_file(out.test, ft);
  return out;
}

std::vector<double> synth_band_edges(int classes, Index size) {
  const double r_min = 2.0;
  const double r_max = static_cast<double>(size) / 2.0 - 2.0;
  std::vector<double> edges(static_cast<std::size_t>(classes) + 1);
  for (int k = 0; k <= classes; ++k)
    edges[static_cast<std::size_t>(k)] = r_min + (r_max - r_min) * k / classes;
  return edges;
}

Dataset synth_frequency_dataset(std::uint64_t seed, Index n, int classes, Index size) {
  if (classes < 1 || n < 1) throw std::invalid_argument("synthetic dataset: need n, classes >= 1");
  Dataset ds;
  ds.n = n;
  ds.height = ds.width = size;
  ds.num_classes = classes;
  ds.images.assign(static_cast<std::size_t>(n * 3 * size * size), 0.0f);
  ds.labels.resize(static_cast<std::size_t>(n));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto edges = synth_band_edges(classes, size);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  for (Index i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % classes);
    ds.labels[static_cast<std::size_t>(i)] = cls;
    const double r_lo = edges[static_cast<std::size_t>(cls)];
    const double r_hi = edges[static_cast<std::size_t>(cls) + 1];
    // three integer-frequency tones inside the class annulus
    for (int tone = 0; tone < 3; ++tone) {
      int fy = 0, fx = 0;
      for (int attempt = 0; attempt < 256; ++attempt) {
        const double r = r_lo + (r_hi - r_lo) * uni(rng);
        const double theta = two_pi * uni(rng);
        fy = static_cast<int>(std::lround(r * std::sin(theta)));
        fx = static_cast<int>(std::lround(r * std::cos(theta)));
        const double d = std::hypot(fy, fx);
        if (d >= r_lo && d < r_hi) break;
        fy = fx = 0;
      }
      if (fy == 0 && fx == 0) fx = static_cast<int>(std::ceil(r_lo));
      const double phase = two_pi * uni(rng);
      const double amp = 0.25 + 0.15 * uni(rng);
      for (Index c = 0; c < 3; ++c) {
        const double chan_amp = amp * (0.85 + 0.3 * uni(rng));
        float* img = ds.image(i) + c * size * size;
        for (Index y = 0; y < size; ++y)
          for (Index x = 0; x < size; ++x)
            img[y * size + x] += static_cast<float>(
                chan_amp *
                std::cos(two_pi * (static_cast<double>(fy) * y + static_cast<double>(fx) * x) /
                             static_cast<double>(size) +
                         phase));
      }
    }
    // mild broadband noise, well under the tone energy
    float* img = ds.image(i);
    for (Index j = 0; j < 3 * size * size; ++j)
      img[j] += static_cast<float>(0.02 * gauss(rng));
  }
  return ds;
}

Tensor<float> make_batch(const Dataset& ds, const std::vector<Index>& indices,
                         const Normalization& norm, bool augment, std::mt19937_64* rng) {
  const Index b = static_cast<Index>(indices.size());
  const Index c = ds.channels, h = ds.height, w = ds.width;
  Tensor<float> out({b, c, h, w});
  if (augment && !rng) throw std::invalid_argument("make_batch: augmentation needs an RNG");
  std::uniform_int_distribution<int> shift(0, 8);
  std::uniform_int_distribution<int> coin(0, 1);
  for (Index bi = 0; bi < b; ++bi) {
    const float* src = ds.image(indices[static_cast<std::size_t>(bi)]);
    int dy = 4, dx = 4;  // neutral offset into the pad-4 frame
    bool flip = false;
    if (augment) {
      dy = shift(*rng);
      dx = shift(*rng);
      flip = coin(*rng) == 1;
    }
    for (Index ci = 0; ci < c; ++ci) {
      const float mean = norm.mean[static_cast<std::size_t>(ci % 3)];
      const float inv_std = 1.0f / norm.stddev[static_cast<std::size_t>(ci % 3)];
      float* dst = out.value().data() + (bi * c + ci) * h * w;
      const float* plane = src + ci * h * w;
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const Index sy = y + dy - 4;   // position in the source image
          Index sx = x + dx - 4;
          if (flip) sx = w - 1 - sx;
          float v = 0.0f;  // zero padding outside the source
          if (sy >= 0 && sy < h && sx >= 0 && sx < w) v = plane[sy * w + sx];
          dst[y * w + x] = (v - mean) * inv_std;
        }
    }
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& ds, const std::vector<Index>& indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(ds.labels[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace gmlab::data
