#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "gmlab/tensor.hpp"

namespace gmlab::data {

/// Images live in the pixel domain ([0,1] for CIFAR, zero-mean floats for
/// synthetic data); normalization is applied at batch assembly.
struct Dataset {
  Index n = 0;
  Index channels = 3;
  Index height = 32;
  Index width = 32;
  int num_classes = 10;
  std::vector<float> images;  // n * channels * height * width, row-major
  std::vector<int> labels;

  Index image_size() const { return channels * height * width; }
  const float* image(Index i) const { return images.data() + i * image_size(); }
  float* image(Index i) { return images.data() + i * image_size(); }
};

struct Normalization {
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  std::array<float, 3> stddev{1.f, 1.f, 1.f};
};

inline constexpr Normalization kCifarNorm{{0.4914f, 0.4822f, 0.4465f},
                                          {0.2470f, 0.2435f, 0.2616f}};
inline constexpr Normalization kIdentityNorm{};

struct Cifar10 {
  Dataset train;
  Dataset test;
};

/// Reads the binary CIFAR-10 layout: per record one label byte followed by
/// the 32x32 R, G, B planes. Expects data_batch_1..5.bin and test_batch.bin
/// under dir (or dir/cifar-10-batches-bin).
Cifar10 load_cifar10(const std::filesystem::path& dir);

/// Parses one CIFAR-format binary file.
Dataset load_cifar10_file(const std::filesystem::path& file);

/// Synthetic classification set: each class occupies one annulus of the
/// frequency plane; images are sums of tones from the class band plus a
/// small amount of noise. Zero-mean, so band identity is the only signal.
Dataset synth_frequency_dataset(std::uint64_t seed, Index n, int classes, Index size = 32);

/// The annulus edges synth_frequency_dataset uses for a class count.
std::vector<double> synth_band_edges(int classes, Index size = 32);

/// Assembles a normalized NCHW batch; optional pad-4 random crop and
/// horizontal flip consume the RNG per sample.
Tensor<float> make_batch(const Dataset& ds, const std::vector<Index>& indices,
                         const Normalization& norm, bool augment = false,
                         std::mt19937_64* rng = nullptr);

std::vector<int> gather_labels(const Dataset& ds, const std::vector<Index>& indices);

}  // namespace gmlab::data
