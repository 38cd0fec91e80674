#pragma once

#include <filesystem>
#include <vector>

#include "gmlab/tensor.hpp"

namespace gmlab::imageio {

/// Planar CHW float image, values in [0,1].
struct RgbImage {
  Index height = 0;
  Index width = 0;
  std::vector<float> pixels;  // 3 * height * width

  float* plane(Index c) { return pixels.data() + c * height * width; }
  const float* plane(Index c) const { return pixels.data() + c * height * width; }
};

/// Reads a PNG or binary PPM (P6), dispatching on the file signature.
RgbImage read_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const RgbImage& img);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);

}  // namespace gmlab::imageio
