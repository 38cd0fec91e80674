#include "gmlab/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace gmlab::imageio {

namespace {

float byte_to_unit(unsigned char b) { return static_cast<float>(b) / 255.0f; }

unsigned char unit_to_byte(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<unsigned char>(c * 255.0f + 0.5f);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("image: cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("image: not a binary PPM: " + path.string());
  auto next_int = [&]() {
    // skip whitespace and '#' comments
    int c;
    while ((c = in.peek()) != EOF && (std::isspace(c) || c == '#')) {
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else {
        in.get();
      }
    }
    long v;
    in >> v;
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w < 1 || h < 1 || maxval != 255)
    throw std::runtime_error("image: unsupported PPM header in " + path.string());
  in.get();  // single whitespace after header
  std::vector<unsigned char> raw(static_cast<std::size_t>(3 * w * h));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error("image: truncated PPM " + path.string());
  RgbImage img;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<std::size_t>(3 * w * h));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c)
        img.plane(c)[y * w + x] = byte_to_unit(raw[static_cast<std::size_t>((y * w + x) * 3 + c)]);
  return img;
}

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

RgbImage read_png(const std::filesystem::path& path) {
  PngReadCloser s;
  s.fp = std::fopen(path.string().c_str(), "rb");
  if (!s.fp) throw std::runtime_error("image: cannot open " + path.string());
  s.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!s.png) throw std::runtime_error("image: libpng init failed");
  s.info = png_create_info_struct(s.png);
  if (!s.info) throw std::runtime_error("image: libpng info init failed");
  if (setjmp(png_jmpbuf(s.png))) throw std::runtime_error("image: PNG decode failed: " + path.string());
  png_init_io(s.png, s.fp);
  png_read_info(s.png, s.info);

  png_set_expand(s.png);
  png_set_strip_16(s.png);
  png_set_strip_alpha(s.png);
  png_set_gray_to_rgb(s.png);
  png_read_update_info(s.png, s.info);

  const png_uint_32 w = png_get_image_width(s.png, s.info);
  const png_uint_32 h = png_get_image_height(s.png, s.info);
  if (png_get_channels(s.png, s.info) != 3)
    throw std::runtime_error("image: unexpected channel count in " + path.string());

  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(s.png, rows.data());
  png_read_end(s.png, nullptr);

  RgbImage img;
  img.height = static_cast<Index>(h);
  img.width = static_cast<Index>(w);
  img.pixels.resize(static_cast<std::size_t>(3) * w * h);
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x)
      for (Index c = 0; c < 3; ++c)
        img.plane(c)[y * img.width + x] =
            byte_to_unit(raw[static_cast<std::size_t>((y * img.width + x) * 3 + c)]);
  return img;
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("image: cannot open " + path.string());
  unsigned char sig[8] = {0};
  probe.read(reinterpret_cast<char*>(sig), 8);
  probe.close();
  if (png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  if (sig[0] == 'P' && sig[1] == '6') return read_ppm(path);
  throw std::runtime_error("image: unsupported format (expect PNG or binary PPM): " +
                           path.string());
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("image: cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x)
      for (Index c = 0; c < 3; ++c)
        out.put(static_cast<char>(unit_to_byte(img.plane(c)[y * img.width + x])));
  if (!out) throw std::runtime_error("image: write failed " + path.string());
}

namespace {

struct PngWriteCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngWriteCloser() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  PngWriteCloser s;
  s.fp = std::fopen(path.string().c_str(), "wb");
  if (!s.fp) throw std::runtime_error("image: cannot write " + path.string());
  s.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!s.png) throw std::runtime_error("image: libpng init failed");
  s.info = png_create_info_struct(s.png);
  if (!s.info) throw std::runtime_error("image: libpng info init failed");
  if (setjmp(png_jmpbuf(s.png))) throw std::runtime_error("image: PNG encode failed: " + path.string());
  png_init_io(s.png, s.fp);
  png_set_IHDR(s.png, s.info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(s.png, s.info);
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
  for (Index y = 0; y < img.height; ++y) {
    for (Index x = 0; x < img.width; ++x)
      for (Index c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x * 3 + c)] = unit_to_byte(img.plane(c)[y * img.width + x]);
    png_write_row(s.png, row.data());
  }
  png_write_end(s.png, nullptr);
}

}  // namespace gmlab::imageio
