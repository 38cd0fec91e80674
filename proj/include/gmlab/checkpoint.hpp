#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlab/crc64.hpp"
#include "gmlab/nn.hpp"
#include "gmlab/tensor.hpp"

namespace gmlab {

enum class CheckpointErrorKind {
  Io,
  BadMagic,
  BadVersion,
  Truncated,
  BadCrc,
  BadDtype,
  ShapeMismatch,
  MissingTensor,
};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

// Container layout (little-endian):
//   magic "GMCK" | u32 version=1 | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 dtype (1=f32, 2=f64)
//               | u8 ndim | u32 dims[ndim] | raw values
//   trailing u64 CRC-64 of all preceding bytes

namespace detail {

constexpr char kMagic[4] = {'G', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class S>
constexpr std::uint8_t dtype_code();
template <>
constexpr std::uint8_t dtype_code<float>() {
  return 1;
}
template <>
constexpr std::uint8_t dtype_code<double>() {
  return 2;
}

inline void put_bytes(std::vector<std::uint8_t>& buf, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  buf.insert(buf.end(), b, b + n);
}

template <class T>
void put_le(std::vector<std::uint8_t>& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t n) : data_(data), n_(n) {}

  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > n_)
      throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint: truncated file");
  }
  const std::uint8_t* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// One stored tensor, dtype-erased.
struct CheckpointTensor {
  std::uint8_t dtype = 0;  // 1=f32, 2=f64
  Shape shape;
  std::vector<std::uint8_t> raw;

  Index numel() const { return shape_numel(shape); }

  template <class S>
  void copy_into(Tensor<S>& dst, const std::string& name) const {
    if (dtype != detail::dtype_code<S>())
      throw CheckpointError(CheckpointErrorKind::BadDtype,
                            "checkpoint: dtype mismatch for tensor '" + name + "'");
    if (shape != dst.shape())
      throw CheckpointError(CheckpointErrorKind::ShapeMismatch,
                            "checkpoint: shape mismatch for tensor '" + name + "': file has " +
                                shape_str(shape) + ", model expects " + shape_str(dst.shape()));
    std::memcpy(dst.value().data(), raw.data(), raw.size());
  }
};

using CheckpointMap = std::map<std::string, CheckpointTensor>;

template <class S>
void checkpoint_serialize(std::vector<std::uint8_t>& buf,
                          const std::vector<std::pair<std::string, Tensor<S>>>& tensors) {
  detail::put_bytes(buf, detail::kMagic, 4);
  detail::put_le<std::uint32_t>(buf, detail::kVersion);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
    detail::put_bytes(buf, name.data(), name.size());
    buf.push_back(detail::dtype_code<S>());
    buf.push_back(static_cast<std::uint8_t>(t.ndim()));
    for (Index d : t.shape()) detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    detail::put_bytes(buf, t.value().data(), static_cast<std::size_t>(t.numel()) * sizeof(S));
  }
  const std::uint64_t crc = crc64(buf.data(), buf.size());
  detail::put_le<std::uint64_t>(buf, crc);
}

template <class S>
void checkpoint_save(Module<S>& model, const std::filesystem::path& path) {
  std::vector<std::uint8_t> buf;
  checkpoint_serialize(buf, model.named_state());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw CheckpointError(CheckpointErrorKind::Io,
                          "checkpoint: cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::Io, "checkpoint: write failed");
}

inline CheckpointMap checkpoint_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw CheckpointError(CheckpointErrorKind::Io, "checkpoint: cannot open: " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 4 + 4 + 4 + 8)
    throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint: file too short");

  const std::uint64_t stored_crc = [&] {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(buf[buf.size() - 8 + i]) << (8 * i);
    return v;
  }();
  if (crc64(buf.data(), buf.size() - 8) != stored_crc)
    throw CheckpointError(CheckpointErrorKind::BadCrc, "checkpoint: CRC mismatch");

  detail::Reader r(buf.data(), buf.size() - 8);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, detail::kMagic, 4) != 0)
    throw CheckpointError(CheckpointErrorKind::BadMagic, "checkpoint: bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != detail::kVersion)
    throw CheckpointError(CheckpointErrorKind::BadVersion,
                          "checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.le<std::uint32_t>();
  CheckpointMap map;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint16_t>();
    std::string name(name_len, '\0');
    r.raw(name.data(), name_len);
    CheckpointTensor t;
    t.dtype = r.le<std::uint8_t>();
    if (t.dtype != 1 && t.dtype != 2)
      throw CheckpointError(CheckpointErrorKind::BadDtype,
                            "checkpoint: unknown dtype code for tensor '" + name + "'");
    const auto ndim = r.le<std::uint8_t>();
    for (int d = 0; d < ndim; ++d) t.shape.push_back(r.le<std::uint32_t>());
    const std::size_t bytes =
        static_cast<std::size_t>(t.numel()) * (t.dtype == 1 ? sizeof(float) : sizeof(double));
    t.raw.resize(bytes);
    r.raw(t.raw.data(), bytes);
    map.emplace(std::move(name), std::move(t));
  }
  if (r.remaining() != 0)
    throw CheckpointError(CheckpointErrorKind::Truncated,
                          "checkpoint: trailing bytes after last tensor");
  return map;
}

/// Strict load: every model tensor must be present with matching dtype and
/// shape, and the file may not carry unknown tensors.
template <class S>
void checkpoint_load(Module<S>& model, const std::filesystem::path& path) {
  CheckpointMap map = checkpoint_read(path);
  std::size_t used = 0;
  for (auto& [name, tensor] : model.named_state()) {
    auto it = map.find(name);
    if (it == map.end())
      throw CheckpointError(CheckpointErrorKind::MissingTensor,
                            "checkpoint: missing tensor '" + name + "'");
    it->second.copy_into(tensor, name);
    ++used;
  }
  if (used != map.size())
    for (auto& [name, t] : map)
      if (![&] {
            for (auto& [n, unused] : model.named_state())
              if (n == name) return true;
            return false;
          }())
        throw CheckpointError(CheckpointErrorKind::MissingTensor,
                              "checkpoint: unexpected tensor '" + name + "' not in model");
}

}  // namespace gmlab
