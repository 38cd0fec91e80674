#pragma once

#include <cstddef>
#include <cstdint>

namespace gmlab {

/// CRC-64/XZ (reflected ECMA-182 polynomial, init and xorout ~0).
class Crc64 {
 public:
  void update(const void* data, std::size_t n);
  std::uint64_t value() const { return ~state_; }

 private:
  std::uint64_t state_ = ~0ULL;
};

std::uint64_t crc64(const void* data, std::size_t n);

}  // namespace gmlab
