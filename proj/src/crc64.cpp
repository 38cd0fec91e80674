#include "gmlab/crc64.hpp"

#include <array>

namespace gmlab {

namespace {

std::array<std::uint64_t, 256> make_table() {
  // reflected form of the ECMA-182 polynomial
  constexpr std::uint64_t poly = 0xC96C5795D7870F42ULL;
  std::array<std::uint64_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint64_t crc = i;
    for (int b = 0; b < 8; ++b) crc = (crc >> 1) ^ ((crc & 1) ? poly : 0);
    table[i] = crc;
  }
  return table;
}

const std::array<std::uint64_t, 256>& table() {
  static const auto t = make_table();
  return t;
}

}  // namespace

void Crc64::update(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  const auto& t = table();
  for (std::size_t i = 0; i < n; ++i) state_ = (state_ >> 8) ^ t[(state_ ^ p[i]) & 0xFF];
}

std::uint64_t crc64(const void* data, std::size_t n) {
  Crc64 c;
  c.update(data, n);
  return c.value();
}

}  // namespace gmlab
