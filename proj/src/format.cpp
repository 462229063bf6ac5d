#include "mmat/format.hpp"

#include <array>
#include <charconv>
#include <cmath>

#include "mmat/random.hpp"

namespace mmat {

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

std::string format_hex(std::uint64_t v, int width) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(static_cast<std::size_t>(width), '0');
  for (int i = width - 1; i >= 0 && v; --i, v >>= 4) out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return out;
}

std::string format_budget(double v) {
  if (v == 0.0) return "0";
  const double k = std::round(v * 255.0);
  if (std::abs(v * 255.0 - k) <= 1e-9 && k >= 0.0) {
    return std::to_string(static_cast<long long>(k)) + "/255";
  }
  return format_double(v);
}

std::string fnv1a_hex(std::string_view bytes) { return format_hex(rng::hash_name(bytes)); }

}  // namespace mmat
