#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mmat {

// Shortest decimal that parses back to the same double.
std::string format_double(double v);

std::string format_hex(std::uint64_t v, int width = 16);

// "k/255" when v is (to 1e-9) an integer multiple of 1/255, else format_double(v).
std::string format_budget(double v);

// 64-bit FNV-1a of the bytes, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace mmat
