#pragma once

#include <charconv>
#include <cstdint>
#include <string>

namespace c3po {

/// Shortest round-trip decimal form of a double. Used everywhere a double
/// lands in a metrics or report file so that reruns are byte-identical.
inline std::string fmt_real(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  return std::string(buf, ptr);
}

inline std::string fmt_int(std::int64_t x) { return std::to_string(x); }

/// Fixed-precision form for human-facing tables.
std::string fmt_fixed(double x, int decimals);

}  // namespace c3po
