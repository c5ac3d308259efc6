#include "c3po/format.hpp"

#include <cstdio>

namespace c3po {

std::string fmt_fixed(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, x);
  return buf;
}

}  // namespace c3po
