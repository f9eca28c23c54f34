#include "holepunch/time.h"

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace holepunch {

Duration from_ms(double ms) {
  return Duration(static_cast<std::int64_t>(std::llround(ms * 1e6)));
}

double to_ms(Duration d) { return static_cast<double>(d.count()) / 1e6; }

std::string format_ms(Duration d) {
  const std::int64_t ns = d.count();
  const bool negative = ns < 0;
  const std::uint64_t mag = negative ? 0 - static_cast<std::uint64_t>(ns)
                                     : static_cast<std::uint64_t>(ns);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%llu.%06llu", negative ? "-" : "",
                static_cast<unsigned long long>(mag / 1000000),
                static_cast<unsigned long long>(mag % 1000000));
  std::string out(buf);
  while (out.back() == '0') out.pop_back();
  if (out.back() == '.') out.pop_back();
  return out;
}

}  // namespace holepunch
