#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace rarlhf::detail {

// ceil(x) that ignores representation noise just above an integer, so that
// e.g. ceil(0.3 * 10) is 3 and not 4.
inline std::size_t ceil_count(double x) {
  const double tol = 1e-9 * std::max(1.0, std::abs(x));
  return static_cast<std::size_t>(std::max(0.0, std::ceil(x - tol)));
}

}  // namespace rarlhf::detail
