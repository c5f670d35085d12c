#include "rarlhf/ngram.hpp"

#include <set>
#include <string>
#include <vector>

#include "rarlhf/error.hpp"

namespace rarlhf {

double dist_n(std::span<const TokenId> tokens, std::size_t n) {
  if (n == 0) throw ContractViolation("dist_n: n must be >= 1");
  if (tokens.size() < n)
    throw ContractViolation("dist_n: sequence of length " + std::to_string(tokens.size()) +
                            " is shorter than n = " + std::to_string(n));
  const std::size_t count = tokens.size() - n + 1;
  std::set<std::vector<TokenId>> distinct;
  for (std::size_t i = 0; i < count; ++i)
    distinct.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                     tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
  return static_cast<double>(distinct.size()) / static_cast<double>(count);
}

}  // namespace rarlhf
