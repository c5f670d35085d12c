#pragma once

#include <cstddef>
#include <span>

#include "rarlhf/token_mdp.hpp"

namespace rarlhf {

// Distinct n-gram ratio: number of distinct n-grams divided by the number of
// n-grams (L - n + 1). Throws ContractViolation when tokens.size() < n.
double dist_n(std::span<const TokenId> tokens, std::size_t n);

}  // namespace rarlhf
