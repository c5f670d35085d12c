#pragma once

#include <cstddef>
#include <vector>

#include "rarlhf/policy.hpp"

namespace rarlhf {

struct AdamConfig {
  double learning_rate = 1.41e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer over actor and value weights. Minimizes: the
// update moves against the gradient.
class Adam {
 public:
  Adam() = default;
  Adam(const PolicyParams& shape, AdamConfig config);

  void step(PolicyParams& params, const PolicyGradient& grad);

  const AdamConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return steps_; }

  // Moment estimates share the params layout so they can be checkpointed with
  // the policy format.
  const PolicyParams& first_moment() const noexcept { return m_; }
  const PolicyParams& second_moment() const noexcept { return v_; }
  void restore(PolicyParams m, PolicyParams v, std::size_t steps);

 private:
  AdamConfig config_;
  PolicyParams m_;
  PolicyParams v_;
  std::size_t steps_ = 0;
};

}  // namespace rarlhf
