#include "rarlhf/optimizer.hpp"

#include <cmath>

#include "rarlhf/error.hpp"

namespace rarlhf {

Adam::Adam(const PolicyParams& shape, AdamConfig config)
    : config_(config),
      m_(shape.vocab_size(), shape.window()),
      v_(shape.vocab_size(), shape.window()) {}

void Adam::step(PolicyParams& params, const PolicyGradient& grad) {
  if (grad.size() != params.num_params() || m_.num_params() != params.num_params())
    throw ContractViolation("Adam::step: shape mismatch");
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.num_params(); ++i) {
    const double g = grad.flat(i);
    double& m = m_.flat(i);
    double& v = v_.flat(i);
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    params.flat(i) -= config_.learning_rate * (m / c1) / (std::sqrt(v / c2) + config_.epsilon);
  }
}

void Adam::restore(PolicyParams m, PolicyParams v, std::size_t steps) {
  if (m.num_params() != m_.num_params() || v.num_params() != v_.num_params())
    throw ContractViolation("Adam::restore: shape mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  steps_ = steps;
}

}  // namespace rarlhf
