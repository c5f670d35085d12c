#include "rarlhf/risk_scheduler.hpp"

#include <algorithm>
#include <string>

#include "rarlhf/detail/math.hpp"
#include "rarlhf/error.hpp"

namespace rarlhf {

RiskSchedule::RiskSchedule(std::size_t batch_size, double alpha, std::size_t warm_start,
                           double rho, std::size_t iterations)
    : batch_size_(batch_size),
      alpha_(alpha),
      warm_start_(warm_start),
      rho_(rho),
      iterations_(iterations) {
  if (batch_size_ < 1) throw ContractViolation("schedule: batch size must be >= 1");
  if (!(alpha_ > 0.0 && alpha_ <= 1.0)) throw ContractViolation("schedule: alpha must be in (0, 1]");
  if (!(rho_ > 0.0 && rho_ <= 1.0)) throw ContractViolation("schedule: rho must be in (0, 1]");
  if (iterations_ < 1) throw ContractViolation("schedule: M must be >= 1");
  ramp_end_ = detail::ceil_count(rho_ * static_cast<double>(iterations_));
  if (!(warm_start_ >= 1 && warm_start_ < ramp_end_ && ramp_end_ <= iterations_))
    throw ContractViolation("schedule: need 1 <= i0 < ceil(rho*M) <= M (i0=" +
                            std::to_string(warm_start_) + ", ceil(rho*M)=" +
                            std::to_string(ramp_end_) + ", M=" + std::to_string(iterations_) +
                            ")");
  drop_rate_ = (1.0 - alpha_) / static_cast<double>(ramp_end_ - warm_start_);
  min_quota_ = std::max<std::size_t>(1, detail::ceil_count(alpha_ * static_cast<double>(batch_size_)));
}

std::size_t RiskSchedule::batch_quota(std::size_t i) const {
  if (i < 1 || i > iterations_)
    throw ContractViolation("batch_quota: iteration " + std::to_string(i) + " outside [1, " +
                            std::to_string(iterations_) + "]");
  if (i <= warm_start_) return batch_size_;
  if (i >= ramp_end_) return min_quota_;
  const double frac =
      std::max(alpha_, 1.0 - drop_rate_ * static_cast<double>(i - warm_start_));
  const std::size_t quota = detail::ceil_count(static_cast<double>(batch_size_) * frac);
  return std::clamp(quota, min_quota_, batch_size_);
}

std::vector<std::pair<std::size_t, std::size_t>> RiskSchedule::table() const {
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  rows.reserve(iterations_);
  for (std::size_t i = 1; i <= iterations_; ++i) rows.emplace_back(i, batch_quota(i));
  return rows;
}

}  // namespace rarlhf
