#pragma once

// Soft-risk batch-quota schedule. Iterations are 1-based:
//   i <= i0                  -> B0 = B
//   i >= ceil(rho * M)       -> B0 = ceil(alpha * B)
//   otherwise                -> B0 = ceil(B * max(alpha, 1 - K (i - i0)))
// with K = (1 - alpha) / (ceil(rho * M) - i0).

#include <cstddef>
#include <utility>
#include <vector>

namespace rarlhf {

class RiskSchedule {
 public:
  // Throws ContractViolation unless B >= 1, alpha in (0, 1], rho in (0, 1] and
  // 1 <= i0 < ceil(rho * M) <= M.
  RiskSchedule(std::size_t batch_size, double alpha, std::size_t warm_start, double rho,
               std::size_t iterations);

  std::size_t batch_size() const noexcept { return batch_size_; }
  double alpha() const noexcept { return alpha_; }
  std::size_t warm_start() const noexcept { return warm_start_; }
  double rho() const noexcept { return rho_; }
  std::size_t iterations() const noexcept { return iterations_; }

  // ceil(rho * M): first iteration that uses the final quota.
  std::size_t ramp_end() const noexcept { return ramp_end_; }
  // Drop rate K; zero when alpha = 1.
  double drop_rate() const noexcept { return drop_rate_; }
  std::size_t min_quota() const noexcept { return min_quota_; }

  // Number of lowest-return trajectories used at iteration i (1 <= i <= M).
  std::size_t batch_quota(std::size_t i) const;

  // (i, B0) for i = 1..M.
  std::vector<std::pair<std::size_t, std::size_t>> table() const;

 private:
  std::size_t batch_size_;
  double alpha_;
  std::size_t warm_start_;
  double rho_;
  std::size_t iterations_;
  std::size_t ramp_end_;
  double drop_rate_;
  std::size_t min_quota_;
};

}  // namespace rarlhf
