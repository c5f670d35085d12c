#pragma once

// KL-shaped per-token rewards and the adaptive KL coefficient controller.

#include <span>
#include <vector>

#include "rarlhf/token_mdp.hpp"

namespace rarlhf {

// Log-space proportional controller for the KL coefficient:
//   e = clip((kl_hat - kl_target) / kl_target, -0.2, 0.2),  beta <- beta * (1 + k_beta * e)
struct BetaController {
  static constexpr double kClipBound = 0.2;

  double beta = 0.2;
  double kl_target = 6.0;
  double k_beta = 0.0128;

  // Throws ContractViolation unless beta, kl_target, k_beta > 0 and
  // k_beta * kClipBound < 1 (which keeps beta positive forever).
  void validate() const;
};

BetaController beta_update(const BetaController& ctrl, double kl_hat);

// Reward row aligned with traj.masks: -beta * (logp_actor - logp_ref) on every
// generated position, plus env_score on the last generated position, 0 elsewhere.
std::vector<double> per_token_rewards(const Trajectory& traj, double beta);

// Fills traj.per_token_rewards.
void apply_shaped_rewards(Trajectory& traj, double beta);

// Mean of (logp_actor - logp_ref) over all generated positions of the batch.
// Signed: not clamped at zero.
double kl_estimate(std::span<const Trajectory> batch);

// Discounted sum of per-token rewards over generated positions, discount
// exponent starting at 0 on the first generated token.
double shaped_return(const Trajectory& traj, double gamma = 1.0);

}  // namespace rarlhf
