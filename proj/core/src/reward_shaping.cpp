#include "rarlhf/reward_shaping.hpp"

#include <algorithm>

#include "rarlhf/error.hpp"

namespace rarlhf {

void BetaController::validate() const {
  if (!(beta > 0.0)) throw ContractViolation("beta must be > 0");
  if (!(kl_target > 0.0)) throw ContractViolation("kl_target must be > 0");
  if (!(k_beta > 0.0)) throw ContractViolation("k_beta must be > 0");
  if (!(k_beta * kClipBound < 1.0)) throw ContractViolation("k_beta * 0.2 must be < 1");
}

BetaController beta_update(const BetaController& ctrl, double kl_hat) {
  if (!(ctrl.kl_target > 0.0)) throw ContractViolation("beta_update: kl_target must be > 0");
  const double e = std::clamp((kl_hat - ctrl.kl_target) / ctrl.kl_target,
                              -BetaController::kClipBound, BetaController::kClipBound);
  BetaController next = ctrl;
  next.beta = ctrl.beta * (1.0 + ctrl.k_beta * e);
  return next;
}

std::vector<double> per_token_rewards(const Trajectory& traj, double beta) {
  const std::size_t n = traj.masks.size();
  if (traj.logprobs_actor.size() != n || traj.logprobs_ref.size() != n)
    throw ContractViolation("per_token_rewards: misaligned trajectory arrays");
  std::vector<double> rewards(n, 0.0);
  std::size_t last = n;
  for (std::size_t t = 0; t < n; ++t) {
    if (traj.masks[t] == 0.0) continue;
    rewards[t] = -beta * (traj.logprobs_actor[t] - traj.logprobs_ref[t]);
    last = t;
  }
  if (last == n) throw ContractViolation("per_token_rewards: trajectory has no generated tokens");
  rewards[last] += traj.env_score;
  return rewards;
}

void apply_shaped_rewards(Trajectory& traj, double beta) {
  traj.per_token_rewards = per_token_rewards(traj, beta);
}

double kl_estimate(std::span<const Trajectory> batch) {
  if (batch.empty()) throw ContractViolation("kl_estimate: empty batch");
  double sum = 0.0;
  double count = 0.0;
  for (const auto& traj : batch) {
    for (std::size_t t = 0; t < traj.masks.size(); ++t) {
      if (traj.masks[t] == 0.0) continue;
      sum += traj.logprobs_actor[t] - traj.logprobs_ref[t];
      count += 1.0;
    }
  }
  if (count == 0.0) throw ContractViolation("kl_estimate: no generated tokens");
  return sum / count;
}

double shaped_return(const Trajectory& traj, double gamma) {
  double ret = 0.0;
  double discount = 1.0;
  for (std::size_t t = 0; t < traj.masks.size(); ++t) {
    if (traj.masks[t] == 0.0) continue;
    ret += discount * traj.per_token_rewards[t];
    discount *= gamma;
  }
  return ret;
}

}  // namespace rarlhf
