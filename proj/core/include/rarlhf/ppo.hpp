#pragma once

// PPO mechanics over padded batches: GAE, masked whitening, clipped policy and
// value losses, and the analytic gradient of the total loss.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rarlhf/policy.hpp"
#include "rarlhf/token_mdp.hpp"

namespace rarlhf {

struct PPOConfig {
  double gamma = 1.0;
  double lam = 0.95;
  double cliprange = 0.2;
  double cliprange_value = 0.2;
  double vf_coef = 0.1;
  std::size_t ppo_epochs = 4;
  double learning_rate = 1.41e-5;
  std::size_t batch_size = 128;
  std::size_t minibatch_size = 0;  // 0 = whole selected batch

  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantages + values
};

// One row. delta_t = r_t + gamma V_{t+1} - V_t, with V beyond the last
// masked-in position taken as 0; A_t = delta_t + gamma lam A_{t+1}. Masked-out
// positions get A = 0 and return = V.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> masks, double gamma, double lam);

// Row-major rows x positions, applied row by row.
GaeResult compute_gae(std::size_t rows, std::span<const double> rewards,
                      std::span<const double> values, std::span<const double> masks, double gamma,
                      double lam);

// Z-scores the masked-in entries with population variance and a 1e-8
// regularizer; other entries are left untouched. With fewer than two
// masked-in entries nothing is changed, false is returned and *warning is set.
bool whiten(std::span<double> values, std::span<const double> masks,
            std::string* warning = nullptr);

struct PPOLosses {
  double pg_loss = 0.0;
  double vf_loss = 0.0;
  double total = 0.0;
  double clip_fraction = 0.0;
};

PPOLosses ppo_losses(std::span<const double> logprobs_new, std::span<const double> logprobs_old,
                     std::span<const double> advantages, std::span<const double> vpreds,
                     std::span<const double> values_old, std::span<const double> returns,
                     std::span<const double> masks, const PPOConfig& cfg);

// Rollout-time quantities for a padded batch, in batch layout.
struct PPOBatch {
  PaddedBatch batch;
  std::vector<double> old_logprobs;
  std::vector<double> old_values;
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Subset of rows, keeping the padded layout.
PPOBatch select_rows(const PPOBatch& full, std::span<const std::size_t> rows);

// Total loss of `params` on the batch. When grad is non-null the analytic
// gradient is added to it. Inside a clipped branch that is active the
// gradient is zero.
PPOLosses ppo_loss_and_grad(const PolicyParams& params, const PPOBatch& data,
                            const PPOConfig& cfg, PolicyGradient* grad);

}  // namespace rarlhf
