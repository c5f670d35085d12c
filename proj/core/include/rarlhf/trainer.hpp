#pragma once

// The RA-RLHF training loop. Each iteration samples a prompt batch, rolls out
// the current policy, shapes rewards with the KL penalty, keeps the B0
// lowest-return trajectories, runs PPO epochs on them and updates beta from
// the same selection. Without a risk schedule every trajectory is kept, which
// is plain KL-regularized PPO.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rarlhf/optimizer.hpp"
#include "rarlhf/policy.hpp"
#include "rarlhf/ppo.hpp"
#include "rarlhf/reward_shaping.hpp"
#include "rarlhf/risk_scheduler.hpp"
#include "rarlhf/synth_env.hpp"
#include "rarlhf/token_mdp.hpp"

namespace rarlhf {

enum class SelectOn { kShaped, kEnv };

struct TrainerConfig {
  PPOConfig ppo;
  AdamConfig adam;  // learning_rate is taken from ppo.learning_rate
  BetaController beta;
  bool adaptive_kl = true;
  std::optional<RiskSchedule> schedule;  // absent = risk-neutral
  std::size_t iterations = 194;
  RolloutOptions rollout;
  SelectOn select_on = SelectOn::kShaped;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // rollout workers; results do not depend on it

  void validate() const;
};

struct TrainerState {
  PolicyParams params;
  Adam optimizer;
  BetaController beta;
  std::size_t iteration = 0;  // completed iterations
};

TrainerState make_initial_state(const PolicyParams& init, const TrainerConfig& cfg);

struct IterationStats {
  std::size_t iteration = 0;
  double env_reward_mean = 0.0;     // over the full batch
  double shaped_return_mean = 0.0;  // over the full batch, per trajectory
  double kl_hat = 0.0;              // over the selected trajectories
  double beta = 0.0;                // value used to shape this iteration's rewards
  std::size_t b0 = 0;
  double pg_loss = 0.0;
  double vf_loss = 0.0;
  double total_loss = 0.0;
  double gen_len_mean = 0.0;
  double dist2_mean = 0.0;
};

// Full batch of one iteration, exposed for inspection and tests.
struct IterationBatch {
  std::vector<Trajectory> trajectories;
  std::vector<std::size_t> selected;
};

// Rolls out, shapes and scores B trajectories for iteration i from `state`.
std::vector<Trajectory> collect_batch(const TrainerState& state, const ReferencePolicy& ref,
                                      const PromptDataset& prompts, const ValenceEnv& env,
                                      const TrainerConfig& cfg, std::size_t i);

IterationStats train_iteration(TrainerState& state, const ReferencePolicy& ref,
                               const PromptDataset& prompts, const ValenceEnv& env,
                               const TrainerConfig& cfg, std::size_t i,
                               IterationBatch* batch_out = nullptr);

struct TrainIo {
  std::optional<std::filesystem::path> stats_csv;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::size_t checkpoint_every = 0;  // 0 = only after the last iteration
  std::function<void(const IterationStats&)> on_iteration;
};

struct TrainResult {
  TrainerState state;
  std::vector<IterationStats> stats;
};

// Runs iterations state.iteration + 1 .. cfg.iterations. Starting from a
// restored checkpoint resumes the run; the stats CSV is appended to.
TrainResult train(TrainerState state, const ReferencePolicy& ref, const PromptDataset& prompts,
                  const ValenceEnv& env, const TrainerConfig& cfg, const TrainIo& io = {});

inline const char* kStatsHeader =
    "iteration,env_reward_mean,shaped_return_mean,kl_hat,beta,B0,pg_loss,vf_loss,total_loss,"
    "gen_len_mean,dist2_mean";
std::string format_stats_row(const IterationStats& s);

// Checkpoint directory layout: policy.bin, adam_m.bin, adam_v.bin, state.json.
void save_training_checkpoint(const std::filesystem::path& dir, const TrainerState& state,
                              const TrainerConfig& cfg);
TrainerState load_training_checkpoint(const std::filesystem::path& dir, const TrainerConfig& cfg);

}  // namespace rarlhf
