#pragma once

// Flat `section.key = value` experiment configuration. Lines starting with
// '#' are comments. Lists are comma separated.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rarlhf/policy.hpp"
#include "rarlhf/ppo.hpp"
#include "rarlhf/reward_shaping.hpp"
#include "rarlhf/synth_env.hpp"
#include "rarlhf/trainer.hpp"

namespace rarlhf {

struct ConfigEntries {
  std::map<std::string, std::string> values;
  std::map<std::string, std::size_t> lines;  // source line of each key, 0 for overrides
};

ConfigEntries parse_config(std::istream& in);
ConfigEntries parse_config_file(const std::filesystem::path& path);
// "key=value"; throws ConfigError when there is no '='.
void apply_override(ConfigEntries& entries, const std::string& assignment);

struct ExperimentConfig {
  // env
  double repetition_penalty = 1.0;
  double reward_scale = 3.0;
  // data
  MixtureSpec mixture;
  std::size_t train_size = 2000;
  std::size_t test_size = 1000;
  std::string train_csv;  // empty = synthetic
  std::string test_csv;
  // reference policy
  std::size_t window = 4;
  CorpusSpec corpus;
  std::size_t pretrain_size = 2000;
  std::size_t pretrain_epochs = 60;
  std::size_t sft_size = 500;
  std::size_t sft_epochs = 20;
  double sft_learning_rate = 1.0;
  std::size_t perplexity_size = 200;
  // ppo, kl, schedule, rollout, train
  PPOConfig ppo;
  BetaController kl;
  bool adaptive_kl = true;
  double alpha = 0.4;
  std::size_t warm_start = 30;
  double rho = 0.95;
  std::size_t iterations = 194;
  std::size_t max_new_tokens = 12;
  long eos = -1;  // negative = none
  SelectOn select_on = SelectOn::kShaped;
  std::size_t threads = 1;
  std::size_t checkpoint_every = 0;
  // eval
  std::size_t quantile_bins = 10;
  std::vector<double> tail_thresholds{-2.5};
  double hist_lo = -4.0;
  double hist_hi = 4.0;
  std::size_t hist_bins = 16;
  // run
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::string> models{"sft", "rlhf", "ra_rlhf"};
  std::string output_dir = "runs/default";

  // Throws ConfigError naming the first invalid field.
  void validate() const;

  // Without risk_averse the schedule is dropped.
  TrainerConfig trainer_config(std::uint64_t seed, bool risk_averse) const;
};

// Unknown keys and malformed values raise ConfigError with the key name.
ExperimentConfig to_experiment_config(const ConfigEntries& entries);
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});
// Every field, one per line, in a form parse_config reads back.
std::string to_config_text(const ExperimentConfig& cfg);

}  // namespace rarlhf
