#pragma once

// Orchestration behind the command-line tool: reference-policy construction,
// per-seed train/eval runs, schedule dumps, sweeps and merged reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rarlhf/config.hpp"
#include "rarlhf/eval.hpp"
#include "rarlhf/risk_scheduler.hpp"
#include "rarlhf/trainer.hpp"

namespace rarlhf {

using Logger = std::function<void(const std::string&)>;

struct ExperimentSetup {
  ValenceEnv env;
  PromptDataset train;
  PromptDataset test;
  PolicyParams reference;
  std::vector<std::vector<TokenId>> heldout_positive;  // perplexity corpus
};

// Pretrains a zero policy on a sentiment-persistent corpus, then fine-tunes it
// on positive-class sequences. Deterministic in (cfg, seed).
PolicyParams build_reference(const ExperimentConfig& cfg, const ValenceEnv& env,
                             std::uint64_t seed);
ExperimentSetup build_setup(const ExperimentConfig& cfg, std::uint64_t seed);

EvalOptions eval_options(const ExperimentConfig& cfg, std::uint64_t seed);

struct ModelResult {
  std::string model;  // sft, rlhf or ra_rlhf
  std::uint64_t seed = 0;
  PolicyParams params;
  std::vector<IterationStats> stats;
  EvalReport report;
};

// Trains (unless model is sft) and evaluates one model. With a directory,
// writes stats.csv, checkpoints/, eval/ and meta.json into it.
ModelResult run_model(const ExperimentConfig& cfg, const ExperimentSetup& setup,
                      std::uint64_t seed, const std::string& model,
                      const std::optional<std::filesystem::path>& dir, const Logger& log = {});

// Relative paths are placed under $RARLHF_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output_dir(const std::filesystem::path& dir);
// Creates dir. A non-empty existing dir is an error unless force, in which
// case it is emptied first.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

// Every seed x model in cfg, under root/seed_<s>/<model>/.
std::vector<ModelResult> run_train(const ExperimentConfig& cfg, const std::filesystem::path& root,
                                   bool force, bool parallel_seeds, const Logger& log = {});

// Evaluates a saved policy on the configured test split.
EvalReport run_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& out_dir, std::uint64_t seed, std::string label,
                    bool force);

void write_schedule_csv(std::ostream& out, const RiskSchedule& schedule);

struct SweepRow {
  std::size_t warm_start = 0;
  double alpha = 0.0;
  double rho = 0.0;
  std::uint64_t seed = 0;
  double mean_reward = 0.0;
  double tail_average = 0.0;
  double perplexity = 0.0;
  double dist2 = 0.0;
};

struct SweepGrid {
  std::vector<double> alphas;
  std::vector<std::size_t> warm_starts;
  std::vector<double> rhos;
};

// One RA-RLHF run per grid point and seed.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const SweepGrid& grid,
                                const std::optional<std::filesystem::path>& out_csv,
                                const Logger& log = {});
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

struct ReportEntry {
  std::string model;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  EvalReport report;
};

// Collects every evaluated model under run_dirs and writes shared-bin
// histograms, quantile curves and a metric table with mean and standard
// deviation across seeds. Runs scored by different environments are rejected.
std::vector<ReportEntry> run_report(const std::vector<std::filesystem::path>& run_dirs,
                                    const std::filesystem::path& out_dir, std::size_t bins = 16,
                                    std::size_t quantile_bins = 10, double tail_threshold = -2.5);

}  // namespace rarlhf
