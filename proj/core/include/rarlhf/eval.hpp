#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rarlhf/ngram.hpp"
#include "rarlhf/policy.hpp"
#include "rarlhf/synth_env.hpp"
#include "rarlhf/token_mdp.hpp"

namespace rarlhf {

struct QuantilePoint {
  double quantile = 0.0;  // midpoint of the bin in [0, 1]
  double mean_score = 0.0;
  std::size_t count = 0;
};

// Sorts prompts by prompt score (stable), splits them into n_bins equal-count
// bins with the remainder going one each to the lowest bins, and averages the
// completion scores per bin.
std::vector<QuantilePoint> quantile_curve(std::span<const double> prompt_scores,
                                          std::span<const double> completion_scores,
                                          std::size_t n_bins);

// Mean completion score over prompts scoring <= threshold. Throws
// ContractViolation when no prompt qualifies.
double tail_average(std::span<const double> prompt_scores,
                    std::span<const double> completion_scores, double threshold);

// Returned when a predicted token has probability zero.
inline constexpr double kPerplexityOverflow = std::numeric_limits<double>::infinity();

// 2^(-(1/N) sum log2 p(w_i | w_<i)) over the N = L - 1 predicted tokens. The
// model's context is its feature window, so this is exact.
double perplexity(const PolicyParams& params, std::span<const TokenId> tokens);
// Same over a corpus: N is the total number of predicted tokens.
double perplexity(const PolicyParams& params, std::span<const std::vector<TokenId>> sequences);

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;  // values below edges.front(), also counted in the first bin
  std::size_t overflow = 0;   // values at or above edges.back(), also counted in the last bin

  std::size_t out_of_range() const noexcept { return underflow + overflow; }
};

// Half-open bins [e_k, e_k+1). Edges must be strictly increasing (>= 2 of them).
Histogram histogram(std::span<const double> scores, std::span<const double> edges);
std::vector<double> uniform_edges(double lo, double hi, std::size_t bins);

struct Completion {
  std::size_t prompt_index = 0;
  double prompt_score = 0.0;
  std::vector<TokenId> prompt;
  std::vector<TokenId> generated;
  double score = 0.0;
};

struct EvalOptions {
  std::size_t quantile_bins = 10;
  std::vector<double> tail_thresholds{-2.5};
  std::vector<double> histogram_edges = uniform_edges(-4.0, 4.0, 16);
  RolloutOptions rollout;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::string label;
  std::vector<Completion> completions;
  std::vector<QuantilePoint> quantile;
  std::map<double, double> tail_average;  // threshold -> mean completion score
  Histogram histogram;
  double mean_score = 0.0;
  double gen_len_mean = 0.0;
  double dist1 = 0.0, dist2 = 0.0, dist3 = 0.0;  // mean per-completion dist_n
  double perplexity = 0.0;
};

// One sampled completion per test prompt, each from its own rng stream.
EvalReport evaluate(const PolicyParams& params, const PromptDataset& test, const ValenceEnv& env,
                    std::span<const std::vector<TokenId>> perplexity_corpus,
                    const EvalOptions& options, std::string label = {});

// Writes histogram.csv, quantile.csv, metrics.csv, completions.csv and
// summary.json into dir.
void write_eval_report(const std::filesystem::path& dir, const EvalReport& report);
// Reads back what write_eval_report produced.
EvalReport read_eval_report(const std::filesystem::path& dir);

}  // namespace rarlhf
