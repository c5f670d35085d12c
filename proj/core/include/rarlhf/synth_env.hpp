#pragma once

// Synthetic scoring environments and prompt datasets. The valence
// environment stands in for a sentiment/toxicity classifier: every token has
// a valence in [-1, 1] and a completion scores its scaled mean valence minus
// a penalty for repeated bigrams.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rarlhf/rng.hpp"
#include "rarlhf/token_mdp.hpp"

namespace rarlhf {

struct ValenceEnv {
  std::vector<double> valence;
  double repetition_penalty_weight = 0.0;
  double scale = 3.0;

  std::size_t vocab_size() const noexcept { return valence.size(); }
  // Throws ContractViolation unless valences lie in [-1, 1], at least one is
  // positive and one negative, scale > 0 and the penalty weight >= 0.
  void validate() const;
};

// scale * mean valence of tokens[prompt_len..] - penalty * (1 - Dist-2).
// A single generated token has no bigram and counts as Dist-2 = 1.
double score(const ValenceEnv& env, std::span<const TokenId> tokens, std::size_t prompt_len);

// Default 16-token environment: six positive, four near-neutral and six
// negative tokens. Scores span roughly [-3, 3].
ValenceEnv make_toy_env(double repetition_penalty_weight = 1.0, double scale = 3.0);
std::vector<std::string> toy_token_labels();

enum class Split { kTrain, kTest };

struct MixtureSpec {
  double positive_fraction = 0.7;
  double tail_mass = 0.4;  // fraction of negative prompts drawn from the extreme tail
  double pos_lo = 0.5, pos_hi = 3.0;
  double neg_lo = -2.5, neg_hi = -0.5;
  double tail_lo = -3.0, tail_hi = -2.5;
  std::size_t prompt_len = 4;
};

struct PromptDataset {
  std::vector<Prompt> prompts;
  MixtureSpec mixture;
  Split split = Split::kTrain;
  bool degenerate = false;  // some class has a zero-width score range
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return prompts.size(); }
  std::vector<double> scores() const;
};

// Draws n prompts: a class, then a target score from that class's range, then
// composes prompt_len distinct tokens greedily so their scaled mean valence
// approaches the target. The recorded score is the environment score of the
// composed tokens, so it is exact.
PromptDataset generate_dataset(const ValenceEnv& env, const MixtureSpec& spec, std::size_t n,
                               Rng& rng, Split split = Split::kTrain);

// Token sequence of `length` distinct-as-possible tokens whose scaled mean
// valence is close to `target_score`.
std::vector<TokenId> compose_prompt(const ValenceEnv& env, double target_score,
                                    std::size_t length, Rng& rng);

// Reads `prompt_tokens,score` CSV. A blank score is computed with `env` when
// supplied. Throws ParseError carrying the 1-based line number.
PromptDataset load_prompts_csv(const std::filesystem::path& path,
                               const ValenceEnv* env = nullptr);
void save_prompts_csv(const std::filesystem::path& path, const PromptDataset& dataset);

struct CorpusSpec {
  double positive_fraction = 0.5;
  double persistence = 0.85;  // probability a token is drawn from the sequence's class
  std::size_t length = 16;
};

struct LabeledSequence {
  std::vector<TokenId> tokens;
  int label = 1;
};

// Sentiment-persistent text: each sequence picks a class and draws most of its
// tokens from that class's tokens. Used to pretrain the policy before SFT so the
// reference model continues the sentiment of its context.
std::vector<LabeledSequence> generate_corpus(const ValenceEnv& env, const CorpusSpec& spec,
                                             std::size_t n, Rng& rng);

}  // namespace rarlhf
