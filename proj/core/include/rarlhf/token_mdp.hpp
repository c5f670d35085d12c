#pragma once

// Token-level episodic MDP. A state is the token sequence produced so far
// (prompt followed by generated tokens), an action is the next token and the
// transition appends it deterministically. Reward is sparse and terminal.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rarlhf/rng.hpp"

namespace rarlhf {

using TokenId = std::int32_t;

// Marks padding positions inside a PaddedBatch. Never a valid action.
inline constexpr TokenId kPadToken = -1;

class Vocab {
 public:
  explicit Vocab(std::size_t size, std::vector<std::string> labels = {});

  std::size_t size() const noexcept { return size_; }
  bool contains(TokenId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < size_;
  }
  // Display string for a token; falls back to "t<id>".
  std::string label(TokenId id) const;

 private:
  std::size_t size_;
  std::vector<std::string> labels_;
};

struct Prompt {
  std::vector<TokenId> tokens;
  std::optional<double> score;
  // 1 = positive class, 0 = negative class, -1 = unknown (e.g. loaded from CSV).
  int label = -1;
};

struct EpisodeState {
  std::vector<TokenId> tokens;
};

// Returns `state` with `action` appended. Throws InvalidActionError when the
// action is outside the vocabulary.
EpisodeState transition(const Vocab& vocab, const EpisodeState& state, TokenId action);

// One episode, stored unpadded. Per-position arrays have length
// tokens.size() - 1: entry t describes the prediction of tokens[t + 1] from
// the prefix tokens[0..t] (the "logits at t are for token t+1" alignment).
struct Trajectory {
  std::size_t prompt_len = 0;
  std::vector<TokenId> tokens;
  std::vector<double> masks;           // 1 on generated positions, else 0
  std::vector<double> logprobs_actor;  // log pi_theta(tokens[t+1] | prefix)
  std::vector<double> logprobs_ref;    // log pi_ref(tokens[t+1] | prefix)
  std::vector<double> values;          // V(prefix)
  std::vector<double> per_token_rewards;
  double env_score = 0.0;
  std::size_t prompt_index = 0;  // index into the dataset the prompt came from

  std::size_t positions() const noexcept { return tokens.empty() ? 0 : tokens.size() - 1; }
  std::size_t generated_len() const noexcept { return tokens.size() - prompt_len; }
  std::span<const TokenId> generated() const {
    return std::span<const TokenId>(tokens).subspan(prompt_len);
  }
};

// Anything that scores next tokens given a prefix: the trained policy, its
// frozen reference, or hand-written test models.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual std::size_t vocab_size() const = 0;
  // Writes log pi(a | prefix) for every a into `out` (size vocab_size()).
  virtual void log_probs(std::span<const TokenId> prefix, std::span<double> out) const = 0;
  virtual double value(std::span<const TokenId> /*prefix*/) const { return 0.0; }
};

struct RolloutOptions {
  std::size_t max_new_tokens = 12;
  std::optional<TokenId> eos;
};

// Samples a completion of `prompt` from `model`. Fills tokens, masks,
// logprobs_actor and values; logprobs_ref and rewards are left for the caller.
Trajectory rollout(const SequenceModel& model, const Prompt& prompt,
                   const RolloutOptions& options, Rng& rng);

// Draws an index from the categorical distribution exp(logp) by inversion.
std::size_t sample_categorical(std::span<const double> logp, Rng& rng);

// Rectangular batch of trajectories. Prompts are left-padded to a common
// prompt width, generations right-padded to a common generation width.
struct PaddedBatch {
  std::size_t rows = 0;
  std::size_t width = 0;         // tokens per row
  std::size_t prompt_width = 0;  // max prompt length
  std::vector<TokenId> tokens;   // rows * width, kPadToken at padding
  std::vector<double> masks;     // rows * (width - 1)
  std::vector<std::size_t> left_pad;

  std::size_t positions() const noexcept { return width == 0 ? 0 : width - 1; }
  std::span<const TokenId> row_tokens(std::size_t r) const {
    return std::span<const TokenId>(tokens).subspan(r * width, width);
  }
  std::span<const double> row_masks(std::size_t r) const {
    return std::span<const double>(masks).subspan(r * positions(), positions());
  }

  // Copies a per-position trajectory array into batch layout (zero padded).
  std::vector<double> gather(std::span<const Trajectory> trajectories,
                             std::vector<double> Trajectory::*field) const;
  // Inverse of gather for one row.
  void scatter_row(std::span<const double> batch_values, std::size_t r,
                   std::vector<double>& out) const;
};

PaddedBatch pad_batch(std::span<const Trajectory> trajectories);

}  // namespace rarlhf
