#include "rarlhf/token_mdp.hpp"

#include <algorithm>
#include <cmath>

#include "rarlhf/error.hpp"

namespace rarlhf {

Vocab::Vocab(std::size_t size, std::vector<std::string> labels)
    : size_(size), labels_(std::move(labels)) {
  if (size_ < 2) throw ContractViolation("vocabulary needs at least 2 tokens");
  if (!labels_.empty() && labels_.size() != size_)
    throw ContractViolation("token label count does not match vocabulary size");
}

std::string Vocab::label(TokenId id) const {
  if (contains(id) && !labels_.empty()) return labels_[static_cast<std::size_t>(id)];
  return "t" + std::to_string(id);
}

EpisodeState transition(const Vocab& vocab, const EpisodeState& state, TokenId action) {
  if (!vocab.contains(action))
    throw InvalidActionError("action " + std::to_string(action) + " outside vocabulary of size " +
                             std::to_string(vocab.size()));
  EpisodeState next{state.tokens};
  next.tokens.push_back(action);
  return next;
}

std::size_t sample_categorical(std::span<const double> logp, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t a = 0; a < logp.size(); ++a) {
    const double p = std::exp(logp[a]);
    if (p <= 0.0) continue;
    last_nonzero = a;
    cum += p;
    if (u < cum) return a;
  }
  // Rounding left the cumulative sum just below u.
  return last_nonzero;
}

Trajectory rollout(const SequenceModel& model, const Prompt& prompt,
                   const RolloutOptions& options, Rng& rng) {
  if (options.max_new_tokens < 1) throw ContractViolation("max_new_tokens must be >= 1");
  if (prompt.tokens.empty()) throw ContractViolation("prompt must contain at least one token");
  const std::size_t vocab = model.vocab_size();
  for (TokenId t : prompt.tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw InvalidActionError("prompt token " + std::to_string(t) + " outside vocabulary");

  Trajectory traj;
  traj.prompt_len = prompt.tokens.size();
  traj.tokens = prompt.tokens;
  traj.tokens.reserve(prompt.tokens.size() + options.max_new_tokens);

  std::vector<double> logp(vocab);

  // Prompt positions: score the given tokens so every per-position array is
  // populated, but keep them masked out.
  for (std::size_t t = 0; t + 1 < traj.prompt_len; ++t) {
    std::span<const TokenId> prefix(traj.tokens.data(), t + 1);
    model.log_probs(prefix, logp);
    traj.logprobs_actor.push_back(logp[static_cast<std::size_t>(traj.tokens[t + 1])]);
    traj.values.push_back(model.value(prefix));
    traj.masks.push_back(0.0);
  }

  for (std::size_t step = 0; step < options.max_new_tokens; ++step) {
    std::span<const TokenId> prefix(traj.tokens.data(), traj.tokens.size());
    model.log_probs(prefix, logp);
    const double value = model.value(prefix);
    const auto action = static_cast<TokenId>(sample_categorical(logp, rng));
    traj.logprobs_actor.push_back(logp[static_cast<std::size_t>(action)]);
    traj.values.push_back(value);
    traj.masks.push_back(1.0);
    traj.tokens.push_back(action);
    if (options.eos && action == *options.eos) break;
  }

  const std::size_t n = traj.positions();
  traj.logprobs_ref.assign(n, 0.0);
  traj.per_token_rewards.assign(n, 0.0);
  return traj;
}

PaddedBatch pad_batch(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw ContractViolation("pad_batch needs at least one trajectory");
  std::size_t prompt_width = 0;
  std::size_t gen_width = 0;
  for (const auto& t : trajectories) {
    prompt_width = std::max(prompt_width, t.prompt_len);
    gen_width = std::max(gen_width, t.generated_len());
  }

  PaddedBatch batch;
  batch.rows = trajectories.size();
  batch.prompt_width = prompt_width;
  batch.width = prompt_width + gen_width;
  batch.tokens.assign(batch.rows * batch.width, kPadToken);
  batch.masks.assign(batch.rows * batch.positions(), 0.0);
  batch.left_pad.resize(batch.rows);

  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto& t = trajectories[r];
    const std::size_t offset = prompt_width - t.prompt_len;
    batch.left_pad[r] = offset;
    std::copy(t.tokens.begin(), t.tokens.end(), batch.tokens.begin() + r * batch.width + offset);
    for (std::size_t p = 0; p < t.masks.size(); ++p)
      batch.masks[r * batch.positions() + offset + p] = t.masks[p];
  }
  return batch;
}

std::vector<double> PaddedBatch::gather(std::span<const Trajectory> trajectories,
                                        std::vector<double> Trajectory::*field) const {
  if (trajectories.size() != rows) throw ContractViolation("gather: row count mismatch");
  std::vector<double> out(rows * positions(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& src = trajectories[r].*field;
    std::copy(src.begin(), src.end(), out.begin() + r * positions() + left_pad[r]);
  }
  return out;
}

void PaddedBatch::scatter_row(std::span<const double> batch_values, std::size_t r,
                              std::vector<double>& out) const {
  const auto row = batch_values.subspan(r * positions(), positions());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = row[left_pad[r] + p];
}

}  // namespace rarlhf
