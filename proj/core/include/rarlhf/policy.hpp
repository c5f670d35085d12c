#pragma once

// Featurized softmax actor with a linear value head.
//
// Features of a prefix are the one-hot encodings of its last `window` tokens
// (slot 0 = most recent) plus a constant bias feature, so the feature vector
// has window * vocab + 1 entries of which at most window + 1 are active.
// Logits are actor * features and the value is value_weights . features.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "rarlhf/token_mdp.hpp"

namespace rarlhf {

class PolicyParams {
 public:
  PolicyParams() = default;
  // Zero actor (uniform policy) and zero value head.
  PolicyParams(std::size_t vocab, std::size_t window);

  std::size_t vocab_size() const noexcept { return vocab_; }
  std::size_t window() const noexcept { return window_; }
  std::size_t feature_dim() const noexcept { return window_ * vocab_ + 1; }
  std::size_t num_params() const noexcept { return actor_.size() + value_.size(); }

  // Row-major vocab x feature_dim.
  std::span<double> actor() noexcept { return actor_; }
  std::span<const double> actor() const noexcept { return actor_; }
  std::span<double> value_weights() noexcept { return value_; }
  std::span<const double> value_weights() const noexcept { return value_; }

  double& actor_at(std::size_t token, std::size_t feature) {
    return actor_[token * feature_dim() + feature];
  }
  double actor_at(std::size_t token, std::size_t feature) const {
    return actor_[token * feature_dim() + feature];
  }

  // Flat view over actor then value weights.
  double& flat(std::size_t i) { return i < actor_.size() ? actor_[i] : value_[i - actor_.size()]; }
  double flat(std::size_t i) const {
    return i < actor_.size() ? actor_[i] : value_[i - actor_.size()];
  }

  std::size_t feature_index(std::size_t slot, TokenId token) const noexcept {
    return slot * vocab_ + static_cast<std::size_t>(token);
  }
  std::size_t bias_index() const noexcept { return window_ * vocab_; }

  // Indices of the active (value 1) features of `prefix`. Padding is skipped.
  std::vector<std::size_t> active_features(std::span<const TokenId> prefix) const;

  void logits(std::span<const TokenId> prefix, std::span<double> out) const;
  void log_probs(std::span<const TokenId> prefix, std::span<double> out) const;
  double value(std::span<const TokenId> prefix) const;

  bool all_finite() const;

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  std::size_t vocab_ = 0;
  std::size_t window_ = 0;
  std::vector<double> actor_;
  std::vector<double> value_;
};

// Gradient with the same layout as PolicyParams.
struct PolicyGradient {
  std::vector<double> actor;
  std::vector<double> value;

  PolicyGradient() = default;
  explicit PolicyGradient(const PolicyParams& shape)
      : actor(shape.actor().size(), 0.0), value(shape.value_weights().size(), 0.0) {}

  std::size_t size() const noexcept { return actor.size() + value.size(); }
  double flat(std::size_t i) const { return i < actor.size() ? actor[i] : value[i - actor.size()]; }
  void scale(double s);
  void add(const PolicyGradient& other, double s = 1.0);
};

// Numerically stable log-softmax in place.
void log_softmax(std::span<double> values);

// grad += coeff * d log pi(target | prefix) / d actor.
void accumulate_logprob_grad(const PolicyParams& params, std::span<const TokenId> prefix,
                             TokenId target, double coeff, PolicyGradient& grad);
// Same, reusing log-probabilities already computed for `prefix`.
void accumulate_logprob_grad(const PolicyParams& params, std::span<const TokenId> prefix,
                             std::span<const double> logp, TokenId target, double coeff,
                             PolicyGradient& grad);
// grad += coeff * d V(prefix) / d value_weights.
void accumulate_value_grad(const PolicyParams& params, std::span<const TokenId> prefix,
                           double coeff, PolicyGradient& grad);

// SequenceModel view over a params object the caller keeps alive.
class PolicyModel : public SequenceModel {
 public:
  explicit PolicyModel(const PolicyParams& params) : params_(&params) {}

  std::size_t vocab_size() const override { return params_->vocab_size(); }
  void log_probs(std::span<const TokenId> prefix, std::span<double> out) const override {
    params_->log_probs(prefix, out);
  }
  double value(std::span<const TokenId> prefix) const override { return params_->value(prefix); }

 private:
  const PolicyParams* params_;
};

// Frozen snapshot used as pi_ref. There is no mutable access to the params.
class ReferencePolicy : public SequenceModel {
 public:
  explicit ReferencePolicy(PolicyParams params) : params_(std::move(params)) {}

  const PolicyParams& params() const noexcept { return params_; }

  std::size_t vocab_size() const override { return params_.vocab_size(); }
  void log_probs(std::span<const TokenId> prefix, std::span<double> out) const override {
    params_.log_probs(prefix, out);
  }
  double value(std::span<const TokenId> prefix) const override { return params_.value(prefix); }

 private:
  PolicyParams params_;
};

// Row-major rows x positions arrays aligned with PaddedBatch::masks.
struct ForwardOutput {
  std::size_t rows = 0;
  std::size_t positions = 0;
  std::vector<double> logprobs;  // log pi(token[t+1] | tokens[0..t]); 0 where the target is padding
  std::vector<double> values;    // V(tokens[0..t])
  std::vector<double> masks;
};

ForwardOutput batched_forward_pass(const PolicyParams& params, const PaddedBatch& batch);

// Mean next-token cross-entropy (nats) over every position of every sequence.
// Adds the gradient of that mean into *grad when grad is non-null.
double cross_entropy(const PolicyParams& params, std::span<const std::vector<TokenId>> sequences,
                     PolicyGradient* grad = nullptr);

struct SftOptions {
  std::size_t epochs = 100;
  double learning_rate = 1.0;
  double tolerance = 1e-6;        // allowed per-epoch loss increase
  std::size_t max_halvings = 40;  // step-size halvings before an epoch is skipped
};

struct SftResult {
  PolicyParams params;
  std::vector<double> loss_history;  // loss before training, then after every epoch
};

// Full-batch gradient descent on next-token cross-entropy. A step that would
// raise the loss by more than `tolerance` is retried with half the step size,
// so the loss history is non-increasing up to that tolerance.
SftResult sft_fit(PolicyParams params, std::span<const std::vector<TokenId>> sequences,
                  const SftOptions& options);

// Scalar loss of the params; fills *grad with the analytic gradient when non-null.
using LossFunction = std::function<double(const PolicyParams&, PolicyGradient*)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the analytic gradient with central differences over every parameter.
// Relative error per parameter is |a - c| / (|a| + |c| + 1e-12).
GradCheckResult grad_check(const PolicyParams& params, const LossFunction& loss, double epsilon);

// Binary checkpoint: magic, format version, vocab, window, feature dim, then
// row-major float64 actor weights followed by float64 value weights.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace rarlhf
