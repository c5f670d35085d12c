#pragma once

// Empirical quantiles, CVaR, tail selection and the sample-based CVaR policy
// gradient used as a reference for the batch-filtering trainer.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace rarlhf {

// Smallest sample whose empirical CDF is >= alpha, i.e. the ceil(alpha N)-th
// smallest value. Throws ContractViolation on empty input or alpha outside (0, 1].
double empirical_quantile(std::span<const double> returns, double alpha);

// Mean of every sample <= empirical_quantile(returns, alpha). Ties at the
// quantile are all included.
double cvar(std::span<const double> returns, double alpha);

// Indices of the `count` lowest returns, ties broken by lower index, returned
// in ascending index order (so count == size is the identity selection).
std::vector<std::size_t> select_tail(std::span<const double> returns, std::size_t count);

// Softmax policy with one logit per (state, action).
class TabularPolicy {
 public:
  TabularPolicy(std::size_t states, std::size_t actions);

  std::size_t states() const noexcept { return states_; }
  std::size_t actions() const noexcept { return actions_; }
  std::size_t num_params() const noexcept { return logits_.size(); }

  double& logit(std::size_t s, std::size_t a) { return logits_[s * actions_ + a]; }
  double logit(std::size_t s, std::size_t a) const { return logits_[s * actions_ + a]; }
  std::span<double> params() noexcept { return logits_; }

  std::vector<double> probs(std::size_t s) const;
  double log_prob(std::size_t s, std::size_t a) const;
  // grad += coeff * d log pi(a | s) / d logits
  void accumulate_grad_log_prob(std::size_t s, std::size_t a, double coeff,
                                std::span<double> grad) const;

 private:
  std::size_t states_;
  std::size_t actions_;
  std::vector<double> logits_;
};

struct TabularEpisode {
  std::vector<std::pair<std::size_t, std::size_t>> steps;  // (state, action)
  double ret = 0.0;
};

// (1 / alpha B) sum_i 1{R_i <= q} (R_i - q) sum_t grad log pi(a_it | s_it),
// with q the empirical alpha-quantile of the batch and unit importance weights.
std::vector<double> cvar_pg_gradient(const TabularPolicy& policy,
                                     std::span<const TabularEpisode> batch, double alpha);

}  // namespace rarlhf
