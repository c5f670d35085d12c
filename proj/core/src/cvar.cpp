#include "rarlhf/cvar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rarlhf/detail/math.hpp"
#include "rarlhf/error.hpp"

namespace rarlhf {

namespace {

void check_sample(std::span<const double> returns, double alpha) {
  if (returns.empty()) throw ContractViolation("empty return sample");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractViolation("alpha must be in (0, 1]");
}

}  // namespace

double empirical_quantile(std::span<const double> returns, double alpha) {
  check_sample(returns, alpha);
  std::vector<double> sorted(returns.begin(), returns.end());
  const std::size_t k =
      std::clamp<std::size_t>(detail::ceil_count(alpha * static_cast<double>(sorted.size())), 1,
                              sorted.size());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   sorted.end());
  return sorted[k - 1];
}

double cvar(std::span<const double> returns, double alpha) {
  const double q = empirical_quantile(returns, alpha);
  double sum = 0.0;
  std::size_t n = 0;
  for (double r : returns) {
    if (r <= q) {
      sum += r;
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

std::vector<std::size_t> select_tail(std::span<const double> returns, std::size_t count) {
  if (count < 1 || count > returns.size())
    throw ContractViolation("select_tail: count " + std::to_string(count) + " outside [1, " +
                            std::to_string(returns.size()) + "]");
  std::vector<std::size_t> order(returns.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return returns[a] < returns[b]; });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

TabularPolicy::TabularPolicy(std::size_t states, std::size_t actions)
    : states_(states), actions_(actions), logits_(states * actions, 0.0) {
  if (states < 1 || actions < 2) throw ContractViolation("tabular policy needs >= 1 state, >= 2 actions");
}

std::vector<double> TabularPolicy::probs(std::size_t s) const {
  std::vector<double> p(logits_.begin() + static_cast<std::ptrdiff_t>(s * actions_),
                        logits_.begin() + static_cast<std::ptrdiff_t>((s + 1) * actions_));
  const double m = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) z += (v = std::exp(v - m));
  for (double& v : p) v /= z;
  return p;
}

double TabularPolicy::log_prob(std::size_t s, std::size_t a) const {
  return std::log(probs(s)[a]);
}

void TabularPolicy::accumulate_grad_log_prob(std::size_t s, std::size_t a, double coeff,
                                             std::span<double> grad) const {
  const auto p = probs(s);
  for (std::size_t b = 0; b < actions_; ++b)
    grad[s * actions_ + b] += coeff * ((a == b ? 1.0 : 0.0) - p[b]);
}

std::vector<double> cvar_pg_gradient(const TabularPolicy& policy,
                                     std::span<const TabularEpisode> batch, double alpha) {
  if (batch.size() < 2) throw ContractViolation("cvar_pg_gradient: batch needs >= 2 episodes");
  std::vector<double> returns;
  returns.reserve(batch.size());
  for (const auto& ep : batch) returns.push_back(ep.ret);
  const double q = empirical_quantile(returns, alpha);
  const double norm = 1.0 / (alpha * static_cast<double>(batch.size()));

  std::vector<double> grad(policy.num_params(), 0.0);
  for (const auto& ep : batch) {
    if (ep.ret > q) continue;
    const double w = norm * (ep.ret - q);
    if (w == 0.0) continue;
    for (auto [s, a] : ep.steps) policy.accumulate_grad_log_prob(s, a, w, grad);
  }
  return grad;
}

}  // namespace rarlhf
