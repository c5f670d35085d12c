#include "rarlhf/ppo.hpp"

#include <algorithm>
#include <cmath>

#include "rarlhf/error.hpp"

namespace rarlhf {

void PPOConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("ppo.gamma", "must be in (0, 1]");
  if (!(lam >= 0.0 && lam <= 1.0)) throw ConfigError("ppo.lam", "must be in [0, 1]");
  if (!(cliprange > 0.0)) throw ConfigError("ppo.cliprange", "must be > 0");
  if (!(cliprange_value > 0.0)) throw ConfigError("ppo.cliprange_value", "must be > 0");
  if (!(vf_coef >= 0.0)) throw ConfigError("ppo.vf_coef", "must be >= 0");
  if (ppo_epochs < 1) throw ConfigError("ppo.ppo_epochs", "must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("ppo.learning_rate", "must be > 0");
  if (batch_size < 1) throw ConfigError("ppo.batch_size", "must be >= 1");
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> masks, double gamma, double lam) {
  const std::size_t n = rewards.size();
  if (values.size() != n || masks.size() != n)
    throw ContractViolation("compute_gae: rewards, values and masks differ in length");

  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(values.begin(), values.end());
  double next_value = 0.0;
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    if (masks[k] == 0.0) continue;
    const double delta = rewards[k] + gamma * next_value - values[k];
    const double a = delta + gamma * lam * next_adv;
    out.advantages[k] = a;
    out.returns[k] = a + values[k];
    next_value = values[k];
    next_adv = a;
  }
  return out;
}

GaeResult compute_gae(std::size_t rows, std::span<const double> rewards,
                      std::span<const double> values, std::span<const double> masks, double gamma,
                      double lam) {
  if (rows == 0 || rewards.size() % rows != 0)
    throw ContractViolation("compute_gae: batch size does not divide the reward array");
  if (values.size() != rewards.size() || masks.size() != rewards.size())
    throw ContractViolation("compute_gae: rewards, values and masks differ in length");
  const std::size_t width = rewards.size() / rows;
  GaeResult out;
  out.advantages.reserve(rewards.size());
  out.returns.reserve(rewards.size());
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = compute_gae(rewards.subspan(r * width, width), values.subspan(r * width, width),
                           masks.subspan(r * width, width), gamma, lam);
    out.advantages.insert(out.advantages.end(), row.advantages.begin(), row.advantages.end());
    out.returns.insert(out.returns.end(), row.returns.begin(), row.returns.end());
  }
  return out;
}

bool whiten(std::span<double> values, std::span<const double> masks, std::string* warning) {
  if (values.size() != masks.size()) throw ContractViolation("whiten: size mismatch");
  double n = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    n += masks[i];
    sum += masks[i] * values[i];
  }
  if (n < 2.0) {
    if (warning) *warning = "whiten: fewer than 2 masked-in entries, advantages left as is";
    return false;
  }
  const double mean = sum / n;
  double var = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    var += masks[i] * (values[i] - mean) * (values[i] - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + 1e-8);
  for (std::size_t i = 0; i < values.size(); ++i)
    if (masks[i] != 0.0) values[i] = (values[i] - mean) * inv;
  return true;
}

namespace {

struct PositionTerms {
  double pg;
  double vf;
  double dpg_dlogp;
  double dvf_dv;
  bool clipped;
};

PositionTerms position_terms(double logp_new, double logp_old, double adv, double v, double v_old,
                             double ret, const PPOConfig& cfg) {
  PositionTerms t{};
  const double ratio = std::exp(logp_new - logp_old);
  const double lo = 1.0 - cfg.cliprange, hi = 1.0 + cfg.cliprange;
  const double clamped = std::clamp(ratio, lo, hi);
  const double pg1 = -adv * ratio;
  const double pg2 = -adv * clamped;
  t.clipped = pg2 > pg1;
  t.pg = std::max(pg1, pg2);
  const bool ratio_bound = ratio < lo || ratio > hi;
  t.dpg_dlogp = (!t.clipped || !ratio_bound) ? -adv * ratio : 0.0;

  const double vc = std::clamp(v, v_old - cfg.cliprange_value, v_old + cfg.cliprange_value);
  const double vf1 = (v - ret) * (v - ret);
  const double vf2 = (vc - ret) * (vc - ret);
  t.vf = std::max(vf1, vf2);
  if (vf1 >= vf2) {
    t.dvf_dv = 2.0 * (v - ret);
  } else {
    const bool value_bound = vc != v;
    t.dvf_dv = value_bound ? 0.0 : 2.0 * (vc - ret);
  }
  return t;
}

}  // namespace

PPOLosses ppo_losses(std::span<const double> logprobs_new, std::span<const double> logprobs_old,
                     std::span<const double> advantages, std::span<const double> vpreds,
                     std::span<const double> values_old, std::span<const double> returns,
                     std::span<const double> masks, const PPOConfig& cfg) {
  const std::size_t n = masks.size();
  if (logprobs_new.size() != n || logprobs_old.size() != n || advantages.size() != n ||
      vpreds.size() != n || values_old.size() != n || returns.size() != n)
    throw ContractViolation("ppo_losses: arrays differ in length");
  double count = 0.0, pg = 0.0, vf = 0.0, clipped = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (masks[k] == 0.0) continue;
    const auto t = position_terms(logprobs_new[k], logprobs_old[k], advantages[k], vpreds[k],
                                  values_old[k], returns[k], cfg);
    count += masks[k];
    pg += masks[k] * t.pg;
    vf += masks[k] * t.vf;
    clipped += masks[k] * (t.clipped ? 1.0 : 0.0);
  }
  if (count == 0.0) throw ContractViolation("ppo_losses: no masked-in positions");
  PPOLosses out;
  out.pg_loss = pg / count;
  out.vf_loss = vf / count;
  out.total = out.pg_loss + cfg.vf_coef * out.vf_loss;
  out.clip_fraction = clipped / count;
  return out;
}

PPOBatch select_rows(const PPOBatch& full, std::span<const std::size_t> rows) {
  const auto& b = full.batch;
  const std::size_t pos = b.positions();
  PPOBatch out;
  out.batch.rows = rows.size();
  out.batch.width = b.width;
  out.batch.prompt_width = b.prompt_width;
  for (std::size_t r : rows) {
    if (r >= b.rows) throw ContractViolation("select_rows: row index out of range");
    const auto tok = b.row_tokens(r);
    out.batch.tokens.insert(out.batch.tokens.end(), tok.begin(), tok.end());
    const auto m = b.row_masks(r);
    out.batch.masks.insert(out.batch.masks.end(), m.begin(), m.end());
    out.batch.left_pad.push_back(b.left_pad[r]);
    auto copy = [&](const std::vector<double>& src, std::vector<double>& dst) {
      dst.insert(dst.end(), src.begin() + static_cast<std::ptrdiff_t>(r * pos),
                 src.begin() + static_cast<std::ptrdiff_t>((r + 1) * pos));
    };
    copy(full.old_logprobs, out.old_logprobs);
    copy(full.old_values, out.old_values);
    copy(full.advantages, out.advantages);
    copy(full.returns, out.returns);
  }
  return out;
}

PPOLosses ppo_loss_and_grad(const PolicyParams& params, const PPOBatch& data,
                            const PPOConfig& cfg, PolicyGradient* grad) {
  const auto& b = data.batch;
  const std::size_t pos = b.positions();
  const std::size_t n = b.rows * pos;
  if (b.masks.size() != n || data.old_logprobs.size() != n || data.old_values.size() != n ||
      data.advantages.size() != n || data.returns.size() != n)
    throw ContractViolation("ppo_loss_and_grad: batch arrays have inconsistent shapes");

  double count = 0.0;
  for (double m : b.masks) count += m;
  if (count == 0.0) throw ContractViolation("ppo_loss_and_grad: no masked-in positions");
  const double inv = 1.0 / count;

  std::vector<double> logp(params.vocab_size());
  double pg = 0.0, vf = 0.0, clipped = 0.0;
  for (std::size_t r = 0; r < b.rows; ++r) {
    const auto row = b.row_tokens(r);
    for (std::size_t t = 0; t < pos; ++t) {
      const std::size_t k = r * pos + t;
      const double m = b.masks[k];
      if (m == 0.0) continue;
      const auto prefix = row.first(t + 1);
      const TokenId target = row[t + 1];
      params.log_probs(prefix, logp);
      const double v = params.value(prefix);
      const auto terms = position_terms(logp[static_cast<std::size_t>(target)],
                                        data.old_logprobs[k], data.advantages[k], v,
                                        data.old_values[k], data.returns[k], cfg);
      pg += m * terms.pg;
      vf += m * terms.vf;
      clipped += m * (terms.clipped ? 1.0 : 0.0);
      if (grad) {
        accumulate_logprob_grad(params, prefix, logp, target, m * inv * terms.dpg_dlogp, *grad);
        accumulate_value_grad(params, prefix, m * inv * cfg.vf_coef * terms.dvf_dv, *grad);
      }
    }
  }
  PPOLosses out;
  out.pg_loss = pg * inv;
  out.vf_loss = vf * inv;
  out.total = out.pg_loss + cfg.vf_coef * out.vf_loss;
  out.clip_fraction = clipped * inv;
  return out;
}

}  // namespace rarlhf
