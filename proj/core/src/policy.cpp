#include "rarlhf/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "rarlhf/error.hpp"

namespace rarlhf {

PolicyParams::PolicyParams(std::size_t vocab, std::size_t window)
    : vocab_(vocab), window_(window) {
  if (vocab < 2) throw ContractViolation("policy vocabulary needs at least 2 tokens");
  if (window < 1) throw ContractViolation("policy feature window must be >= 1");
  actor_.assign(vocab_ * feature_dim(), 0.0);
  value_.assign(feature_dim(), 0.0);
}

std::vector<std::size_t> PolicyParams::active_features(std::span<const TokenId> prefix) const {
  std::vector<std::size_t> active;
  active.reserve(window_ + 1);
  for (std::size_t slot = 0; slot < window_ && slot < prefix.size(); ++slot) {
    const TokenId tok = prefix[prefix.size() - 1 - slot];
    if (tok == kPadToken) continue;
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_)
      throw InvalidActionError("token " + std::to_string(tok) + " outside policy vocabulary");
    active.push_back(feature_index(slot, tok));
  }
  active.push_back(bias_index());
  return active;
}

void PolicyParams::logits(std::span<const TokenId> prefix, std::span<double> out) const {
  if (out.size() != vocab_) throw ContractViolation("logits: output size != vocab size");
  const auto active = active_features(prefix);
  const std::size_t dim = feature_dim();
  for (std::size_t a = 0; a < vocab_; ++a) {
    const double* row = actor_.data() + a * dim;
    double z = 0.0;
    for (std::size_t j : active) z += row[j];
    out[a] = z;
  }
}

void log_softmax(std::span<double> values) {
  const double m = *std::max_element(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (double& v : values) v -= lse;
}

void PolicyParams::log_probs(std::span<const TokenId> prefix, std::span<double> out) const {
  logits(prefix, out);
  log_softmax(out);
}

double PolicyParams::value(std::span<const TokenId> prefix) const {
  double v = 0.0;
  for (std::size_t j : active_features(prefix)) v += value_[j];
  return v;
}

bool PolicyParams::all_finite() const {
  auto finite = [](double x) { return std::isfinite(x); };
  return std::all_of(actor_.begin(), actor_.end(), finite) &&
         std::all_of(value_.begin(), value_.end(), finite);
}

void PolicyGradient::scale(double s) {
  for (double& g : actor) g *= s;
  for (double& g : value) g *= s;
}

void PolicyGradient::add(const PolicyGradient& other, double s) {
  if (other.actor.size() != actor.size() || other.value.size() != value.size())
    throw ContractViolation("gradient shape mismatch");
  for (std::size_t i = 0; i < actor.size(); ++i) actor[i] += s * other.actor[i];
  for (std::size_t i = 0; i < value.size(); ++i) value[i] += s * other.value[i];
}

void accumulate_logprob_grad(const PolicyParams& params, std::span<const TokenId> prefix,
                             TokenId target, double coeff, PolicyGradient& grad) {
  if (coeff == 0.0) return;
  std::vector<double> logp(params.vocab_size());
  params.log_probs(prefix, logp);
  accumulate_logprob_grad(params, prefix, logp, target, coeff, grad);
}

void accumulate_logprob_grad(const PolicyParams& params, std::span<const TokenId> prefix,
                             std::span<const double> logp, TokenId target, double coeff,
                             PolicyGradient& grad) {
  if (coeff == 0.0) return;
  const std::size_t dim = params.feature_dim();
  const auto active = params.active_features(prefix);
  // d log p(target) / d logit_a = [a == target] - p_a
  for (std::size_t a = 0; a < params.vocab_size(); ++a) {
    const double d = coeff * ((static_cast<TokenId>(a) == target ? 1.0 : 0.0) - std::exp(logp[a]));
    if (d == 0.0) continue;
    double* row = grad.actor.data() + a * dim;
    for (std::size_t j : active) row[j] += d;
  }
}

void accumulate_value_grad(const PolicyParams& params, std::span<const TokenId> prefix,
                           double coeff, PolicyGradient& grad) {
  if (coeff == 0.0) return;
  for (std::size_t j : params.active_features(prefix)) grad.value[j] += coeff;
}

ForwardOutput batched_forward_pass(const PolicyParams& params, const PaddedBatch& batch) {
  if (batch.tokens.size() != batch.rows * batch.width ||
      batch.masks.size() != batch.rows * batch.positions())
    throw ContractViolation("batched_forward_pass: malformed padded batch");

  ForwardOutput out;
  out.rows = batch.rows;
  out.positions = batch.positions();
  out.logprobs.assign(out.rows * out.positions, 0.0);
  out.values.assign(out.rows * out.positions, 0.0);
  out.masks = batch.masks;

  std::vector<double> logp(params.vocab_size());
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto row = batch.row_tokens(r);
    for (std::size_t t = 0; t < out.positions; ++t) {
      const auto prefix = row.first(t + 1);
      // Prefixes that are all padding carry no state.
      if (row[t] == kPadToken) continue;
      out.values[r * out.positions + t] = params.value(prefix);
      const TokenId target = row[t + 1];
      if (target == kPadToken) continue;
      params.log_probs(prefix, logp);
      out.logprobs[r * out.positions + t] = logp[static_cast<std::size_t>(target)];
    }
  }
  return out;
}

double cross_entropy(const PolicyParams& params, std::span<const std::vector<TokenId>> sequences,
                     PolicyGradient* grad) {
  std::size_t count = 0;
  for (const auto& s : sequences) count += s.size() > 1 ? s.size() - 1 : 0;
  if (count == 0) throw ContractViolation("cross_entropy: no next-token positions");
  const double inv = 1.0 / static_cast<double>(count);

  std::vector<double> logp(params.vocab_size());
  double total = 0.0;
  for (const auto& s : sequences) {
    std::span<const TokenId> seq(s);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      const auto prefix = seq.first(t + 1);
      params.log_probs(prefix, logp);
      total -= logp[static_cast<std::size_t>(seq[t + 1])];
      if (grad) accumulate_logprob_grad(params, prefix, logp, seq[t + 1], -inv, *grad);
    }
  }
  return total * inv;
}

SftResult sft_fit(PolicyParams params, std::span<const std::vector<TokenId>> sequences,
                  const SftOptions& options) {
  if (sequences.empty()) throw ContractViolation("sft_fit: empty dataset");

  SftResult result;
  double loss = cross_entropy(params, sequences);
  result.loss_history.push_back(loss);
  double lr = options.learning_rate;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    PolicyGradient grad(params);
    cross_entropy(params, sequences, &grad);
    bool accepted = false;
    for (std::size_t h = 0; h <= options.max_halvings; ++h) {
      PolicyParams candidate = params;
      for (std::size_t i = 0; i < candidate.actor().size(); ++i)
        candidate.actor()[i] -= lr * grad.actor[i];
      const double cand_loss = cross_entropy(candidate, sequences);
      if (std::isfinite(cand_loss) && cand_loss <= loss + options.tolerance) {
        params = std::move(candidate);
        loss = cand_loss;
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    result.loss_history.push_back(loss);
    if (!accepted) break;
  }
  result.params = std::move(params);
  return result;
}

GradCheckResult grad_check(const PolicyParams& params, const LossFunction& loss, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2))
    throw ContractViolation("grad_check: epsilon must be in (0, 1e-2]");

  PolicyGradient analytic(params);
  loss(params, &analytic);

  GradCheckResult result;
  PolicyParams probe = params;
  for (std::size_t i = 0; i < params.num_params(); ++i) {
    const double orig = probe.flat(i);
    probe.flat(i) = orig + epsilon;
    const double up = loss(probe, nullptr);
    probe.flat(i) = orig - epsilon;
    const double down = loss(probe, nullptr);
    probe.flat(i) = orig;

    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic.flat(i);
    const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
    if (i == 0 || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = i;
      result.analytic = a;
      result.numeric = numeric;
    }
  }
  return result;
}

namespace {

constexpr char kMagic[8] = {'R', 'A', 'R', 'L', 'H', 'F', 'P', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated checkpoint header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated checkpoint payload");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(params.vocab_size()));
  write_u32(out, static_cast<std::uint32_t>(params.window()));
  write_u32(out, static_cast<std::uint32_t>(params.feature_dim()));
  for (double w : params.actor()) write_f64(out, w);
  for (double w : params.value_weights()) write_f64(out, w);
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IoError("not a policy checkpoint: " + path.string());
  const auto version = read_u32(in);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto vocab = read_u32(in);
  const auto window = read_u32(in);
  const auto dim = read_u32(in);
  PolicyParams params(vocab, window);
  if (dim != params.feature_dim()) throw IoError("checkpoint feature dim mismatch");
  for (double& w : params.actor()) w = read_f64(in);
  for (double& w : params.value_weights()) w = read_f64(in);
  if (in.peek() != std::char_traits<char>::eof())
    throw IoError("trailing bytes in checkpoint " + path.string());
  return params;
}

}  // namespace rarlhf
