#include "rarlhf/synth_env.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "rarlhf/error.hpp"
#include "rarlhf/ngram.hpp"

namespace rarlhf {

void ValenceEnv::validate() const {
  if (valence.size() < 2) throw ContractViolation("valence env needs at least 2 tokens");
  bool pos = false, neg = false;
  for (double v : valence) {
    if (!(v >= -1.0 && v <= 1.0)) throw ContractViolation("valence outside [-1, 1]");
    pos = pos || v > 0.0;
    neg = neg || v < 0.0;
  }
  if (!pos || !neg)
    throw ContractViolation("valence env needs a positive and a negative token");
  if (!(scale > 0.0)) throw ContractViolation("scale must be > 0");
  if (!(repetition_penalty_weight >= 0.0))
    throw ContractViolation("repetition penalty weight must be >= 0");
}

double score(const ValenceEnv& env, std::span<const TokenId> tokens, std::size_t prompt_len) {
  if (prompt_len >= tokens.size()) throw ContractViolation("score: empty generation");
  const auto gen = tokens.subspan(prompt_len);
  double sum = 0.0;
  for (TokenId t : gen) {
    if (t < 0 || static_cast<std::size_t>(t) >= env.valence.size())
      throw InvalidActionError("score: token " + std::to_string(t) + " outside vocabulary");
    sum += env.valence[static_cast<std::size_t>(t)];
  }
  const double mean = sum / static_cast<double>(gen.size());
  const double d2 = gen.size() >= 2 ? dist_n(gen, 2) : 1.0;
  return env.scale * mean - env.repetition_penalty_weight * (1.0 - d2);
}

std::vector<std::string> toy_token_labels() {
  return {"great", "wonderful", "superb", "lovely", "good",  "fine",   "movie", "plot",
          "the",   "okay",      "dull",   "weak",   "awful", "boring", "worst", "terrible"};
}

ValenceEnv make_toy_env(double repetition_penalty_weight, double scale) {
  ValenceEnv env;
  env.valence = {1.0,  1.0,  0.95, 0.9, 0.85, 0.8,   0.1,   0.0,
                 0.0, -0.1, -0.8, -0.85, -0.9, -0.95, -1.0, -1.0};
  env.repetition_penalty_weight = repetition_penalty_weight;
  env.scale = scale;
  return env;
}

std::vector<double> PromptDataset::scores() const {
  std::vector<double> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts) out.push_back(p.score.value_or(std::nan("")));
  return out;
}

std::vector<TokenId> compose_prompt(const ValenceEnv& env, double target_score,
                                    std::size_t length, Rng& rng) {
  if (length == 0) throw ContractViolation("compose_prompt: length must be >= 1");
  const double target_mean = target_score / env.scale;
  const std::size_t vocab = env.vocab_size();
  std::vector<bool> used(vocab, false);
  std::vector<TokenId> out;
  double sum = 0.0;
  std::vector<std::size_t> best;
  for (std::size_t k = 0; k < length; ++k) {
    const bool allow_reuse = k >= vocab;
    const double want = target_mean * static_cast<double>(k + 1) - sum;
    double best_err = std::numeric_limits<double>::infinity();
    best.clear();
    for (std::size_t a = 0; a < vocab; ++a) {
      if (used[a] && !allow_reuse) continue;
      const double err = std::abs(want - env.valence[a]);
      if (err < best_err - 1e-12) {
        best_err = err;
        best.assign(1, a);
      } else if (std::abs(err - best_err) <= 1e-12) {
        best.push_back(a);
      }
    }
    const std::size_t pick = best[rng.index(best.size())];
    used[pick] = true;
    sum += env.valence[pick];
    out.push_back(static_cast<TokenId>(pick));
  }
  std::shuffle(out.begin(), out.end(), rng.engine());
  return out;
}

PromptDataset generate_dataset(const ValenceEnv& env, const MixtureSpec& spec, std::size_t n,
                               Rng& rng, Split split) {
  if (n == 0) throw ContractViolation("generate_dataset: n must be >= 1");
  if (spec.prompt_len == 0) throw ContractViolation("generate_dataset: prompt_len must be >= 1");
  if (spec.positive_fraction < 0.0 || spec.positive_fraction > 1.0)
    throw ContractViolation("generate_dataset: positive_fraction outside [0, 1]");
  if (spec.tail_mass < 0.0 || spec.tail_mass > 1.0)
    throw ContractViolation("generate_dataset: tail_mass outside [0, 1]");
  env.validate();

  PromptDataset ds;
  ds.mixture = spec;
  ds.split = split;
  auto flag_range = [&ds](double lo, double hi, const char* name) {
    if (hi < lo) throw ContractViolation(std::string("generate_dataset: inverted range ") + name);
    if (hi == lo) {
      ds.degenerate = true;
      ds.warnings.push_back(std::string("zero-variance score range: ") + name);
    }
  };
  if (spec.positive_fraction > 0.0) flag_range(spec.pos_lo, spec.pos_hi, "positive");
  if (spec.positive_fraction < 1.0) {
    if (spec.tail_mass < 1.0) flag_range(spec.neg_lo, spec.neg_hi, "negative");
    if (spec.tail_mass > 0.0) flag_range(spec.tail_lo, spec.tail_hi, "tail");
  }

  ds.prompts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Prompt p;
    double target = 0.0;
    if (rng.bernoulli(spec.positive_fraction)) {
      p.label = 1;
      target = rng.uniform(spec.pos_lo, spec.pos_hi);
    } else {
      p.label = 0;
      target = rng.bernoulli(spec.tail_mass) ? rng.uniform(spec.tail_lo, spec.tail_hi)
                                             : rng.uniform(spec.neg_lo, spec.neg_hi);
    }
    p.tokens = compose_prompt(env, target, spec.prompt_len, rng);
    p.score = score(env, p.tokens, 0);
    ds.prompts.push_back(std::move(p));
  }
  return ds;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

PromptDataset load_prompts_csv(const std::filesystem::path& path, const ValenceEnv* env) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt file " + path.string());

  PromptDataset ds;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) {
    ds.warnings.push_back("empty prompt file " + path.string());
    return ds;
  }
  ++lineno;
  if (trim(line) != "prompt_tokens,score")
    throw ParseError("expected header 'prompt_tokens,score'", lineno);

  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("missing ',' separator", lineno);

    Prompt p;
    std::istringstream toks(line.substr(0, comma));
    std::string tok;
    while (toks >> tok) {
      TokenId id = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), id);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || id < 0)
        throw ParseError("bad token id '" + tok + "'", lineno);
      if (env && static_cast<std::size_t>(id) >= env->vocab_size())
        throw ParseError("token id " + tok + " outside vocabulary", lineno);
      p.tokens.push_back(id);
    }
    if (p.tokens.empty()) throw ParseError("prompt has no tokens", lineno);

    const std::string score_field = trim(line.substr(comma + 1));
    if (score_field.empty()) {
      if (env) p.score = score(*env, p.tokens, 0);
    } else {
      char* end = nullptr;
      const double v = std::strtod(score_field.c_str(), &end);
      if (end != score_field.c_str() + score_field.size() || !std::isfinite(v))
        throw ParseError("non-numeric score '" + score_field + "'", lineno);
      p.score = v;
    }
    ds.prompts.push_back(std::move(p));
  }
  if (ds.prompts.empty()) ds.warnings.push_back("prompt file has a header but no rows");
  return ds;
}

void save_prompts_csv(const std::filesystem::path& path, const PromptDataset& dataset) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write prompt file " + path.string());
  out.precision(17);
  out << "prompt_tokens,score\n";
  for (const auto& p : dataset.prompts) {
    for (std::size_t i = 0; i < p.tokens.size(); ++i) out << (i ? " " : "") << p.tokens[i];
    out << ',';
    if (p.score) out << *p.score;
    out << '\n';
  }
}

std::vector<LabeledSequence> generate_corpus(const ValenceEnv& env, const CorpusSpec& spec,
                                             std::size_t n, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t a = 0; a < env.vocab_size(); ++a) {
    if (env.valence[a] > 0.5) pos.push_back(a);
    if (env.valence[a] < -0.5) neg.push_back(a);
  }
  if (pos.empty() || neg.empty())
    throw ContractViolation("generate_corpus: env needs strongly positive and negative tokens");

  std::vector<LabeledSequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LabeledSequence seq;
    seq.label = rng.bernoulli(spec.positive_fraction) ? 1 : 0;
    const auto& own = seq.label == 1 ? pos : neg;
    for (std::size_t t = 0; t < spec.length; ++t) {
      const std::size_t a = rng.bernoulli(spec.persistence) ? own[rng.index(own.size())]
                                                            : rng.index(env.vocab_size());
      seq.tokens.push_back(static_cast<TokenId>(a));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace rarlhf
