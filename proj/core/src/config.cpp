#include "rarlhf/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "rarlhf/error.hpp"

namespace rarlhf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
  return d;
}

template <class Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class Member>
Field num(std::string key, Member ExperimentConfig::*m) {
  return {key, [m](const ExperimentConfig& c) { return fmt(static_cast<double>(c.*m)); },
          [m, key](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<Member>)
              c.*m = to_double(key, v);
            else
              c.*m = to_int<Member>(key, v);
          }};
}

// Accessor-based variant for nested members.
template <class T>
Field nested(std::string key, std::function<T&(ExperimentConfig&)> ref) {
  return {key,
          [ref](const ExperimentConfig& c) {
            auto& v = ref(const_cast<ExperimentConfig&>(c));
            if constexpr (std::is_same_v<T, bool>)
              return std::string(v ? "true" : "false");
            else
              return fmt(static_cast<double>(v));
          },
          [ref, key](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>)
              ref(c) = to_bool(key, v);
            else if constexpr (std::is_floating_point_v<T>)
              ref(c) = to_double(key, v);
            else
              ref(c) = to_int<T>(key, v);
          }};
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (k) s += ",";
    if constexpr (std::is_same_v<T, std::string>)
      s += xs[k];
    else if constexpr (std::is_floating_point_v<T>)
      s += fmt(xs[k]);
    else
      s += std::to_string(xs[k]);
  }
  return s;
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = {
      num("env.repetition_penalty", &C::repetition_penalty),
      num("env.scale", &C::reward_scale),

      nested<double>("data.positive_fraction", [](C& c) -> double& { return c.mixture.positive_fraction; }),
      nested<double>("data.tail_mass", [](C& c) -> double& { return c.mixture.tail_mass; }),
      nested<double>("data.pos_lo", [](C& c) -> double& { return c.mixture.pos_lo; }),
      nested<double>("data.pos_hi", [](C& c) -> double& { return c.mixture.pos_hi; }),
      nested<double>("data.neg_lo", [](C& c) -> double& { return c.mixture.neg_lo; }),
      nested<double>("data.neg_hi", [](C& c) -> double& { return c.mixture.neg_hi; }),
      nested<double>("data.tail_lo", [](C& c) -> double& { return c.mixture.tail_lo; }),
      nested<double>("data.tail_hi", [](C& c) -> double& { return c.mixture.tail_hi; }),
      nested<std::size_t>("data.prompt_len", [](C& c) -> std::size_t& { return c.mixture.prompt_len; }),
      num("data.train_size", &C::train_size),
      num("data.test_size", &C::test_size),
      {"data.train_csv", [](const C& c) { return c.train_csv; },
       [](C& c, const std::string& v) { c.train_csv = v; }},
      {"data.test_csv", [](const C& c) { return c.test_csv; },
       [](C& c, const std::string& v) { c.test_csv = v; }},

      num("policy.window", &C::window),
      nested<double>("ref.corpus_persistence", [](C& c) -> double& { return c.corpus.persistence; }),
      nested<std::size_t>("ref.corpus_length", [](C& c) -> std::size_t& { return c.corpus.length; }),
      num("ref.pretrain_size", &C::pretrain_size),
      num("ref.pretrain_epochs", &C::pretrain_epochs),
      num("ref.sft_size", &C::sft_size),
      num("ref.sft_epochs", &C::sft_epochs),
      num("ref.learning_rate", &C::sft_learning_rate),
      num("ref.perplexity_size", &C::perplexity_size),

      nested<double>("ppo.gamma", [](C& c) -> double& { return c.ppo.gamma; }),
      nested<double>("ppo.lam", [](C& c) -> double& { return c.ppo.lam; }),
      nested<double>("ppo.cliprange", [](C& c) -> double& { return c.ppo.cliprange; }),
      nested<double>("ppo.cliprange_value", [](C& c) -> double& { return c.ppo.cliprange_value; }),
      nested<double>("ppo.vf_coef", [](C& c) -> double& { return c.ppo.vf_coef; }),
      nested<std::size_t>("ppo.ppo_epochs", [](C& c) -> std::size_t& { return c.ppo.ppo_epochs; }),
      nested<double>("ppo.learning_rate", [](C& c) -> double& { return c.ppo.learning_rate; }),
      nested<std::size_t>("ppo.batch_size", [](C& c) -> std::size_t& { return c.ppo.batch_size; }),
      nested<std::size_t>("ppo.minibatch_size", [](C& c) -> std::size_t& { return c.ppo.minibatch_size; }),

      nested<double>("kl.beta", [](C& c) -> double& { return c.kl.beta; }),
      nested<double>("kl.target", [](C& c) -> double& { return c.kl.kl_target; }),
      nested<double>("kl.k_beta", [](C& c) -> double& { return c.kl.k_beta; }),
      nested<bool>("kl.adaptive", [](C& c) -> bool& { return c.adaptive_kl; }),

      num("schedule.alpha", &C::alpha),
      num("schedule.warm_start", &C::warm_start),
      num("schedule.rho", &C::rho),
      num("schedule.iterations", &C::iterations),

      num("rollout.max_new_tokens", &C::max_new_tokens),
      num("rollout.eos", &C::eos),

      {"train.select_on",
       [](const C& c) { return std::string(c.select_on == SelectOn::kShaped ? "shaped" : "env"); },
       [](C& c, const std::string& v) {
         if (v == "shaped")
           c.select_on = SelectOn::kShaped;
         else if (v == "env")
           c.select_on = SelectOn::kEnv;
         else
           throw ConfigError("train.select_on", "expected shaped or env, got '" + v + "'");
       }},
      num("train.threads", &C::threads),
      num("train.checkpoint_every", &C::checkpoint_every),

      num("eval.quantile_bins", &C::quantile_bins),
      {"eval.tail_thresholds", [](const C& c) { return join(c.tail_thresholds); },
       [](C& c, const std::string& v) {
         c.tail_thresholds.clear();
         for (const auto& x : split_list(v)) c.tail_thresholds.push_back(to_double("eval.tail_thresholds", x));
       }},
      num("eval.hist_lo", &C::hist_lo),
      num("eval.hist_hi", &C::hist_hi),
      num("eval.hist_bins", &C::hist_bins),

      {"run.seeds", [](const C& c) { return join(c.seeds); },
       [](C& c, const std::string& v) {
         c.seeds.clear();
         for (const auto& x : split_list(v)) c.seeds.push_back(to_int<std::uint64_t>("run.seeds", x));
       }},
      {"run.models", [](const C& c) { return join(c.models); },
       [](C& c, const std::string& v) { c.models = split_list(v); }},
      {"run.output_dir", [](const C& c) { return c.output_dir; },
       [](C& c, const std::string& v) { c.output_dir = v; }},
  };
  return table;
}

}  // namespace

ConfigEntries parse_config(std::istream& in) {
  ConfigEntries out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", lineno);
    out.values[key] = trim(line.substr(eq + 1));
    out.lines[key] = lineno;
  }
  return out;
}

ConfigEntries parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return parse_config(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

void apply_override(ConfigEntries& entries, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(assignment, "override must look like key=value");
  const std::string key = trim(assignment.substr(0, eq));
  entries.values[key] = trim(assignment.substr(eq + 1));
  entries.lines[key] = 0;
}

ExperimentConfig to_experiment_config(const ConfigEntries& entries) {
  ExperimentConfig cfg;
  const auto& table = fields();
  for (const auto& [key, value] : entries.values) {
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(key, "unknown configuration key");
    it->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides) {
  auto entries = parse_config_file(path);
  for (const auto& o : overrides) apply_override(entries, o);
  return to_experiment_config(entries);
}

std::string to_config_text(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string s = f.key.substr(0, f.key.find('.'));
    if (s != section) {
      if (!section.empty()) out += '\n';
      section = s;
    }
    out += f.key + " = " + f.get(cfg) + '\n';
  }
  return out;
}

void ExperimentConfig::validate() const {
  try {
    ValenceEnv env = make_toy_env(repetition_penalty, reward_scale);
    env.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError("env", e.what());
  }
  auto frac = [](const char* key, double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(key, "must be in [0, 1]");
  };
  frac("data.positive_fraction", mixture.positive_fraction);
  frac("data.tail_mass", mixture.tail_mass);
  if (mixture.prompt_len < 1) throw ConfigError("data.prompt_len", "must be >= 1");
  if (train_csv.empty() && train_size < 1) throw ConfigError("data.train_size", "must be >= 1");
  if (test_csv.empty() && test_size < 1) throw ConfigError("data.test_size", "must be >= 1");
  if (window < 1) throw ConfigError("policy.window", "must be >= 1");
  frac("ref.corpus_persistence", corpus.persistence);
  if (corpus.length < 2) throw ConfigError("ref.corpus_length", "must be >= 2");
  if (pretrain_size < 1) throw ConfigError("ref.pretrain_size", "must be >= 1");
  if (sft_size < 1) throw ConfigError("ref.sft_size", "must be >= 1");
  if (!(sft_learning_rate > 0.0)) throw ConfigError("ref.learning_rate", "must be > 0");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("schedule.alpha", "must be in (0, 1]");
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("schedule.rho", "must be in (0, 1]");
  if (max_new_tokens < 1) throw ConfigError("rollout.max_new_tokens", "must be >= 1");
  if (eos >= static_cast<long>(make_toy_env().vocab_size())) throw ConfigError("rollout.eos", "outside the vocabulary");
  if (quantile_bins < 1) throw ConfigError("eval.quantile_bins", "must be >= 1");
  if (hist_bins < 1 || !(hist_hi > hist_lo)) throw ConfigError("eval.hist_bins", "need >= 1 bin and hist_hi > hist_lo");
  if (seeds.empty()) throw ConfigError("run.seeds", "need at least one seed");
  for (const auto& m : models)
    if (m != "sft" && m != "rlhf" && m != "ra_rlhf")
      throw ConfigError("run.models", "unknown model '" + m + "' (sft, rlhf, ra_rlhf)");
  trainer_config(seeds.front(), true).validate();
}

TrainerConfig ExperimentConfig::trainer_config(std::uint64_t seed, bool risk_averse) const {
  TrainerConfig t;
  t.ppo = ppo;
  t.beta = kl;
  t.adaptive_kl = adaptive_kl;
  t.iterations = iterations;
  t.rollout.max_new_tokens = max_new_tokens;
  if (eos >= 0) t.rollout.eos = static_cast<TokenId>(eos);
  t.select_on = select_on;
  t.seed = seed;
  t.threads = threads;
  if (risk_averse) {
    try {
      t.schedule.emplace(ppo.batch_size, alpha, warm_start, rho, iterations);
    } catch (const ContractViolation& e) {
      throw ConfigError("schedule", e.what());
    }
  }
  return t;
}

}  // namespace rarlhf
