#include "rarlhf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rarlhf/error.hpp"

namespace rarlhf {

namespace {

void check_pairs(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.empty()) throw ContractViolation(std::string(what) + ": empty input");
  if (a.size() != b.size())
    throw ContractViolation(std::string(what) + ": prompt and completion counts differ");
}

}  // namespace

std::vector<QuantilePoint> quantile_curve(std::span<const double> prompt_scores,
                                          std::span<const double> completion_scores,
                                          std::size_t n_bins) {
  check_pairs(prompt_scores, completion_scores, "quantile_curve");
  if (n_bins < 1) throw ContractViolation("quantile_curve: n_bins must be >= 1");
  const std::size_t n = prompt_scores.size();
  if (n_bins > n) n_bins = n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return prompt_scores[a] < prompt_scores[b];
  });

  std::vector<QuantilePoint> out;
  out.reserve(n_bins);
  const std::size_t base = n / n_bins, extra = n % n_bins;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < n_bins; ++k) {
    const std::size_t size = base + (k < extra ? 1 : 0);
    QuantilePoint p;
    p.count = size;
    double sum = 0.0;
    for (std::size_t m = pos; m < pos + size; ++m) sum += completion_scores[order[m]];
    p.mean_score = sum / static_cast<double>(size);
    p.quantile = (static_cast<double>(pos) + 0.5 * static_cast<double>(size)) / static_cast<double>(n);
    pos += size;
    out.push_back(p);
  }
  return out;
}

double tail_average(std::span<const double> prompt_scores,
                    std::span<const double> completion_scores, double threshold) {
  check_pairs(prompt_scores, completion_scores, "tail_average");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < prompt_scores.size(); ++k) {
    if (prompt_scores[k] > threshold) continue;
    sum += completion_scores[k];
    ++count;
  }
  if (count == 0) throw ContractViolation("tail_average: no prompt scores at or below threshold");
  return sum / static_cast<double>(count);
}

namespace {

// Sum of log2 p over predicted tokens and their number.
std::pair<double, std::size_t> log2_likelihood(const PolicyParams& params,
                                               std::span<const TokenId> tokens) {
  if (tokens.size() < 2) throw ContractViolation("perplexity: sequence needs >= 2 tokens");
  std::vector<double> logp(params.vocab_size());
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    params.log_probs(tokens.first(t + 1), logp);
    const TokenId next = tokens[t + 1];
    if (next < 0 || static_cast<std::size_t>(next) >= params.vocab_size())
      throw InvalidActionError("perplexity: token outside vocabulary");
    total += logp[static_cast<std::size_t>(next)] / std::log(2.0);
  }
  return {total, tokens.size() - 1};
}

double finish_perplexity(double log2_sum, std::size_t n) {
  const double v = std::exp2(-log2_sum / static_cast<double>(n));
  return std::isfinite(v) ? v : kPerplexityOverflow;
}

}  // namespace

double perplexity(const PolicyParams& params, std::span<const TokenId> tokens) {
  const auto [s, n] = log2_likelihood(params, tokens);
  return finish_perplexity(s, n);
}

double perplexity(const PolicyParams& params, std::span<const std::vector<TokenId>> sequences) {
  if (sequences.empty()) throw ContractViolation("perplexity: empty corpus");
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& seq : sequences) {
    const auto [ls, ln] = log2_likelihood(params, seq);
    s += ls;
    n += ln;
  }
  return finish_perplexity(s, n);
}

Histogram histogram(std::span<const double> scores, std::span<const double> edges) {
  if (edges.size() < 2) throw ContractViolation("histogram: need at least 2 edges");
  for (std::size_t k = 1; k < edges.size(); ++k)
    if (!(edges[k] > edges[k - 1]))
      throw ContractViolation("histogram: edges must be strictly increasing");
  Histogram h;
  h.edges.assign(edges.begin(), edges.end());
  h.counts.assign(edges.size() - 1, 0);
  for (double x : scores) {
    if (x < edges.front()) {
      ++h.underflow;
      ++h.counts.front();
    } else if (x >= edges.back()) {
      ++h.overflow;
      ++h.counts.back();
    } else {
      const auto it = std::upper_bound(edges.begin(), edges.end(), x);
      ++h.counts[static_cast<std::size_t>(it - edges.begin()) - 1];
    }
  }
  return h;
}

std::vector<double> uniform_edges(double lo, double hi, std::size_t bins) {
  if (bins < 1 || !(hi > lo)) throw ContractViolation("uniform_edges: need bins >= 1 and hi > lo");
  std::vector<double> e(bins + 1);
  for (std::size_t k = 0; k <= bins; ++k)
    e[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins);
  return e;
}

EvalReport evaluate(const PolicyParams& params, const PromptDataset& test, const ValenceEnv& env,
                    std::span<const std::vector<TokenId>> perplexity_corpus,
                    const EvalOptions& options, std::string label) {
  if (test.prompts.empty()) throw ContractViolation("evaluate: empty test set");
  EvalReport rep;
  rep.label = std::move(label);
  const PolicyModel model(params);
  std::vector<double> prompt_scores, completion_scores;
  for (std::size_t k = 0; k < test.prompts.size(); ++k) {
    const auto& prompt = test.prompts[k];
    Rng rng = Rng::stream(options.seed, {0x6576616c, k});
    const auto traj = rollout(model, prompt, options.rollout, rng);
    Completion c;
    c.prompt_index = k;
    c.prompt = prompt.tokens;
    c.prompt_score = prompt.score ? *prompt.score : score(env, prompt.tokens, 0);
    c.generated.assign(traj.generated().begin(), traj.generated().end());
    c.score = score(env, traj.tokens, traj.prompt_len);
    prompt_scores.push_back(c.prompt_score);
    completion_scores.push_back(c.score);
    rep.gen_len_mean += static_cast<double>(c.generated.size());
    auto dn = [&](std::size_t n) { return c.generated.size() >= n ? dist_n(c.generated, n) : 1.0; };
    rep.dist1 += dn(1);
    rep.dist2 += dn(2);
    rep.dist3 += dn(3);
    rep.completions.push_back(std::move(c));
  }
  const double inv = 1.0 / static_cast<double>(test.prompts.size());
  rep.gen_len_mean *= inv;
  rep.dist1 *= inv;
  rep.dist2 *= inv;
  rep.dist3 *= inv;
  rep.mean_score = std::accumulate(completion_scores.begin(), completion_scores.end(), 0.0) * inv;
  rep.quantile = quantile_curve(prompt_scores, completion_scores, options.quantile_bins);
  for (double th : options.tail_thresholds)
    rep.tail_average[th] = tail_average(prompt_scores, completion_scores, th);
  rep.histogram = histogram(completion_scores, options.histogram_edges);
  rep.perplexity = perplexity_corpus.empty() ? std::nan("") : perplexity(params, perplexity_corpus);
  return rep;
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << std::setprecision(17);
  return out;
}

std::string join_tokens(const std::vector<TokenId>& t) {
  std::string s;
  for (std::size_t k = 0; k < t.size(); ++k) s += (k ? " " : "") + std::to_string(t[k]);
  return s;
}

std::vector<TokenId> split_tokens(const std::string& s) {
  std::vector<TokenId> t;
  std::istringstream is(s);
  TokenId v;
  while (is >> v) t.push_back(v);
  return t;
}

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

void write_eval_report(const std::filesystem::path& dir, const EvalReport& r) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  auto hist = open_out(dir / "histogram.csv");
  hist << "bin_lo,bin_hi,count\n";
  for (std::size_t k = 0; k < r.histogram.counts.size(); ++k)
    hist << r.histogram.edges[k] << ',' << r.histogram.edges[k + 1] << ',' << r.histogram.counts[k]
         << '\n';

  auto q = open_out(dir / "quantile.csv");
  q << "quantile,mean_score,count\n";
  for (const auto& p : r.quantile) q << p.quantile << ',' << p.mean_score << ',' << p.count << '\n';

  auto m = open_out(dir / "metrics.csv");
  m << "metric,value\n";
  m << "mean_score," << r.mean_score << '\n';
  for (const auto& [th, v] : r.tail_average) m << "tail_average@" << th << ',' << v << '\n';
  m << "dist1," << r.dist1 << "\ndist2," << r.dist2 << "\ndist3," << r.dist3 << '\n';
  m << "gen_len_mean," << r.gen_len_mean << "\nperplexity," << r.perplexity << '\n';

  auto c = open_out(dir / "completions.csv");
  c << "prompt_index,prompt_tokens,prompt_score,completion_tokens,score\n";
  for (const auto& x : r.completions)
    c << x.prompt_index << ',' << join_tokens(x.prompt) << ',' << x.prompt_score << ','
      << join_tokens(x.generated) << ',' << x.score << '\n';

  nlohmann::json j;
  j["label"] = r.label;
  j["n"] = r.completions.size();
  j["mean_score"] = r.mean_score;
  j["tail_average"] = nlohmann::json::object();
  for (const auto& [th, v] : r.tail_average) {
    std::ostringstream key;
    key << th;
    j["tail_average"][key.str()] = v;
  }
  j["dist"] = {{"1", r.dist1}, {"2", r.dist2}, {"3", r.dist3}};
  j["gen_len_mean"] = r.gen_len_mean;
  j["perplexity"] = finite_or_null(r.perplexity);
  j["histogram"] = {{"edges", r.histogram.edges},
                    {"counts", r.histogram.counts},
                    {"underflow", r.histogram.underflow},
                    {"overflow", r.histogram.overflow}};
  auto s = open_out(dir / "summary.json");
  s << j.dump(2) << '\n';
}

EvalReport read_eval_report(const std::filesystem::path& dir) {
  std::ifstream s(dir / "summary.json");
  if (!s) throw IoError("missing " + (dir / "summary.json").string());
  nlohmann::json j;
  try {
    s >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + (dir / "summary.json").string() + ": " + e.what());
  }
  EvalReport r;
  r.label = j.value("label", "");
  r.mean_score = j.at("mean_score").get<double>();
  for (auto& [k, v] : j.at("tail_average").items()) r.tail_average[std::stod(k)] = v.get<double>();
  r.dist1 = j.at("dist").at("1").get<double>();
  r.dist2 = j.at("dist").at("2").get<double>();
  r.dist3 = j.at("dist").at("3").get<double>();
  r.gen_len_mean = j.at("gen_len_mean").get<double>();
  r.perplexity = j.at("perplexity").is_null() ? kPerplexityOverflow : j.at("perplexity").get<double>();
  r.histogram.edges = j.at("histogram").at("edges").get<std::vector<double>>();
  r.histogram.counts = j.at("histogram").at("counts").get<std::vector<std::size_t>>();
  r.histogram.underflow = j.at("histogram").at("underflow").get<std::size_t>();
  r.histogram.overflow = j.at("histogram").at("overflow").get<std::size_t>();

  std::string line;
  std::ifstream q(dir / "quantile.csv");
  if (!q) throw IoError("missing " + (dir / "quantile.csv").string());
  std::getline(q, line);
  for (std::size_t qline = 2; std::getline(q, line); ++qline) {
    if (line.empty()) continue;
    QuantilePoint p;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> p.quantile >> c1 >> p.mean_score >> c2 >> p.count) || c1 != ',' || c2 != ',')
      throw ParseError("quantile.csv: expected quantile,mean_score,count", qline);
    r.quantile.push_back(p);
  }

  std::ifstream c(dir / "completions.csv");
  if (!c) throw IoError("missing " + (dir / "completions.csv").string());
  std::size_t lineno = 1;
  std::getline(c, line);
  while (std::getline(c, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw ParseError("completions.csv: expected 5 columns", lineno);
    Completion x;
    try {
      x.prompt_index = std::stoul(f[0]);
      x.prompt = split_tokens(f[1]);
      x.prompt_score = std::stod(f[2]);
      x.generated = split_tokens(f[3]);
      x.score = std::stod(f[4]);
    } catch (const std::exception&) {
      throw ParseError("completions.csv: bad number", lineno);
    }
    r.completions.push_back(std::move(x));
  }
  return r;
}

}  // namespace rarlhf
