#include "rarlhf/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rarlhf/error.hpp"
#include "rarlhf/version.hpp"

namespace rarlhf {

namespace {

constexpr std::uint64_t kDataStream = 0x64617461;
constexpr std::uint64_t kRefStream = 0x72656600;

std::vector<std::vector<TokenId>> tokens_of(const std::vector<LabeledSequence>& seqs) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(s.tokens);
  return out;
}

nlohmann::json env_json(const ValenceEnv& env) {
  return {{"valence", env.valence},
          {"scale", env.scale},
          {"repetition_penalty", env.repetition_penalty_weight}};
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

PromptDataset dataset_for(const ExperimentConfig& cfg, const ValenceEnv& env, std::uint64_t seed,
                          Split split) {
  const std::string& csv = split == Split::kTrain ? cfg.train_csv : cfg.test_csv;
  if (!csv.empty()) {
    auto ds = load_prompts_csv(csv, &env);
    ds.split = split;
    if (ds.prompts.empty()) throw ConfigError(split == Split::kTrain ? "data.train_csv" : "data.test_csv",
                                              "prompt file " + csv + " has no rows");
    return ds;
  }
  Rng rng = Rng::stream(seed, {kDataStream, split == Split::kTrain ? 0u : 1u});
  return generate_dataset(env, cfg.mixture, split == Split::kTrain ? cfg.train_size : cfg.test_size,
                          rng, split);
}

}  // namespace

PolicyParams build_reference(const ExperimentConfig& cfg, const ValenceEnv& env,
                             std::uint64_t seed) {
  PolicyParams params(env.vocab_size(), cfg.window);

  Rng pre_rng = Rng::stream(seed, {kRefStream, 0});
  CorpusSpec mixed = cfg.corpus;
  mixed.positive_fraction = 0.5;
  const auto pretrain = tokens_of(generate_corpus(env, mixed, cfg.pretrain_size, pre_rng));
  SftOptions opt;
  opt.learning_rate = cfg.sft_learning_rate;
  opt.epochs = cfg.pretrain_epochs;
  params = sft_fit(std::move(params), pretrain, opt).params;

  Rng sft_rng = Rng::stream(seed, {kRefStream, 1});
  CorpusSpec positive = cfg.corpus;
  positive.positive_fraction = 1.0;
  const auto sft = tokens_of(generate_corpus(env, positive, cfg.sft_size, sft_rng));
  opt.epochs = cfg.sft_epochs;
  return sft_fit(std::move(params), sft, opt).params;
}

ExperimentSetup build_setup(const ExperimentConfig& cfg, std::uint64_t seed) {
  ExperimentSetup s;
  s.env = make_toy_env(cfg.repetition_penalty, cfg.reward_scale);
  s.env.validate();
  s.train = dataset_for(cfg, s.env, seed, Split::kTrain);
  s.test = dataset_for(cfg, s.env, seed, Split::kTest);
  s.reference = build_reference(cfg, s.env, seed);
  Rng rng = Rng::stream(seed, {kRefStream, 2});
  CorpusSpec positive = cfg.corpus;
  positive.positive_fraction = 1.0;
  s.heldout_positive = tokens_of(generate_corpus(s.env, positive, cfg.perplexity_size, rng));
  return s;
}

EvalOptions eval_options(const ExperimentConfig& cfg, std::uint64_t seed) {
  EvalOptions o;
  o.quantile_bins = cfg.quantile_bins;
  o.tail_thresholds = cfg.tail_thresholds;
  o.histogram_edges = uniform_edges(cfg.hist_lo, cfg.hist_hi, cfg.hist_bins);
  o.rollout.max_new_tokens = cfg.max_new_tokens;
  if (cfg.eos >= 0) o.rollout.eos = static_cast<TokenId>(cfg.eos);
  o.seed = seed;
  return o;
}

ModelResult run_model(const ExperimentConfig& cfg, const ExperimentSetup& setup,
                      std::uint64_t seed, const std::string& model,
                      const std::optional<std::filesystem::path>& dir, const Logger& log) {
  ModelResult res;
  res.model = model;
  res.seed = seed;
  if (dir) std::filesystem::create_directories(*dir);

  if (model == "sft") {
    res.params = setup.reference;
  } else if (model == "rlhf" || model == "ra_rlhf") {
    const auto tcfg = cfg.trainer_config(seed, model == "ra_rlhf");
    const ReferencePolicy ref(setup.reference);
    TrainIo io;
    if (dir) {
      io.stats_csv = *dir / "stats.csv";
      io.checkpoint_dir = *dir / "checkpoints";
      io.checkpoint_every = cfg.checkpoint_every;
    }
    if (log)
      io.on_iteration = [&](const IterationStats& s) {
        if (s.iteration % 10 == 0 || s.iteration == tcfg.iterations) {
          std::ostringstream os;
          os << std::fixed << std::setprecision(3) << "[seed " << seed << ' ' << model << "] iter "
             << s.iteration << " env " << s.env_reward_mean << " kl " << s.kl_hat << " beta "
             << s.beta << " B0 " << s.b0;
          log(os.str());
        }
      };
    auto result = train(make_initial_state(setup.reference, tcfg), ref, setup.train, setup.env,
                        tcfg, io);
    res.params = std::move(result.state.params);
    res.stats = std::move(result.stats);
  } else {
    throw ConfigError("run.models", "unknown model '" + model + "'");
  }

  res.report = evaluate(res.params, setup.test, setup.env, setup.heldout_positive,
                        eval_options(cfg, seed), model);
  if (dir) {
    save_checkpoint(*dir / "policy.bin", res.params);
    save_checkpoint(*dir / "ref.bin", setup.reference);
    write_eval_report(*dir / "eval", res.report);
    nlohmann::json meta;
    meta["model"] = model;
    meta["seed"] = seed;
    meta["version"] = kVersion;
    meta["env"] = env_json(setup.env);
    meta["alpha"] = model == "ra_rlhf" ? nlohmann::json(cfg.alpha) : nlohmann::json(nullptr);
    write_text(*dir / "meta.json", meta.dump(2) + "\n");
  }
  if (log) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << "[seed " << seed << ' ' << model
       << "] eval mean " << res.report.mean_score;
    for (const auto& [th, v] : res.report.tail_average) os << " tail@" << th << ' ' << v;
    os << " dist2 " << res.report.dist2 << " ppl " << res.report.perplexity;
    log(os.str());
  }
  return res;
}

std::filesystem::path resolve_output_dir(const std::filesystem::path& dir) {
  if (dir.is_absolute()) return dir;
  if (const char* root = std::getenv("RARLHF_OUTPUT_ROOT"); root && *root)
    return std::filesystem::path(root) / dir;
  return dir;
}

void prepare_output_dir(const std::filesystem::path& dir, bool force) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw IoError("output directory " + dir.string() + " is not empty (use --force)");
      for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path(), ec);
      if (ec) throw IoError("cannot clear " + dir.string() + ": " + ec.message());
    }
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<ModelResult> run_train(const ExperimentConfig& cfg, const std::filesystem::path& root,
                                   bool force, bool parallel_seeds, const Logger& log) {
  cfg.validate();
  prepare_output_dir(root, force);
  write_text(root / "config.cfg", to_config_text(cfg));
  nlohmann::json meta{{"version", kVersion}, {"seeds", cfg.seeds}, {"models", cfg.models}};
  write_text(root / "run.json", meta.dump(2) + "\n");

  std::mutex mu;
  Logger safe_log;
  if (log)
    safe_log = [&](const std::string& s) {
      std::lock_guard lock(mu);
      log(s);
    };

  std::vector<std::vector<ModelResult>> per_seed(cfg.seeds.size());
  auto run_seed = [&](std::size_t k) {
    const auto seed = cfg.seeds[k];
    const auto setup = build_setup(cfg, seed);
    const auto seed_dir = root / ("seed_" + std::to_string(seed));
    for (const auto& model : cfg.models)
      per_seed[k].push_back(run_model(cfg, setup, seed, model, seed_dir / model, safe_log));
  };
  if (parallel_seeds && cfg.seeds.size() > 1) {
    std::vector<std::exception_ptr> errors(cfg.seeds.size());
    {
      std::vector<std::jthread> pool;
      for (std::size_t k = 0; k < cfg.seeds.size(); ++k)
        pool.emplace_back([&, k] {
          try {
            run_seed(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        });
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (std::size_t k = 0; k < cfg.seeds.size(); ++k) run_seed(k);
  }

  std::vector<ModelResult> all;
  for (auto& v : per_seed)
    for (auto& r : v) all.push_back(std::move(r));
  return all;
}

EvalReport run_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& out_dir, std::uint64_t seed, std::string label,
                    bool force) {
  cfg.validate();
  const PolicyParams params = load_checkpoint(checkpoint);
  ExperimentSetup s;
  s.env = make_toy_env(cfg.repetition_penalty, cfg.reward_scale);
  if (params.vocab_size() != s.env.vocab_size())
    throw ConfigError("env", "checkpoint vocabulary differs from the environment");
  s.test = dataset_for(cfg, s.env, seed, Split::kTest);
  Rng rng = Rng::stream(seed, {kRefStream, 2});
  CorpusSpec positive = cfg.corpus;
  positive.positive_fraction = 1.0;
  s.heldout_positive = tokens_of(generate_corpus(s.env, positive, cfg.perplexity_size, rng));

  prepare_output_dir(out_dir, force);
  auto report = evaluate(params, s.test, s.env, s.heldout_positive, eval_options(cfg, seed), label);
  write_eval_report(out_dir / "eval", report);
  nlohmann::json meta{{"model", label},
                      {"seed", seed},
                      {"version", kVersion},
                      {"env", env_json(s.env)},
                      {"checkpoint", checkpoint.string()}};
  write_text(out_dir / "meta.json", meta.dump(2) + "\n");
  return report;
}

void write_schedule_csv(std::ostream& out, const RiskSchedule& schedule) {
  out << "iteration,B0\n";
  for (const auto& [i, b0] : schedule.table()) out << i << ',' << b0 << '\n';
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << std::setprecision(12) << "i0,alpha,rho,seed,mean_reward,tail_average,perplexity,dist2\n";
  for (const auto& r : rows)
    out << r.warm_start << ',' << r.alpha << ',' << r.rho << ',' << r.seed << ',' << r.mean_reward
        << ',' << r.tail_average << ',' << r.perplexity << ',' << r.dist2 << '\n';
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const SweepGrid& grid,
                                const std::optional<std::filesystem::path>& out_csv,
                                const Logger& log) {
  if (grid.alphas.empty() || grid.warm_starts.empty() || grid.rhos.empty())
    throw ConfigError("sweep", "grid must be non-empty in alpha, i0 and rho");
  cfg.validate();
  std::vector<SweepRow> rows;
  for (const auto seed : cfg.seeds) {
    const auto setup = build_setup(cfg, seed);
    for (const auto i0 : grid.warm_starts)
      for (const auto alpha : grid.alphas)
        for (const auto rho : grid.rhos) {
          ExperimentConfig point = cfg;
          point.alpha = alpha;
          point.warm_start = i0;
          point.rho = rho;
          point.validate();
          const auto res = run_model(point, setup, seed, "ra_rlhf", std::nullopt, log);
          SweepRow row{i0, alpha, rho, seed, res.report.mean_score, std::nan(""),
                       res.report.perplexity, res.report.dist2};
          if (!res.report.tail_average.empty()) row.tail_average = res.report.tail_average.begin()->second;
          rows.push_back(row);
        }
  }
  if (out_csv) {
    if (out_csv->has_parent_path()) std::filesystem::create_directories(out_csv->parent_path());
    std::ofstream out(*out_csv);
    if (!out) throw IoError("cannot write " + out_csv->string());
    write_sweep_csv(out, rows);
  }
  return rows;
}

namespace {

struct MeanStd {
  double mean = 0.0, std = 0.0;
  std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  m.n = xs.size();
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    for (double x : xs) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / static_cast<double>(xs.size() - 1));
  }
  return m;
}

}  // namespace

std::vector<ReportEntry> run_report(const std::vector<std::filesystem::path>& run_dirs,
                                    const std::filesystem::path& out_dir, std::size_t bins,
                                    std::size_t quantile_bins, double tail_threshold) {
  namespace fs = std::filesystem;
  if (run_dirs.empty()) throw ConfigError("report", "need at least one run directory");

  std::vector<ReportEntry> entries;
  std::optional<nlohmann::json> env;
  auto add = [&](const fs::path& model_dir) {
    std::ifstream in(model_dir / "meta.json");
    nlohmann::json meta;
    try {
      in >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed " + (model_dir / "meta.json").string() + ": " + e.what());
    }
    if (!env)
      env = meta.at("env");
    else if (*env != meta.at("env"))
      throw ConfigError("env", "run " + model_dir.string() + " was scored by a different environment");
    ReportEntry e;
    e.model = meta.at("model").get<std::string>();
    e.seed = meta.at("seed").get<std::uint64_t>();
    e.dir = model_dir;
    e.report = read_eval_report(model_dir / "eval");
    entries.push_back(std::move(e));
  };
  for (const auto& d : run_dirs) {
    if (!fs::is_directory(d)) throw IoError("not a directory: " + d.string());
    std::vector<fs::path> found;
    if (fs::exists(d / "meta.json")) found.push_back(d);
    for (const auto& e : fs::recursive_directory_iterator(d))
      if (e.path().filename() == "meta.json" && e.path().parent_path() != d)
        found.push_back(e.path().parent_path());
    std::sort(found.begin(), found.end());
    for (const auto& f : found) add(f);
  }
  if (entries.empty()) throw IoError("no evaluated runs found");

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& e : entries)
    for (const auto& c : e.report.completions) {
      lo = std::min(lo, c.score);
      hi = std::max(hi, c.score);
    }
  lo = std::floor(lo * 2.0) / 2.0;
  hi = std::ceil(hi * 2.0) / 2.0;
  if (!(hi > lo)) hi = lo + 1.0;
  const auto edges = uniform_edges(lo, hi + 1e-9, bins);

  std::map<std::string, std::vector<const ReportEntry*>> by_model;
  for (const auto& e : entries) by_model[e.model].push_back(&e);

  fs::create_directories(out_dir);
  std::ofstream hist(out_dir / "histogram.csv");
  hist << std::setprecision(17) << "model,seed,bin_lo,bin_hi,count\n";
  std::ofstream quant(out_dir / "quantile.csv");
  quant << std::setprecision(17) << "model,bin,quantile,mean,std,seeds\n";
  std::ofstream metrics(out_dir / "metrics.csv");
  metrics << std::setprecision(17) << "model,metric,mean,std,seeds\n";
  nlohmann::json summary;
  summary["edges"] = edges;

  for (const auto& [model, list] : by_model) {
    std::vector<std::vector<double>> qbins(quantile_bins);
    std::vector<double> qmid(quantile_bins, 0.0);
    std::map<std::string, std::vector<double>> m;
    for (const auto* e : list) {
      std::vector<double> ps, cs;
      for (const auto& c : e->report.completions) {
        ps.push_back(c.prompt_score);
        cs.push_back(c.score);
      }
      const auto h = histogram(cs, edges);
      for (std::size_t k = 0; k < h.counts.size(); ++k)
        hist << model << ',' << e->seed << ',' << edges[k] << ',' << edges[k + 1] << ','
             << h.counts[k] << '\n';
      const auto q = quantile_curve(ps, cs, quantile_bins);
      for (std::size_t k = 0; k < q.size(); ++k) {
        qbins[k].push_back(q[k].mean_score);
        qmid[k] = q[k].quantile;
      }
      m["mean_score"].push_back(e->report.mean_score);
      try {
        m["tail_average"].push_back(tail_average(ps, cs, tail_threshold));
      } catch (const ContractViolation&) {
      }
      m["bottom_quantile"].push_back(q.front().mean_score);
      m["dist1"].push_back(e->report.dist1);
      m["dist2"].push_back(e->report.dist2);
      m["dist3"].push_back(e->report.dist3);
      m["gen_len_mean"].push_back(e->report.gen_len_mean);
      m["perplexity"].push_back(e->report.perplexity);
    }
    for (std::size_t k = 0; k < quantile_bins; ++k) {
      if (qbins[k].empty()) continue;
      const auto s = mean_std(qbins[k]);
      quant << model << ',' << k << ',' << qmid[k] << ',' << s.mean << ',' << s.std << ',' << s.n
            << '\n';
    }
    for (const auto& [name, xs] : m) {
      const auto s = mean_std(xs);
      metrics << model << ',' << name << ',' << s.mean << ',' << s.std << ',' << s.n << '\n';
      summary["models"][model][name] = {{"mean", s.mean}, {"std", s.std}, {"seeds", s.n}};
    }
  }
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  return entries;
}

}  // namespace rarlhf
