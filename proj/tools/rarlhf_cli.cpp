#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "rarlhf/config.hpp"
#include "rarlhf/error.hpp"
#include "rarlhf/experiment.hpp"
#include "rarlhf/version.hpp"

namespace {

rarlhf::ExperimentConfig load(const std::string& path, const std::vector<std::string>& sets) {
  if (path.empty()) {
    rarlhf::ConfigEntries entries;
    for (const auto& s : sets) rarlhf::apply_override(entries, s);
    return rarlhf::to_experiment_config(entries);
  }
  return rarlhf::load_experiment_config(path, sets);
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk-averse RLHF on token-level toy environments"};
  app.set_version_flag("--version", rarlhf::kVersion);
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  std::string out;
  bool force = false;
  bool quiet = false;
  auto common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("-c,--config", config, "Configuration file")->check(CLI::ExistingFile);
    if (config_required) opt->required();
    sub->add_option("--set", sets, "Override a key: section.key=value (repeatable)");
    sub->add_flag("-q,--quiet", quiet, "No progress output");
  };

  auto* train = app.add_subcommand("train", "Train and evaluate every configured seed and model");
  common(train, true);
  bool parallel_seeds = false;
  train->add_option("-o,--out", out, "Output directory (default: run.output_dir)");
  train->add_flag("--force", force, "Overwrite a non-empty output directory");
  train->add_flag("--parallel-seeds", parallel_seeds, "Run seeds concurrently");

  auto* eval = app.add_subcommand("eval", "Evaluate a policy checkpoint on the test split");
  common(eval, true);
  std::string checkpoint, label = "model";
  std::uint64_t seed = 0;
  eval->add_option("--checkpoint", checkpoint, "policy.bin to evaluate")->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--out", out, "Output directory")->required();
  eval->add_option("--seed", seed, "Seed selecting the test split and sampling streams");
  eval->add_option("--label", label, "Model label recorded in the report");
  eval->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* schedule = app.add_subcommand("schedule", "Print the batch-quota schedule as CSV");
  common(schedule, false);
  schedule->add_option("-o,--out", out, "CSV file (default: stdout)");

  auto* sweep = app.add_subcommand("sweep", "RA-RLHF runs over a grid of (alpha, i0, rho)");
  common(sweep, true);
  std::vector<double> alphas, rhos;
  std::vector<std::size_t> warm_starts;
  sweep->add_option("--alpha", alphas, "Risk levels")->delimiter(',');
  sweep->add_option("--i0", warm_starts, "Warm-start iterations")->delimiter(',');
  sweep->add_option("--rho", rhos, "Ramp fractions")->delimiter(',');
  sweep->add_option("-o,--out", out, "sweep.csv path (default: stdout)");

  auto* report = app.add_subcommand("report", "Merge evaluated runs into one comparison report");
  std::vector<std::string> run_dirs;
  std::size_t bins = 16, quantile_bins = 10;
  double threshold = -2.5;
  report->add_option("runs", run_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("-o,--out", out, "Report directory")->required();
  report->add_option("--bins", bins, "Shared histogram bins")->check(CLI::PositiveNumber);
  report->add_option("--quantile-bins", quantile_bins, "Prompt-quantile bins")->check(CLI::PositiveNumber);
  report->add_option("--tail-threshold", threshold, "Prompt-score threshold of the tail average");

  CLI11_PARSE(app, argc, argv);
  const rarlhf::Logger log = quiet ? rarlhf::Logger{} : rarlhf::Logger{log_line};

  try {
    if (*train) {
      const auto cfg = load(config, sets);
      const auto root = rarlhf::resolve_output_dir(out.empty() ? cfg.output_dir : out);
      rarlhf::run_train(cfg, root, force, parallel_seeds, log);
      std::cout << root.string() << '\n';
    } else if (*eval) {
      const auto cfg = load(config, sets);
      const auto report_data =
          rarlhf::run_eval(cfg, checkpoint, rarlhf::resolve_output_dir(out), seed, label, force);
      std::cout << "mean_score," << report_data.mean_score << '\n';
    } else if (*schedule) {
      const auto cfg = load(config, sets);
      const rarlhf::RiskSchedule sched(cfg.ppo.batch_size, cfg.alpha, cfg.warm_start, cfg.rho,
                                       cfg.iterations);
      if (out.empty()) {
        rarlhf::write_schedule_csv(std::cout, sched);
      } else {
        std::ofstream f(rarlhf::resolve_output_dir(out));
        if (!f) throw rarlhf::IoError("cannot write " + out);
        rarlhf::write_schedule_csv(f, sched);
      }
    } else if (*sweep) {
      const auto cfg = load(config, sets);
      rarlhf::SweepGrid grid{alphas, warm_starts, rhos};
      if (grid.alphas.empty()) grid.alphas = {cfg.alpha};
      if (grid.warm_starts.empty()) grid.warm_starts = {cfg.warm_start};
      if (grid.rhos.empty()) grid.rhos = {cfg.rho};
      std::optional<std::filesystem::path> path;
      if (!out.empty()) path = rarlhf::resolve_output_dir(out);
      const auto rows = rarlhf::run_sweep(cfg, grid, path, log);
      if (!path) rarlhf::write_sweep_csv(std::cout, rows);
    } else if (*report) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      const auto entries = rarlhf::run_report(dirs, rarlhf::resolve_output_dir(out), bins,
                                              quantile_bins, threshold);
      std::cout << entries.size() << " evaluated runs merged\n";
    }
  } catch (const rarlhf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const rarlhf::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
