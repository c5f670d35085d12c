#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include "rarlhf/cvar.hpp"
#include "rarlhf/error.hpp"
#include "rarlhf/ngram.hpp"
#include "rarlhf/trainer.hpp"

using namespace rarlhf;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  ValenceEnv env = make_toy_env();
  PromptDataset prompts;
  ReferencePolicy ref{PolicyParams(16, 2)};
  TrainerConfig cfg;

  explicit Fixture(std::size_t iterations = 6) {
    Rng rng(2);
    prompts = generate_dataset(env, MixtureSpec{}, 40, rng);
    PolicyParams p(16, 2);
    for (std::size_t i = 0; i < p.actor().size(); ++i) p.actor()[i] = rng.uniform(-0.3, 0.3);
    ref = ReferencePolicy(p);
    cfg.ppo.batch_size = 8;
    cfg.ppo.ppo_epochs = 2;
    cfg.ppo.learning_rate = 0.01;
    cfg.iterations = iterations;
    cfg.rollout.max_new_tokens = 5;
    cfg.beta = BetaController{0.5, 0.05, 0.1};
    cfg.seed = 42;
  }

  TrainerState initial() const { return make_initial_state(ref.params(), cfg); }
  void risk_averse(double alpha, std::size_t i0 = 2) {
    cfg.schedule = RiskSchedule(cfg.ppo.batch_size, alpha, i0, 0.95, cfg.iterations);
  }
};

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("rarlhf_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  return static_cast<std::size_t>(std::count(std::istreambuf_iterator<char>(in), {}, '\n'));
}

bool same_stats(const IterationStats& a, const IterationStats& b) {
  return format_stats_row(a) == format_stats_row(b);
}

}  // namespace

TEST_CASE("training is deterministic under a fixed seed") {
  Fixture f;
  f.risk_averse(0.5);
  const auto a = train(f.initial(), f.ref, f.prompts, f.env, f.cfg);
  const auto b = train(f.initial(), f.ref, f.prompts, f.env, f.cfg);
  CHECK(a.state.params == b.state.params);
  REQUIRE(a.stats.size() == 6);
  for (std::size_t k = 0; k < a.stats.size(); ++k) CHECK(same_stats(a.stats[k], b.stats[k]));
  CHECK(a.state.params != f.ref.params());
  CHECK(a.state.params.all_finite());
}

TEST_CASE("alpha of one reproduces the risk-neutral path bit for bit") {
  Fixture f(10);
  const auto neutral = train(f.initial(), f.ref, f.prompts, f.env, f.cfg);
  f.risk_averse(1.0);
  const auto ra = train(f.initial(), f.ref, f.prompts, f.env, f.cfg);
  CHECK(ra.state.params == neutral.state.params);
  CHECK(ra.state.beta.beta == neutral.state.beta.beta);
  for (std::size_t k = 0; k < 10; ++k) CHECK(same_stats(ra.stats[k], neutral.stats[k]));
}

TEST_CASE("rollout worker count does not change results") {
  Fixture f;
  f.risk_averse(0.5);
  const auto serial = train(f.initial(), f.ref, f.prompts, f.env, f.cfg);
  f.cfg.threads = 4;
  const auto parallel = train(f.initial(), f.ref, f.prompts, f.env, f.cfg);
  CHECK(serial.state.params == parallel.state.params);
}

TEST_CASE("selection keeps the quota of lowest shaped returns") {
  Fixture f;
  f.risk_averse(0.5);
  auto state = f.initial();
  for (std::size_t i = 1; i <= f.cfg.iterations; ++i) {
    IterationBatch batch;
    const auto s = train_iteration(state, f.ref, f.prompts, f.env, f.cfg, i, &batch);
    const std::size_t quota = f.cfg.schedule->batch_quota(i);
    CHECK(s.b0 == quota);
    CHECK(batch.trajectories.size() == f.cfg.ppo.batch_size);
    std::vector<double> returns;
    for (const auto& t : batch.trajectories) returns.push_back(shaped_return(t));
    CHECK(batch.selected == select_tail(returns, quota));
    if (i <= 2) CHECK(batch.selected.size() == f.cfg.ppo.batch_size);

    std::vector<Trajectory> chosen;
    for (std::size_t j : batch.selected) chosen.push_back(batch.trajectories[j]);
    CHECK(s.kl_hat == doctest::Approx(kl_estimate(chosen)));
    for (const auto& t : batch.trajectories) CHECK(t.generated_len() == 5);
  }
}

TEST_CASE("environment-score selection") {
  Fixture f;
  f.risk_averse(0.5);
  f.cfg.select_on = SelectOn::kEnv;
  auto state = f.initial();
  IterationBatch batch;
  train_iteration(state, f.ref, f.prompts, f.env, f.cfg, 6, &batch);
  std::vector<double> env_scores;
  for (const auto& t : batch.trajectories) env_scores.push_back(t.env_score);
  CHECK(batch.selected == select_tail(env_scores, f.cfg.schedule->batch_quota(6)));
}

TEST_CASE("shaped rewards and env scores are consistent in a collected batch") {
  Fixture f;
  const auto state = f.initial();
  const auto batch = collect_batch(state, f.ref, f.prompts, f.env, f.cfg, 1);
  for (const auto& t : batch) {
    CHECK(t.env_score == doctest::Approx(score(f.env, t.tokens, t.prompt_len)));
    double kl = 0.0;
    for (std::size_t p = 0; p < t.positions(); ++p)
      if (t.masks[p] != 0.0) kl += t.logprobs_actor[p] - t.logprobs_ref[p];
    CHECK(shaped_return(t) == doctest::Approx(t.env_score - state.beta.beta * kl));
  }
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  Fixture f;
  f.risk_averse(0.5);
  const auto full = train(f.initial(), f.ref, f.prompts, f.env, f.cfg);

  const auto dir = fresh_dir("resume");
  TrainIo io;
  io.stats_csv = dir / "stats.csv";
  io.checkpoint_dir = dir / "checkpoints";
  io.checkpoint_every = 3;
  TrainerConfig first = f.cfg;
  train(f.initial(), f.ref, f.prompts, f.env, f.cfg, io);
  REQUIRE(fs::exists(dir / "checkpoints" / "iter_0003" / "state.json"));

  auto restored = load_training_checkpoint(dir / "checkpoints" / "iter_0003", first);
  CHECK(restored.iteration == 3);
  // Drop the rows written after iteration 3, as if the run had been killed.
  {
    std::ifstream in(*io.stats_csv);
    std::string line, kept;
    for (int k = 0; k < 4 && std::getline(in, line); ++k) kept += line + "\n";
    in.close();
    std::ofstream(*io.stats_csv) << kept;
  }
  io.checkpoint_dir = dir / "checkpoints2";
  const auto resumed = train(std::move(restored), f.ref, f.prompts, f.env, f.cfg, io);
  CHECK(resumed.state.params == full.state.params);
  CHECK(resumed.state.beta.beta == full.state.beta.beta);
  CHECK(resumed.state.optimizer.first_moment() == full.state.optimizer.first_moment());
  CHECK(resumed.stats.size() == 3);
  CHECK(count_lines(*io.stats_csv) == 7);
}

TEST_CASE("a single iteration writes one stats row and one checkpoint") {
  Fixture f(1);
  const auto dir = fresh_dir("single");
  TrainIo io;
  io.stats_csv = dir / "stats.csv";
  io.checkpoint_dir = dir / "ckpt";
  train(f.initial(), f.ref, f.prompts, f.env, f.cfg, io);
  CHECK(count_lines(*io.stats_csv) == 2);
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "ckpt")) ++n;
  CHECK(n == 1);
  CHECK(fs::exists(dir / "ckpt" / "iter_0001" / "policy.bin"));
  std::ifstream in(*io.stats_csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == kStatsHeader);
}

TEST_CASE("trainer configuration errors") {
  Fixture f;
  f.risk_averse(0.5);
  f.cfg.iterations = 7;
  CHECK_THROWS_AS(f.cfg.validate(), ConfigError);
  Fixture g;
  g.cfg.threads = 0;
  CHECK_THROWS_AS(g.cfg.validate(), ConfigError);
  Fixture h;
  h.cfg.beta.beta = -1.0;
  CHECK_THROWS_AS(train(h.initial(), h.ref, h.prompts, h.env, h.cfg), ConfigError);
}
