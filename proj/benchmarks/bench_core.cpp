#include <benchmark/benchmark.h>

#include "rarlhf/cvar.hpp"
#include "rarlhf/ppo.hpp"
#include "rarlhf/risk_scheduler.hpp"
#include "rarlhf/trainer.hpp"

using namespace rarlhf;

namespace {

PolicyParams random_policy(std::size_t vocab, std::size_t window) {
  PolicyParams p(vocab, window);
  Rng rng(1);
  for (std::size_t i = 0; i < p.num_params(); ++i) p.flat(i) = rng.uniform(-0.3, 0.3);
  return p;
}

void BM_ScheduleTable(benchmark::State& st) {
  const RiskSchedule s(128, 0.4, 30, 0.95, 194);
  for (auto _ : st) benchmark::DoNotOptimize(s.table());
}
BENCHMARK(BM_ScheduleTable);

void BM_Cvar(benchmark::State& st) {
  Rng rng(2);
  std::vector<double> xs(static_cast<std::size_t>(st.range(0)));
  for (double& x : xs) x = rng.uniform(-3, 3);
  for (auto _ : st) benchmark::DoNotOptimize(cvar(xs, 0.4));
}
BENCHMARK(BM_Cvar)->Arg(128)->Arg(4096);

void BM_Gae(benchmark::State& st) {
  const std::size_t rows = 64, pos = 15;
  Rng rng(3);
  std::vector<double> r(rows * pos), v(rows * pos), m(rows * pos, 1.0);
  for (std::size_t k = 0; k < r.size(); ++k) {
    r[k] = rng.uniform(-1, 1);
    v[k] = rng.uniform(-1, 1);
  }
  for (auto _ : st) benchmark::DoNotOptimize(compute_gae(rows, r, v, m, 1.0, 0.95));
}
BENCHMARK(BM_Gae);

void BM_Rollout(benchmark::State& st) {
  const auto p = random_policy(16, 4);
  const PolicyModel model(p);
  const Prompt prompt{{1, 2, 3, 4}, {}, -1};
  Rng rng(4);
  for (auto _ : st) benchmark::DoNotOptimize(rollout(model, prompt, {12, {}}, rng));
}
BENCHMARK(BM_Rollout);

void BM_PpoLossAndGrad(benchmark::State& st) {
  const auto p = random_policy(16, 4);
  const PolicyModel model(p);
  Rng rng(5);
  std::vector<Trajectory> ts;
  for (int k = 0; k < 64; ++k) ts.push_back(rollout(model, Prompt{{1, 2, 3, 4}, {}, -1}, {12, {}}, rng));
  PPOBatch data;
  data.batch = pad_batch(ts);
  const auto fwd = batched_forward_pass(p, data.batch);
  data.old_logprobs = fwd.logprobs;
  data.old_values = fwd.values;
  data.advantages.assign(fwd.logprobs.size(), 0.5);
  data.returns.assign(fwd.logprobs.size(), 1.0);
  const PPOConfig cfg;
  for (auto _ : st) {
    PolicyGradient g(p);
    benchmark::DoNotOptimize(ppo_loss_and_grad(p, data, cfg, &g));
  }
}
BENCHMARK(BM_PpoLossAndGrad);

void BM_TrainIteration(benchmark::State& st) {
  const auto env = make_toy_env();
  Rng rng(6);
  const auto prompts = generate_dataset(env, MixtureSpec{}, 500, rng);
  const ReferencePolicy ref(random_policy(16, 4));
  TrainerConfig cfg;
  cfg.ppo.batch_size = 64;
  cfg.ppo.learning_rate = 0.02;
  cfg.iterations = 60;
  cfg.beta = BetaController{2.0, 0.02, 0.0128};
  cfg.schedule = RiskSchedule(64, 0.4, 10, 0.95, 60);
  cfg.threads = static_cast<std::size_t>(st.range(0));
  auto state = make_initial_state(ref.params(), cfg);
  std::size_t i = 1;
  for (auto _ : st) {
    benchmark::DoNotOptimize(train_iteration(state, ref, prompts, env, cfg, i));
    i = i % cfg.iterations + 1;
  }
}
BENCHMARK(BM_TrainIteration)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
