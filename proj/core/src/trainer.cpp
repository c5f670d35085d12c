#include "rarlhf/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rarlhf/cvar.hpp"
#include "rarlhf/error.hpp"
#include "rarlhf/ngram.hpp"

namespace rarlhf {

namespace {

constexpr std::uint64_t kPromptStream = 0x70726f6d;
constexpr std::uint64_t kEpisodeStream = 0x65706973;
constexpr std::uint64_t kMinibatchStream = 0x6d696e69;

}  // namespace

void TrainerConfig::validate() const {
  ppo.validate();
  try {
    beta.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError("kl", e.what());
  }
  if (iterations < 1) throw ConfigError("schedule.iterations", "must be >= 1");
  if (rollout.max_new_tokens < 1) throw ConfigError("rollout.max_new_tokens", "must be >= 1");
  if (threads < 1) throw ConfigError("train.threads", "must be >= 1");
  if (schedule) {
    if (schedule->batch_size() != ppo.batch_size)
      throw ConfigError("schedule", "batch size differs from ppo.batch_size");
    if (schedule->iterations() != iterations)
      throw ConfigError("schedule.iterations", "differs from the trainer iteration count");
  }
}

TrainerState make_initial_state(const PolicyParams& init, const TrainerConfig& cfg) {
  AdamConfig adam = cfg.adam;
  adam.learning_rate = cfg.ppo.learning_rate;
  return TrainerState{init, Adam(init, adam), cfg.beta, 0};
}

std::vector<Trajectory> collect_batch(const TrainerState& state, const ReferencePolicy& ref,
                                      const PromptDataset& prompts, const ValenceEnv& env,
                                      const TrainerConfig& cfg, std::size_t i) {
  if (prompts.prompts.empty()) throw ContractViolation("collect_batch: empty prompt dataset");
  const std::size_t B = cfg.ppo.batch_size;

  std::vector<std::size_t> picks(B);
  Rng prompt_rng = Rng::stream(cfg.seed, {kPromptStream, i});
  for (auto& p : picks) p = prompt_rng.index(prompts.size());

  std::vector<Trajectory> out(B);
  const PolicyModel actor(state.params);
  auto work = [&](std::size_t j) {
    Rng rng = Rng::stream(cfg.seed, {kEpisodeStream, i, j});
    Trajectory traj = rollout(actor, prompts.prompts[picks[j]], cfg.rollout, rng);
    traj.prompt_index = picks[j];
    std::vector<double> logp(ref.vocab_size());
    for (std::size_t t = 0; t < traj.positions(); ++t) {
      ref.log_probs(std::span<const TokenId>(traj.tokens).first(t + 1), logp);
      traj.logprobs_ref[t] = logp[static_cast<std::size_t>(traj.tokens[t + 1])];
    }
    traj.env_score = score(env, traj.tokens, traj.prompt_len);
    apply_shaped_rewards(traj, state.beta.beta);
    out[j] = std::move(traj);
  };

  const std::size_t workers = std::min(cfg.threads, B);
  if (workers <= 1) {
    for (std::size_t j = 0; j < B; ++j) work(j);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t j = w; j < B; j += workers) work(j);
      });
  }
  return out;
}

IterationStats train_iteration(TrainerState& state, const ReferencePolicy& ref,
                               const PromptDataset& prompts, const ValenceEnv& env,
                               const TrainerConfig& cfg, std::size_t i,
                               IterationBatch* batch_out) {
  if (i < 1 || i > cfg.iterations)
    throw ContractViolation("train_iteration: iteration " + std::to_string(i) + " outside [1, " +
                            std::to_string(cfg.iterations) + "]");
  std::vector<Trajectory> trajs = collect_batch(state, ref, prompts, env, cfg, i);
  const std::size_t B = trajs.size();

  IterationStats stats;
  stats.iteration = i;
  stats.beta = state.beta.beta;
  std::vector<double> select_returns(B);
  for (std::size_t j = 0; j < B; ++j) {
    const auto& t = trajs[j];
    const double shaped = shaped_return(t, cfg.ppo.gamma);
    select_returns[j] = cfg.select_on == SelectOn::kShaped ? shaped : t.env_score;
    stats.env_reward_mean += t.env_score;
    stats.shaped_return_mean += std::accumulate(t.per_token_rewards.begin(),
                                                t.per_token_rewards.end(), 0.0);
    stats.gen_len_mean += static_cast<double>(t.generated_len());
    stats.dist2_mean += t.generated_len() >= 2 ? dist_n(t.generated(), 2) : 1.0;
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  stats.env_reward_mean *= inv_b;
  stats.shaped_return_mean *= inv_b;
  stats.gen_len_mean *= inv_b;
  stats.dist2_mean *= inv_b;

  stats.b0 = cfg.schedule ? cfg.schedule->batch_quota(i) : B;
  const auto selected = select_tail(select_returns, stats.b0);
  std::vector<Trajectory> chosen;
  chosen.reserve(selected.size());
  for (std::size_t j : selected) chosen.push_back(trajs[j]);
  stats.kl_hat = kl_estimate(chosen);

  PPOBatch data;
  data.batch = pad_batch(chosen);
  data.old_logprobs = data.batch.gather(chosen, &Trajectory::logprobs_actor);
  data.old_values = data.batch.gather(chosen, &Trajectory::values);
  const auto rewards = data.batch.gather(chosen, &Trajectory::per_token_rewards);
  auto gae = compute_gae(data.batch.rows, rewards, data.old_values, data.batch.masks,
                         cfg.ppo.gamma, cfg.ppo.lam);
  data.returns = std::move(gae.returns);
  data.advantages = std::move(gae.advantages);
  whiten(data.advantages, data.batch.masks);

  const std::size_t rows = data.batch.rows;
  const std::size_t mb = cfg.ppo.minibatch_size == 0 ? rows : std::min(cfg.ppo.minibatch_size, rows);
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.ppo.ppo_epochs; ++epoch) {
    if (mb < rows) {
      Rng rng = Rng::stream(cfg.seed, {kMinibatchStream, i, epoch});
      std::shuffle(order.begin(), order.end(), rng.engine());
    }
    for (std::size_t start = 0; start < rows; start += mb) {
      const std::size_t end = std::min(rows, start + mb);
      PolicyGradient grad(state.params);
      PPOLosses losses;
      if (mb == rows) {
        losses = ppo_loss_and_grad(state.params, data, cfg.ppo, &grad);
      } else {
        const auto part = select_rows(
            data, std::span<const std::size_t>(order).subspan(start, end - start));
        losses = ppo_loss_and_grad(state.params, part, cfg.ppo, &grad);
      }
      state.optimizer.step(state.params, grad);
      stats.pg_loss += losses.pg_loss;
      stats.vf_loss += losses.vf_loss;
      stats.total_loss += losses.total;
      ++steps;
    }
  }
  const double inv_steps = 1.0 / static_cast<double>(steps);
  stats.pg_loss *= inv_steps;
  stats.vf_loss *= inv_steps;
  stats.total_loss *= inv_steps;
  if (!state.params.all_finite())
    throw Error("training diverged: non-finite parameters at iteration " + std::to_string(i));

  if (cfg.adaptive_kl) state.beta = beta_update(state.beta, stats.kl_hat);
  state.iteration = i;

  if (batch_out) {
    batch_out->trajectories = std::move(trajs);
    batch_out->selected = selected;
  }
  return stats;
}

std::string format_stats_row(const IterationStats& s) {
  std::ostringstream os;
  os << std::setprecision(17) << s.iteration << ',' << s.env_reward_mean << ','
     << s.shaped_return_mean << ',' << s.kl_hat << ',' << s.beta << ',' << s.b0 << ','
     << s.pg_loss << ',' << s.vf_loss << ',' << s.total_loss << ',' << s.gen_len_mean << ','
     << s.dist2_mean;
  return os.str();
}

void save_training_checkpoint(const std::filesystem::path& dir, const TrainerState& state,
                              const TrainerConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  save_checkpoint(dir / "policy.bin", state.params);
  save_checkpoint(dir / "adam_m.bin", state.optimizer.first_moment());
  save_checkpoint(dir / "adam_v.bin", state.optimizer.second_moment());
  nlohmann::json j;
  j["iteration"] = state.iteration;
  j["seed"] = cfg.seed;
  j["adam_steps"] = state.optimizer.steps();
  j["beta"] = {{"beta", state.beta.beta},
               {"kl_target", state.beta.kl_target},
               {"k_beta", state.beta.k_beta}};
  j["rng"] = "streams keyed by (seed, iteration, episode)";
  std::ofstream out(dir / "state.json");
  if (!out) throw IoError("cannot write " + (dir / "state.json").string());
  out << j.dump(2) << '\n';
}

TrainerState load_training_checkpoint(const std::filesystem::path& dir, const TrainerConfig& cfg) {
  std::ifstream in(dir / "state.json");
  if (!in) throw IoError("cannot open " + (dir / "state.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + (dir / "state.json").string() + ": " + e.what());
  }
  if (j.at("seed").get<std::uint64_t>() != cfg.seed)
    throw ConfigError("run.seed", "differs from the checkpoint in " + dir.string());
  TrainerState state = make_initial_state(load_checkpoint(dir / "policy.bin"), cfg);
  state.optimizer.restore(load_checkpoint(dir / "adam_m.bin"), load_checkpoint(dir / "adam_v.bin"),
                          j.at("adam_steps").get<std::size_t>());
  state.beta.beta = j.at("beta").at("beta").get<double>();
  state.beta.kl_target = j.at("beta").at("kl_target").get<double>();
  state.beta.k_beta = j.at("beta").at("k_beta").get<double>();
  state.iteration = j.at("iteration").get<std::size_t>();
  return state;
}

TrainResult train(TrainerState state, const ReferencePolicy& ref, const PromptDataset& prompts,
                  const ValenceEnv& env, const TrainerConfig& cfg, const TrainIo& io) {
  cfg.validate();
  std::ofstream csv;
  if (io.stats_csv) {
    const bool append = state.iteration > 0 && std::filesystem::exists(*io.stats_csv);
    csv.open(*io.stats_csv, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw IoError("cannot write stats file " + io.stats_csv->string());
    if (!append) csv << kStatsHeader << '\n';
  }

  TrainResult result;
  for (std::size_t i = state.iteration + 1; i <= cfg.iterations; ++i) {
    auto stats = train_iteration(state, ref, prompts, env, cfg, i);
    if (csv.is_open()) csv << format_stats_row(stats) << '\n' << std::flush;
    if (io.on_iteration) io.on_iteration(stats);
    result.stats.push_back(stats);
    const bool periodic = io.checkpoint_every > 0 && i % io.checkpoint_every == 0;
    if (io.checkpoint_dir && (periodic || i == cfg.iterations)) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%04zu", i);
      save_training_checkpoint(*io.checkpoint_dir / name, state, cfg);
    }
  }
  result.state = std::move(state);
  return result;
}

}  // namespace rarlhf
