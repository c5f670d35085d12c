#include <doctest.h>

#include <cmath>
#include <cstring>

#include "../support/oracles.hpp"
#include "rarlhf/error.hpp"
#include "rarlhf/ppo.hpp"

using namespace rarlhf;

namespace {

const PPOConfig kCfg{};

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("GAE hand example") {
  const auto g = compute_gae(std::vector<double>{0, 0, 1}, std::vector<double>{0.5, 0.5, 0.5},
                             std::vector<double>{1, 1, 1}, 0.9, 0.95);
  CHECK(g.advantages[0] == doctest::Approx(0.2727625).epsilon(1e-12));
  CHECK(g.advantages[1] == doctest::Approx(0.3775).epsilon(1e-12));
  CHECK(g.advantages[2] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g.returns[2] == doctest::Approx(1.0));
}

TEST_CASE("GAE with lambda zero is the one-step TD error") {
  const std::vector<double> r{0.3, -0.2, 1.0}, v{0.1, 0.4, -0.3}, m{1, 1, 1};
  const auto g = compute_gae(r, v, m, 0.8, 0.0);
  CHECK(g.advantages[0] == doctest::Approx(0.3 + 0.8 * 0.4 - 0.1));
  CHECK(g.advantages[1] == doctest::Approx(-0.2 + 0.8 * -0.3 - 0.4));
  CHECK(g.advantages[2] == doctest::Approx(1.0 + 0.3));
}

TEST_CASE("GAE matches the backward-recursion oracle") {
  Rng rng(31);
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 1 + rng.index(16);
    const auto r = random_vec(rng, n, -1, 1), v = random_vec(rng, n, -1, 1);
    // Prompt prefix masked out, then generated positions, then right padding.
    const std::size_t start = rng.index(n), len = 1 + rng.index(n - start);
    std::vector<double> m(n, 0.0);
    for (std::size_t t = start; t < start + len; ++t) m[t] = 1.0;
    const double gamma = rng.uniform(0.5, 1.0), lam = rng.uniform(0.0, 1.0);
    const auto g = compute_gae(r, v, m, gamma, lam);
    const auto o = oracle::gae_backward(r, v, m, gamma, lam);
    for (std::size_t t = 0; t < n; ++t) {
      CHECK(std::abs(g.advantages[t] - o.adv[t]) <= 1e-9);
      CHECK(std::abs(g.returns[t] - o.ret[t]) <= 1e-9);
    }
  }
}

TEST_CASE("GAE with unit gamma and lambda is reward-to-go minus values") {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    const std::size_t n = 2 + rng.index(10);
    const auto r = random_vec(rng, n, -1, 1), v = random_vec(rng, n, -1, 1);
    std::vector<double> m(n, 1.0);
    m[0] = 0.0;
    const auto g = compute_gae(r, v, m, 1.0, 1.0);
    const auto rtg = oracle::reward_to_go(r, m);
    for (std::size_t t = 1; t < n; ++t) CHECK(g.advantages[t] == doctest::Approx(rtg[t] - v[t]));
    CHECK(g.advantages[0] == 0.0);
    CHECK(g.returns[0] == v[0]);
  }
}

TEST_CASE("GAE shape errors") {
  CHECK_THROWS_AS(compute_gae(std::vector<double>{1, 2}, std::vector<double>{1},
                              std::vector<double>{1, 1}, 1.0, 1.0),
                  ContractViolation);
  CHECK_THROWS_AS(compute_gae(2, std::vector<double>(5), std::vector<double>(5),
                              std::vector<double>(5), 1.0, 1.0),
                  ContractViolation);
}

TEST_CASE("whitening") {
  std::vector<double> a{1.0, 3.0};
  CHECK(whiten(a, std::vector<double>{1, 1}));
  CHECK(a[0] == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(a[1] == doctest::Approx(1.0).epsilon(1e-7));

  std::vector<double> c{2.0, 2.0, 2.0};
  whiten(c, std::vector<double>{1, 1, 1});
  for (double x : c) CHECK(std::abs(x) < 1e-6);

  std::vector<double> d{0.1234567, 5.0, 7.0, -3.3};
  const double before = d[0];
  whiten(d, std::vector<double>{0, 1, 1, 1});
  CHECK(std::memcmp(&d[0], &before, sizeof(double)) == 0);

  std::vector<double> e{4.0, 9.0};
  std::string warning;
  CHECK_FALSE(whiten(e, std::vector<double>{0, 1}, &warning));
  CHECK(e[1] == 9.0);
  CHECK_FALSE(warning.empty());
}

TEST_CASE("policy loss examples") {
  const std::vector<double> one{1.0}, zero{0.0}, mask{1.0};
  CHECK(ppo_losses(zero, zero, one, zero, zero, zero, mask, kCfg).pg_loss == doctest::Approx(-1.0));
  const std::vector<double> lp_new{std::log(1.5)};
  const auto l = ppo_losses(lp_new, zero, one, zero, zero, zero, mask, kCfg);
  CHECK(l.pg_loss == doctest::Approx(-1.2));
  CHECK(l.clip_fraction == 1.0);
}

TEST_CASE("value loss example and total") {
  const std::vector<double> zero{0.0}, mask{1.0};
  const auto l = ppo_losses(zero, zero, zero, std::vector<double>{2.0}, std::vector<double>{1.0},
                            std::vector<double>{3.0}, mask, kCfg);
  CHECK(l.vf_loss == doctest::Approx(3.24));
  CHECK(l.total == doctest::Approx(l.pg_loss + kCfg.vf_coef * 3.24));
}

TEST_CASE("masked-out positions do not affect the losses") {
  const std::vector<double> m{1.0, 0.0};
  const auto a = ppo_losses(std::vector<double>{0.1, 9}, std::vector<double>{0, -9},
                            std::vector<double>{1, 50}, std::vector<double>{0.5, 7},
                            std::vector<double>{0.4, -7}, std::vector<double>{1, 70}, m, kCfg);
  const auto b = ppo_losses(std::vector<double>{0.1, 0}, std::vector<double>{0, 0},
                            std::vector<double>{1, 0}, std::vector<double>{0.5, 0},
                            std::vector<double>{0.4, 0}, std::vector<double>{1, 0}, m, kCfg);
  CHECK(a.pg_loss == b.pg_loss);
  CHECK(a.vf_loss == b.vf_loss);
}

TEST_CASE("config validation names the field") {
  PPOConfig c;
  c.cliprange = 0.0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("cliprange") != std::string::npos);
  }
  PPOConfig d;
  d.ppo_epochs = 0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  CHECK_NOTHROW(PPOConfig{}.validate());
}

TEST_CASE("full PPO loss gradient matches finite differences") {
  // Two-token vocabulary, horizon three, two rows with different prompt lengths.
  PolicyParams params(2, 2);
  Rng rng(77);
  for (std::size_t i = 0; i < params.num_params(); ++i) params.flat(i) = rng.uniform(-0.5, 0.5);

  std::vector<Trajectory> ts(2);
  ts[0].prompt_len = 1;
  ts[0].tokens = {0, 1, 1, 0};
  ts[0].masks = {1, 1, 1};
  ts[1].prompt_len = 2;
  ts[1].tokens = {1, 0, 0, 1, 1};
  ts[1].masks = {0, 1, 1, 1};

  PPOBatch data;
  data.batch = pad_batch(ts);
  const std::size_t n = data.batch.rows * data.batch.positions();
  // Old quantities near the current ones so ratios sit inside the clip range
  // and vpreds near the value clip boundary stay on one side of it.
  const auto fwd = batched_forward_pass(params, data.batch);
  data.old_logprobs.resize(n);
  data.old_values.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    data.old_logprobs[k] = fwd.logprobs[k] + rng.uniform(-0.1, 0.1);
    data.old_values[k] = fwd.values[k] + rng.uniform(-0.1, 0.1);
  }
  data.advantages = random_vec(rng, n, -1, 1);
  data.returns = random_vec(rng, n, -1, 1);

  PPOConfig cfg;
  cfg.vf_coef = 0.5;
  const LossFunction loss = [&](const PolicyParams& p, PolicyGradient* g) {
    return ppo_loss_and_grad(p, data, cfg, g).total;
  };
  CHECK(grad_check(params, loss, 1e-5).max_relative_error <= 1e-4);
}

TEST_CASE("select_rows keeps the layout") {
  std::vector<Trajectory> ts(3);
  for (std::size_t r = 0; r < 3; ++r) {
    ts[r].prompt_len = 1 + r;
    ts[r].tokens.assign(3 + r, static_cast<TokenId>(r));
    ts[r].masks.assign(2 + r, 1.0);
  }
  PPOBatch full;
  full.batch = pad_batch(ts);
  const std::size_t n = full.batch.rows * full.batch.positions();
  for (auto* v : {&full.old_logprobs, &full.old_values, &full.advantages, &full.returns}) {
    v->resize(n);
    for (std::size_t k = 0; k < n; ++k) (*v)[k] = static_cast<double>(k);
  }
  const std::vector<std::size_t> rows{2, 0};
  const auto sub = select_rows(full, rows);
  CHECK(sub.batch.rows == 2);
  CHECK(sub.batch.width == full.batch.width);
  const std::size_t P = full.batch.positions();
  CHECK(sub.advantages[0] == static_cast<double>(2 * P));
  CHECK(sub.returns[P] == 0.0);
}
