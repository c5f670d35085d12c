#include <doctest.h>

#include <cmath>

#include "rarlhf/error.hpp"
#include "rarlhf/reward_shaping.hpp"

using namespace rarlhf;

namespace {

// One prompt token then generated tokens with the given log-probabilities.
Trajectory generated(std::vector<double> actor, std::vector<double> ref, double env) {
  Trajectory t;
  t.prompt_len = 1;
  t.tokens.assign(actor.size() + 1, 0);
  t.masks.assign(actor.size(), 1.0);
  t.logprobs_actor = std::move(actor);
  t.logprobs_ref = std::move(ref);
  t.env_score = env;
  return t;
}

}  // namespace

TEST_CASE("per-token rewards for three generated tokens") {
  const auto t = generated({-1.0, -1.0, -1.0}, {-1.5, -1.5, -1.5}, 1.0);
  const auto r = per_token_rewards(t, 0.2);
  REQUIRE(r.size() == 3);
  CHECK(r[0] == doctest::Approx(-0.1));
  CHECK(r[1] == doctest::Approx(-0.1));
  CHECK(r[2] == doctest::Approx(0.9));
}

TEST_CASE("prompt positions receive no reward") {
  Trajectory t;
  t.prompt_len = 3;
  t.tokens = {0, 1, 2, 3, 4};
  t.masks = {0, 0, 1, 1};
  t.logprobs_actor = {-5, -5, -1, -1};
  t.logprobs_ref = {0, 0, -2, -2};
  t.env_score = 2.0;
  const auto r = per_token_rewards(t, 0.5);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == doctest::Approx(-0.5));
  CHECK(r[3] == doctest::Approx(1.5));
}

TEST_CASE("shaped return equals env score minus the summed KL penalty") {
  Rng rng(4);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> a, b;
    const std::size_t n = 1 + rng.index(8);
    for (std::size_t j = 0; j < n; ++j) {
      a.push_back(-rng.uniform(0.0, 3.0));
      b.push_back(-rng.uniform(0.0, 3.0));
    }
    auto t = generated(a, b, rng.uniform(-3, 3));
    const double beta = rng.uniform(0.0, 1.0);
    apply_shaped_rewards(t, beta);
    double kl = 0.0;
    for (std::size_t j = 0; j < n; ++j) kl += a[j] - b[j];
    CHECK(shaped_return(t) == doctest::Approx(t.env_score - beta * kl).epsilon(1e-12));
  }
}

TEST_CASE("kl estimate is a signed per-token mean") {
  const std::vector<Trajectory> batch{generated({-1.0, -2.0}, {-2.0, -2.0}, 0.0),
                                      generated({-1.0}, {-2.0}, 0.0)};
  CHECK(kl_estimate(batch) == doctest::Approx(2.0 / 3.0));
  const std::vector<Trajectory> neg{generated({-3.0}, {-1.0}, 0.0)};
  CHECK(kl_estimate(neg) == doctest::Approx(-2.0));
}

TEST_CASE("beta controller steps and clipping") {
  const BetaController c{0.2, 6.0, 0.0128};
  CHECK(beta_update(c, 12.0).beta == doctest::Approx(0.200512).epsilon(1e-12));
  CHECK(beta_update(c, 0.0).beta == doctest::Approx(0.199488).epsilon(1e-12));
  CHECK(beta_update(c, 6.3).beta == doctest::Approx(0.2 * (1 + 0.0128 * 0.05)).epsilon(1e-12));
  CHECK(beta_update(c, 6.0).beta == doctest::Approx(0.2));
}

TEST_CASE("beta stays positive under sustained low KL") {
  BetaController c{0.2, 6.0, 0.0128};
  for (int k = 0; k < 10000; ++k) c = beta_update(c, 0.0);
  CHECK(c.beta > 0.0);
  CHECK(c.beta == doctest::Approx(0.2 * std::pow(1 - 0.0128 * 0.2, 10000)).epsilon(1e-9));
}

TEST_CASE("controller validation") {
  CHECK_THROWS_AS((BetaController{0.0, 6.0, 0.01}).validate(), ContractViolation);
  CHECK_THROWS_AS((BetaController{0.2, 0.0, 0.01}).validate(), ContractViolation);
  CHECK_THROWS_AS((BetaController{0.2, 6.0, 6.0}).validate(), ContractViolation);
  CHECK_NOTHROW((BetaController{}).validate());
}
