#include <doctest.h>

#include <sstream>

#include "rarlhf/config.hpp"
#include "rarlhf/error.hpp"

using namespace rarlhf;

TEST_CASE("defaults carry the reference hyperparameters") {
  const ExperimentConfig c;
  CHECK(c.ppo.batch_size == 128);
  CHECK(c.iterations == 194);
  CHECK(c.alpha == 0.4);
  CHECK(c.warm_start == 30);
  CHECK(c.rho == 0.95);
  CHECK(c.ppo.ppo_epochs == 4);
  CHECK(c.ppo.learning_rate == 1.41e-5);
  CHECK(c.kl.beta == 0.2);
  CHECK(c.kl.kl_target == 6.0);
  CHECK(c.kl.k_beta == 0.0128);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("parse comments, blanks, lists and overrides") {
  std::istringstream in(
      "# comment\n\nschedule.alpha = 0.3   # trailing\nrun.seeds = 1, 2,3\nrun.models = rlhf\n");
  auto entries = parse_config(in);
  CHECK(entries.lines.at("schedule.alpha") == 3);
  apply_override(entries, "ppo.batch_size=16");
  apply_override(entries, "schedule.alpha=0.25");
  const auto c = to_experiment_config(entries);
  CHECK(c.alpha == 0.25);
  CHECK(c.ppo.batch_size == 16);
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(c.models == std::vector<std::string>{"rlhf"});
}

TEST_CASE("malformed lines report their line number") {
  std::istringstream in("ppo.lam = 0.9\nthis line has no equals\n");
  try {
    parse_config(in);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("unknown keys and bad values name the key") {
  std::istringstream a("ppo.lamda = 0.9\n");
  try {
    to_experiment_config(parse_config(a));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "ppo.lamda");
  }
  std::istringstream b("ppo.ppo_epochs = four\n");
  CHECK_THROWS_AS(to_experiment_config(parse_config(b)), ConfigError);
  ConfigEntries e;
  CHECK_THROWS_AS(apply_override(e, "novalue"), ConfigError);
}

TEST_CASE("validation rejects out-of-range fields") {
  ExperimentConfig c;
  c.alpha = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  ExperimentConfig d;
  d.rho = 1.5;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  ExperimentConfig e;
  e.warm_start = 190;
  CHECK_THROWS_AS(e.validate(), ConfigError);
}

TEST_CASE("config text round trip") {
  ExperimentConfig c;
  c.alpha = 0.3;
  c.seeds = {4, 5};
  c.tail_thresholds = {-2.5, -1.0};
  c.select_on = SelectOn::kEnv;
  std::istringstream in(to_config_text(c));
  const auto back = to_experiment_config(parse_config(in));
  CHECK(to_config_text(back) == to_config_text(c));
}

TEST_CASE("trainer config with and without risk aversion") {
  ExperimentConfig c;
  const auto ra = c.trainer_config(7, true);
  REQUIRE(ra.schedule.has_value());
  CHECK(ra.schedule->batch_quota(100) == 94);
  CHECK(ra.seed == 7);
  CHECK_FALSE(c.trainer_config(7, false).schedule.has_value());
}
