#include <doctest.h>

#include <cmath>
#include <limits>

#include "rarlhf/error.hpp"
#include "rarlhf/policy.hpp"
#include "rarlhf/token_mdp.hpp"

using namespace rarlhf;

namespace {

// Puts all probability on one token regardless of the prefix.
class OneHotModel : public SequenceModel {
 public:
  OneHotModel(std::size_t vocab, TokenId tok) : vocab_(vocab), tok_(tok) {}
  std::size_t vocab_size() const override { return vocab_; }
  void log_probs(std::span<const TokenId>, std::span<double> out) const override {
    for (std::size_t a = 0; a < vocab_; ++a)
      out[a] = static_cast<TokenId>(a) == tok_ ? 0.0 : -std::numeric_limits<double>::infinity();
  }

 private:
  std::size_t vocab_;
  TokenId tok_;
};

Trajectory make_traj(std::vector<TokenId> prompt, std::vector<TokenId> gen) {
  Trajectory t;
  t.prompt_len = prompt.size();
  t.tokens = prompt;
  t.tokens.insert(t.tokens.end(), gen.begin(), gen.end());
  for (std::size_t p = 0; p < t.positions(); ++p) t.masks.push_back(p + 1 >= t.prompt_len ? 1.0 : 0.0);
  return t;
}

}  // namespace

TEST_CASE("transition appends the action") {
  const Vocab v(8);
  const EpisodeState s{{3, 7}};
  CHECK(transition(v, s, 1).tokens == std::vector<TokenId>{3, 7, 1});
  CHECK(s.tokens == std::vector<TokenId>{3, 7});
  CHECK(transition(v, EpisodeState{{0}}, 0).tokens == std::vector<TokenId>{0, 0});
  CHECK(transition(v, s, 1).tokens == transition(v, s, 1).tokens);
}

TEST_CASE("transition rejects out-of-vocabulary actions") {
  const Vocab v(8);
  CHECK_THROWS_AS(transition(v, EpisodeState{{5}}, 99), InvalidActionError);
  CHECK_THROWS_AS(transition(v, EpisodeState{{5}}, -1), InvalidActionError);
  CHECK_THROWS_AS(Vocab(1), ContractViolation);
}

TEST_CASE("rollout with a deterministic policy") {
  const OneHotModel model(4, 2);
  Rng rng(1);
  const Prompt prompt{{0}, std::nullopt, -1};
  const auto t = rollout(model, prompt, RolloutOptions{3, std::nullopt}, rng);
  CHECK(t.tokens == std::vector<TokenId>{0, 2, 2, 2});
  CHECK(t.masks == std::vector<double>{1, 1, 1});
  for (double lp : t.logprobs_actor) CHECK(lp == 0.0);
  CHECK(t.generated_len() == 3);
}

TEST_CASE("rollout stops at the end-of-sequence token") {
  const OneHotModel model(4, 2);
  Rng rng(1);
  const auto t = rollout(model, Prompt{{0}, {}, -1}, RolloutOptions{5, TokenId{2}}, rng);
  CHECK(t.tokens == std::vector<TokenId>{0, 2});
  double ones = 0;
  for (double m : t.masks) ones += m;
  CHECK(ones == 1.0);
}

TEST_CASE("uniform policy log-probability and sampled-probability agreement") {
  const PolicyParams uniform(4, 2);
  const PolicyModel model(uniform);
  Rng rng(5);
  const auto t = rollout(model, Prompt{{1, 3}, {}, -1}, RolloutOptions{6, {}}, rng);
  std::vector<double> logp(4);
  for (std::size_t p = 0; p < t.positions(); ++p) {
    if (t.masks[p] == 0.0) continue;
    CHECK(t.logprobs_actor[p] == doctest::Approx(std::log(0.25)).epsilon(1e-12));
    model.log_probs(std::span<const TokenId>(t.tokens).first(p + 1), logp);
    CHECK(std::abs(std::exp(t.logprobs_actor[p]) -
                   std::exp(logp[static_cast<std::size_t>(t.tokens[p + 1])])) <= 1e-12);
  }
}

TEST_CASE("rollout is reproducible and masks count generated tokens") {
  PolicyParams p(6, 2);
  for (std::size_t i = 0; i < p.actor().size(); ++i) p.actor()[i] = std::sin(static_cast<double>(i));
  const PolicyModel model(p);
  Rng a = Rng::stream(9, {1, 2}), b = Rng::stream(9, {1, 2});
  const Prompt prompt{{1, 2, 3}, {}, -1};
  const auto ta = rollout(model, prompt, {7, {}}, a);
  const auto tb = rollout(model, prompt, {7, {}}, b);
  CHECK(ta.tokens == tb.tokens);
  CHECK(ta.logprobs_actor == tb.logprobs_actor);
  double ones = 0;
  for (double m : ta.masks) ones += m;
  CHECK(ones == static_cast<double>(ta.generated_len()));
  for (double lp : ta.logprobs_actor) CHECK(lp <= 0.0);
}

TEST_CASE("rollout preconditions") {
  const PolicyParams p(4, 1);
  const PolicyModel model(p);
  Rng rng(0);
  CHECK_THROWS_AS(rollout(model, Prompt{{0}, {}, -1}, {0, {}}, rng), ContractViolation);
  CHECK_THROWS_AS(rollout(model, Prompt{{9}, {}, -1}, {2, {}}, rng), InvalidActionError);
}

TEST_CASE("pad_batch reproduces the three-episode mask layout") {
  // Prompts of length 3 (first row missing its first prompt token) and
  // generations of length 3 (last row missing its last generated token).
  std::vector<Trajectory> ts{make_traj({11, 12}, {14, 15, 16}), make_traj({21, 22, 23}, {24, 25, 26}),
                             make_traj({31, 32, 33}, {34, 35})};
  const auto b = pad_batch(ts);
  CHECK(b.width == 6);
  CHECK(b.positions() == 5);
  const std::vector<std::vector<double>> expect{{0, 0, 1, 1, 1}, {0, 0, 1, 1, 1}, {0, 0, 1, 1, 0}};
  for (std::size_t r = 0; r < 3; ++r) {
    const auto m = b.row_masks(r);
    CHECK(std::vector<double>(m.begin(), m.end()) == expect[r]);
  }
  CHECK(b.row_tokens(0)[0] == kPadToken);
  CHECK(b.row_tokens(2)[5] == kPadToken);
  CHECK(b.row_tokens(0)[1] == 11);
}

TEST_CASE("pad_batch of one trajectory adds no padding") {
  const std::vector<Trajectory> ts{make_traj({1, 2}, {3, 4})};
  const auto b = pad_batch(ts);
  CHECK(b.tokens == ts[0].tokens);
  CHECK(b.masks == ts[0].masks);
}

TEST_CASE("pad_batch with prompts 2 and 3 and generations 2 and 1") {
  const std::vector<Trajectory> ts{make_traj({1, 2}, {3, 4}), make_traj({5, 6, 7}, {8})};
  const auto b = pad_batch(ts);
  CHECK(b.width == 5);
  CHECK(std::vector<TokenId>(b.row_tokens(0).begin(), b.row_tokens(0).end()) ==
        std::vector<TokenId>{kPadToken, 1, 2, 3, 4});
  CHECK(std::vector<TokenId>(b.row_tokens(1).begin(), b.row_tokens(1).end()) ==
        std::vector<TokenId>{5, 6, 7, 8, kPadToken});
  CHECK(std::vector<double>(b.row_masks(0).begin(), b.row_masks(0).end()) ==
        std::vector<double>{0, 0, 1, 1});
  CHECK(std::vector<double>(b.row_masks(1).begin(), b.row_masks(1).end()) ==
        std::vector<double>{0, 0, 1, 0});
  CHECK_THROWS_AS(pad_batch(std::vector<Trajectory>{}), ContractViolation);
}

TEST_CASE("gather and scatter_row are inverse") {
  std::vector<Trajectory> ts{make_traj({1, 2}, {3, 4}), make_traj({5, 6, 7}, {8})};
  ts[0].values = {0.1, 0.2, 0.3};
  ts[1].values = {0.4, 0.5, 0.6};
  const auto b = pad_batch(ts);
  const auto g = b.gather(ts, &Trajectory::values);
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<double> back(ts[r].values.size());
    b.scatter_row(g, r, back);
    CHECK(back == ts[r].values);
  }
}
