#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "gapo/errors.hpp"
#include "gapo/policy/checkpoint.hpp"
#include "gapo/policy/sft.hpp"
#include "support/fixtures.hpp"

using namespace gapo;
using policy::PolicyModel;
using policy::TokenSeq;

namespace {

// Bigram logit table entry for (previous token, next token).
double& logit(PolicyModel& m, int prev, int next) {
  return m.params().segment_values("lm_head")[static_cast<std::size_t>(prev * m.vocab() + next)];
}

TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<PolicyModel> sample_models(std::uint64_t seed) {
  std::vector<PolicyModel> out;
  out.push_back(testing::tiny_bigram(seed));
  out.push_back(testing::tiny_mlp(seed));
  auto big = PolicyModel::mlp_lm(16, 12, 8, 16, seed);
  util::Rng rng(seed + 17);
  testing::randomize(big, rng, 0.5);
  out.push_back(std::move(big));
  return out;
}

}  // namespace

TEST_CASE("uniform models score every token at log(1/V)") {
  auto bigram = PolicyModel::tabular_bigram(4);
  auto mlp = PolicyModel::mlp_lm(4, 3, 2, 3, 7);
  for (const auto* m : {&bigram, &mlp}) {
    CHECK(m->log_prob({1, 2}, {0, 3, 1}) == doctest::Approx(3.0 * std::log(0.25)).epsilon(1e-14));
    CHECK(m->log_prob({1, 2}, {0, 3, 1}) == doctest::Approx(-4.1588830833596715).epsilon(1e-14));
    CHECK(m->p_reward({}, {2}) == doctest::Approx(-1.3862943611198906).epsilon(1e-14));
    CHECK(m->p_reward({0}, {2, 2, 1, 0, 3}) == doctest::Approx(-1.3862943611198906).epsilon(1e-14));
  }
}

TEST_CASE("a near-deterministic bigram gives log_prob just below zero") {
  auto m = PolicyModel::tabular_bigram(4);
  logit(m, 0, 1) = 20.0;
  logit(m, 1, 2) = 20.0;
  const double lp = m.log_prob({0}, {1, 2});
  CHECK(lp < 0.0);
  CHECK(lp > -1e-7);
}

TEST_CASE("hand-set bigram logits match manual softmax arithmetic") {
  auto m = PolicyModel::tabular_bigram(3);
  // Row 2: logits (1, 0, -1); row 0: logits (0.5, 2, 0).
  logit(m, 2, 0) = 1.0;
  logit(m, 2, 2) = -1.0;
  logit(m, 0, 0) = 0.5;
  logit(m, 0, 1) = 2.0;
  const double z2 = std::exp(1.0) + 1.0 + std::exp(-1.0);
  const double z0 = std::exp(0.5) + std::exp(2.0) + 1.0;
  const double expected = (1.0 - std::log(z2)) + (2.0 - std::log(z0));
  CHECK(m.log_prob({2}, {0, 1}) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(m.p_reward({2}, {0, 1}) == doctest::Approx(expected / 2.0).epsilon(1e-14));
}

TEST_CASE("bigram scores the first token of an empty prompt uniformly") {
  auto m = testing::tiny_bigram(3);
  const double first = m.log_prob({}, {4});
  CHECK(first == doctest::Approx(-std::log(6.0)).epsilon(1e-14));
  CHECK(m.log_prob({}, {4, 1}) == doctest::Approx(first + m.log_prob({4}, {1})).epsilon(1e-12));
}

TEST_CASE("p_reward properties") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    util::Rng rng(seed);
    for (auto& m : sample_models(seed)) {
      for (int trial = 0; trial < 20; ++trial) {
        const auto x = testing::random_tokens(rng, m.vocab(), 0, 4);
        const auto y = testing::random_tokens(rng, m.vocab(), 1, 8);
        CHECK(m.p_reward(x, y) <= 0.0);
        CHECK(m.p_reward(x, y) == doctest::Approx(m.log_prob(x, y) / static_cast<double>(y.size())));
        const TokenSeq one{y.front()};
        CHECK(m.p_reward(x, one) == m.log_prob(x, one));
      }
    }
  }
}

TEST_CASE("p_reward is unchanged by duplicating y under a context-free model") {
  auto m = PolicyModel::tabular_bigram(5);
  const std::vector<double> row{0.3, -1.2, 0.8, 0.0, 2.1};
  for (int prev = 0; prev < 5; ++prev) {
    for (int next = 0; next < 5; ++next) logit(m, prev, next) = row[static_cast<std::size_t>(next)];
  }
  const TokenSeq x{1}, y{4, 0, 2};
  CHECK(m.p_reward(x, concat(y, y)) == doctest::Approx(m.p_reward(x, y)).epsilon(1e-14));
}

TEST_CASE("invalid tokens and empty responses are rejected") {
  for (auto& m : sample_models(1)) {
    const int V = m.vocab();
    CHECK_THROWS_AS(m.log_prob({0}, {}), InputError);
    CHECK_THROWS_AS(m.log_prob({0}, {V}), InputError);
    CHECK_THROWS_AS(m.log_prob({V}, {0}), InputError);
    CHECK_THROWS_AS(m.log_prob({0}, {-1}), InputError);
    CHECK_THROWS_AS(m.p_reward({}, {}), InputError);
  }
}

TEST_CASE("next-token probabilities are normalized for 100 random prefixes") {
  for (auto& m : sample_models(2)) {
    util::Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      const auto prefix = testing::random_tokens(rng, m.vocab(), 0, 15);
      const auto p = m.next_token_probs(prefix);
      REQUIRE(p.size() == static_cast<std::size_t>(m.vocab()));
      for (double v : p) CHECK(v >= 0.0);
      const double s = std::accumulate(p.begin(), p.end(), 0.0);
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("next_token_probs agrees with log_prob") {
  for (auto& m : sample_models(3)) {
    util::Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = testing::random_tokens(rng, m.vocab(), 0, 5);
      const auto y = testing::random_tokens(rng, m.vocab(), 1, 1);
      CHECK(std::log(m.next_token_probs(x)[static_cast<std::size_t>(y[0])]) ==
            doctest::Approx(m.log_prob(x, y)).epsilon(1e-12));
    }
  }
}

TEST_CASE("log_prob is additive over response splits") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    util::Rng rng(100 + seed);
    for (auto& m : sample_models(seed)) {
      for (int trial = 0; trial < 20; ++trial) {
        const auto x = testing::random_tokens(rng, m.vocab(), 0, 4);
        const auto y1 = testing::random_tokens(rng, m.vocab(), 1, 6);
        const auto y2 = testing::random_tokens(rng, m.vocab(), 1, 6);
        const double whole = m.log_prob(x, concat(y1, y2));
        const double parts = m.log_prob(x, y1) + m.log_prob(concat(x, y1), y2);
        CHECK(std::abs(whole - parts) <= 1e-10);
      }
    }
  }
}

TEST_CASE("batched p_rewards equal one-at-a-time evaluation") {
  for (auto& m : sample_models(4)) {
    util::Rng rng(9);
    std::vector<TokenSeq> xs, ys;
    for (int i = 0; i < 12; ++i) {
      xs.push_back(testing::random_tokens(rng, m.vocab(), 0, 4));
      ys.push_back(testing::random_tokens(rng, m.vocab(), 1, 7));
    }
    std::vector<policy::SeqRef> refs;
    for (int i = 0; i < 12; ++i) refs.push_back({&xs[i], &ys[i]});
    const auto batched = m.p_rewards(refs);
    for (int i = 0; i < 12; ++i) CHECK(batched[i] == doctest::Approx(m.p_reward(xs[i], ys[i])).epsilon(1e-13));
  }
}

TEST_CASE("mlp-lm starts uniform and exposes the expected segments") {
  auto m = PolicyModel::mlp_lm(16, 12, 8, 16, 3);
  const auto& layout = m.params().layout();
  REQUIRE(layout.size() == 3);
  CHECK(layout[0].name == "embed");
  CHECK(layout[0].length == 17u * 8u);
  CHECK(layout[1].name == "hidden");
  CHECK(layout[1].length == 12u * 8u * 16u + 16u);
  CHECK(layout[2].name == "lm_head");
  CHECK(layout[2].length == 16u * 16u + 16u);
  for (double p : m.next_token_probs({3, 1, 4})) CHECK(p == doctest::Approx(1.0 / 16.0).epsilon(1e-15));
  CHECK(PolicyModel::tabular_bigram(7).params().has_segment("lm_head"));
}

TEST_CASE("mlp-lm only sees the last window tokens") {
  auto m = testing::tiny_mlp(8);  // window 3
  const TokenSeq y{2, 1};
  CHECK(m.log_prob({0, 3, 1, 2, 0}, y) == m.log_prob({1, 2, 0}, y));
  CHECK(m.log_prob({0, 3, 1, 2, 0}, y) != doctest::Approx(m.log_prob({3, 2, 0}, y)));
}

TEST_CASE("SFT on a single repeated example decreases NLL monotonically at first") {
  auto m = PolicyModel::mlp_lm(8, 4, 4, 8, 5);
  std::vector<policy::SftExample> corpus(4, policy::SftExample{{1, 2}, {3, 5, 7}});
  policy::SftConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 4;
  const auto r = policy::sft_train(m, corpus, cfg);
  REQUIRE(r.step_nll.size() >= 11);
  for (std::size_t i = 1; i <= 10; ++i) CHECK(r.step_nll[i] < r.step_nll[i - 1]);
  CHECK(r.final_nll < r.initial_nll);
}

TEST_CASE("SFT with lr 0 leaves parameters unchanged") {
  auto m = testing::tiny_mlp(6);
  const auto before = m.params();
  std::vector<policy::SftExample> corpus{{{0}, {1, 2}}, {{}, {3}}};
  for (auto kind : {trainer::OptimizerKind::Adam, trainer::OptimizerKind::Sgd}) {
    policy::SftConfig cfg;
    cfg.optimizer.kind = kind;
    cfg.optimizer.lr = 0.0;
    const auto r = policy::sft_train(m, corpus, cfg);
    CHECK(m.params().bit_identical(before));
    CHECK(r.final_nll == r.initial_nll);
  }
}

TEST_CASE("SFT lowers NLL on a 200-pair corpus in at least 19 of 20 seeds") {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    util::Rng rng(seed);
    std::vector<policy::SftExample> corpus;
    for (int i = 0; i < 200; ++i) {
      corpus.push_back({testing::random_tokens(rng, 16, 2, 6), testing::random_tokens(rng, 16, 3, 12)});
      // Make the corpus learnable: responses lean on tokens 0..3.
      for (auto& t : corpus.back().response) {
        if (rng.bernoulli(0.6)) t = static_cast<policy::Token>(rng.index(4));
      }
    }
    auto m = PolicyModel::mlp_lm(16, 12, 8, 16, seed);
    policy::SftConfig cfg;
    cfg.epochs = 5;
    cfg.seed = seed;
    const auto r = policy::sft_train(m, corpus, cfg);
    if (r.final_nll < r.initial_nll) ++improved;
  }
  CHECK(improved >= 19);
}

TEST_CASE("SFT divergence names the offending step") {
  auto m = testing::tiny_mlp(2);
  std::vector<policy::SftExample> corpus{{{0}, {1, 2, 3}}, {{1}, {0, 0}}};
  policy::SftConfig cfg;
  cfg.optimizer.kind = trainer::OptimizerKind::Sgd;
  cfg.optimizer.lr = 1e308;
  cfg.epochs = 50;
  try {
    policy::sft_train(m, corpus, cfg);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(e.where().rfind("sft step ", 0) == 0);
  }
  CHECK_THROWS_AS(policy::sft_train(m, {}, cfg), InputError);
}

TEST_CASE("freeze_reference is a deep copy") {
  auto m = testing::tiny_mlp(1);
  const auto ref = policy::freeze_reference(m);
  const auto snapshot = ref.model().params();
  util::Rng rng(3);
  const auto batch = testing::random_batch(rng, 4, 8);
  for (const auto& p : batch) CHECK(ref.model().log_prob(p.x, p.y_w) == m.log_prob(p.x, p.y_w));

  std::vector<policy::SftExample> corpus;
  for (const auto& p : batch) corpus.push_back({p.x, p.y_w});
  policy::SftConfig cfg;
  cfg.epochs = 100;
  cfg.batch_size = 8;
  policy::sft_train(m, corpus, cfg);  // 100 steps
  CHECK(ref.model().params().bit_identical(snapshot));
  CHECK_FALSE(m.params().bit_identical(snapshot));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  for (auto& m : sample_models(12)) {
    std::stringstream ss;
    policy::write_checkpoint(m, ss);
    const auto back = policy::read_checkpoint(ss);
    CHECK(back.shape() == m.shape());
    CHECK(back.params().bit_identical(m.params()));
    CHECK(policy::checkpoint_hash(back) == policy::checkpoint_hash(m));
  }
  auto a = testing::tiny_mlp(1), b = testing::tiny_mlp(1);
  b.params().values()[5] = std::nextafter(b.params().values()[5], 10.0);
  CHECK(policy::checkpoint_hash(a) != policy::checkpoint_hash(b));
}

TEST_CASE("malformed checkpoints report the failing line") {
  auto m = testing::tiny_bigram(0);
  std::stringstream ss;
  policy::write_checkpoint(m, ss);
  std::vector<std::string> lines;
  for (std::string l; std::getline(ss, l);) lines.push_back(l);

  auto corrupt = [&](std::size_t idx, const std::string& replacement) -> std::size_t {
    std::stringstream bad;
    for (std::size_t i = 0; i < lines.size(); ++i) bad << (i == idx ? replacement : lines[i]) << '\n';
    try {
      policy::read_checkpoint(bad);
    } catch (const FormatError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(corrupt(0, "not-a-checkpoint") == 1);
  CHECK(corrupt(lines.size() - 3, "0.5x") == lines.size() - 2);

  std::stringstream truncated;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) truncated << lines[i] << '\n';
  CHECK_THROWS_AS(policy::read_checkpoint(truncated), FormatError);
}
