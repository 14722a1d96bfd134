#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "gapo/analysis/spectrum.hpp"
#include "gapo/analysis/valuation.hpp"
#include "gapo/errors.hpp"
#include "gapo/policy/checkpoint.hpp"
#include "support/fixtures.hpp"

using namespace gapo;
using namespace gapo::analysis;
using testing::flat;
using testing::quadratic;

namespace {

// Eigenvalues of a row-major symmetric matrix, descending, straight from Eigen.
std::vector<double> oracle_eigs(const std::vector<double>& a, std::size_t n) {
  Eigen::MatrixXd m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      a.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  std::vector<double> out(es.eigenvalues().data(), es.eigenvalues().data() + n);
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

bool close_rel(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b)); }

std::vector<double> random_theta(util::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

diff::Objective half_squared_norm() {
  return [](diff::Tape&, diff::Var t) { return diff::scale(diff::sum(diff::mul(t, t)), 0.5); };
}

data::PreferenceDataset small_dataset(std::uint64_t seed, std::size_t n) {
  data::CorpusConfig c;
  c.vocab = 4;
  c.semantic = {0};
  c.n_pairs = n;
  c.test_fraction = 0.2;
  c.response_max = 5;
  c.prompt_max = 3;
  c.seed = seed;
  return data::generate_corpus(c);
}

}  // namespace

TEST_CASE("lanczos on the identity Hessian") {
  util::Rng rng(1);
  auto theta = diff::ParamVector(random_theta(rng, 12), {{"a", 0, 5}, {"lm_head", 5, 7}});
  for (const auto& scope : {diff::ScopeMask{}, diff::ScopeMask::only("lm_head")}) {
    const auto r = lanczos_spectrum(half_squared_norm(), theta, scope, 4, 3);
    CHECK(r.breakdown);  // the Krylov space is one-dimensional
    REQUIRE_FALSE(r.ritz_values.empty());
    for (double v : r.ritz_values) CHECK(std::abs(v - 1.0) <= 1e-8);
    CHECK(r.ritz_values.size() <= static_cast<std::size_t>(r.iterations));
    CHECK(r.hvp_mode == "central-difference-of-gradients");
  }
  for (double v : dense_hessian_eigs(half_squared_norm(), theta, {})) CHECK(std::abs(v - 1.0) <= 1e-8);
}

TEST_CASE("full lanczos on a dim-50 quadratic recovers the dense spectrum") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    util::Rng rng(seed);
    const std::size_t n = 50;
    const auto a = testing::random_symmetric(rng, n);
    const auto theta = flat(random_theta(rng, n));
    const auto r = lanczos_spectrum(quadratic(a, n), theta, {}, 50, seed);
    const auto ref = oracle_eigs(a, n);
    REQUIRE(r.ritz_values.size() == n);
    for (std::size_t i = 0; i < n; ++i) CHECK(close_rel(r.ritz_values[i], ref[i], 1e-6));
    CHECK(std::is_sorted(r.ritz_values.rbegin(), r.ritz_values.rend()));
  }
}

TEST_CASE("one lanczos step gives the Rayleigh quotient of the start vector") {
  util::Rng rng(2);
  const std::size_t n = 20;
  const auto a = testing::random_symmetric(rng, n);
  const auto theta = flat(random_theta(rng, n));
  const auto r = lanczos_spectrum(quadratic(a, n), theta, {}, 1, 42);
  util::Rng start(42);
  std::vector<double> v(n), av(n, 0.0);
  for (auto& x : v) x = start.normal();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) av[i] += a[i * n + j] * v[j];
  }
  REQUIRE(r.ritz_values.size() == 1);
  CHECK(close_rel(r.ritz_values[0], diff::dot(v, av) / diff::dot(v, v), 1e-8));
}

TEST_CASE("ritz values lie inside the dense spectrum") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    util::Rng rng(100 + seed);
    const std::size_t n = 30;
    const auto a = testing::random_symmetric(rng, n);
    const auto theta = flat(random_theta(rng, n));
    const auto ref = oracle_eigs(a, n);
    const auto r = lanczos_spectrum(quadratic(a, n), theta, {}, 8, seed);
    for (double v : r.ritz_values) {
      CHECK(v <= ref.front() + 1e-6);
      CHECK(v >= ref.back() - 1e-6);
    }
  }
}

TEST_CASE("dense Hessian eigenvalues") {
  const std::vector<double> diag{3, 0, 0, 0, 1, 0, 0, 0, -2};
  const auto eigs = dense_hessian_eigs(quadratic(diag, 3), flat({0.3, -1.0, 2.0}), {});
  REQUIRE(eigs.size() == 3);
  CHECK(eigs[0] == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(eigs[1] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(eigs[2] == doctest::Approx(-2.0).epsilon(1e-8));
  CHECK_THROWS_AS(dense_hessian_eigs(half_squared_norm(), flat(std::vector<double>(10, 1.0)), {}, 9), InputError);
  const auto two = symmetric_eigenvalues({2, 1, 1, 2}, 2);
  CHECK(two[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(two[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(symmetric_eigenvalues({1, 2, 3}, 2), InputError);
}

TEST_CASE("lanczos extremes match the dense oracle on a bigram gapo loss") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto m = testing::tiny_bigram(seed);
    util::Rng rng(seed);
    const auto batch = testing::random_batch(rng, 6, 8);
    objectives::GapoConfig cfg;
    const auto rec = objectives::anchor_records(m, batch, cfg);
    std::vector<double> anchors;
    for (const auto& r : rec) anchors.push_back(r.anchor_margin);
    const auto f = objectives::gapo_objective(m, batch, anchors, cfg.beta, cfg.gamma);
    const auto scope = diff::ScopeMask::only("lm_head");
    const auto dense = dense_hessian_eigs(f, m.params(), scope);
    const auto r = lanczos_spectrum(f, m.params(), scope, 36, seed);
    CHECK(close_rel(r.ritz_values.front(), dense.front(), 1e-6));
    CHECK(close_rel(r.ritz_values.back(), dense.back(), 1e-6));
  }
}

TEST_CASE("lanczos argument checks") {
  const auto theta = flat({1.0, 2.0, 3.0});
  CHECK_THROWS_AS(lanczos_spectrum(half_squared_norm(), theta, {}, 0, 1), InputError);
  CHECK_THROWS_AS(lanczos_spectrum(half_squared_norm(), theta, {}, 4, 1), InputError);
  CHECK_THROWS_AS(lanczos_spectrum(half_squared_norm(), theta, diff::ScopeMask::only("nope"), 1, 1), InputError);
}

TEST_CASE("spectrum csv") {
  SpectrumReport r;
  r.ritz_values = {2.5, -0.5};
  r.scope = diff::ScopeMask::only("lm_head");
  r.iterations = 2;
  r.objective = "gapo";
  r.checkpoint = "abc";
  std::ostringstream out;
  write_spectrum_csv(out, r);
  CHECK(out.str() ==
        "objective,checkpoint,scope,iterations,breakdown,index,ritz_value\n"
        "gapo,abc,lm_head,2,0,0,2.5\n"
        "gapo,abc,lm_head,2,0,1,-0.5\n");
}

TEST_CASE("valuation at rho 0 gives zero gaps ranked by position") {
  const auto ds = small_dataset(1, 60);
  const auto m = testing::tiny_mlp(1);
  ValuationConfig cfg;
  cfg.gapo.rho = 0.0;
  const auto rec = valuate_dataset(m, ds, cfg);
  REQUIRE(rec.size() == ds.train.size());
  for (std::size_t i = 0; i < rec.size(); ++i) {
    CHECK(rec[i].pair_id == ds.train[i].pair_id);
    CHECK(rec[i].mean_gap == 0.0);
    CHECK(rec[i].rank == i);
  }
}

TEST_CASE("valuation averages anchor gaps over reshuffled batchings") {
  const auto ds = small_dataset(2, 50);
  const auto m = testing::tiny_mlp(2);
  ValuationConfig cfg;
  cfg.passes = 3;
  cfg.batch_size = 7;
  cfg.seed = 11;
  const auto before = policy::checkpoint_hash(m);
  const auto rec = valuate_dataset(m, ds, cfg);
  CHECK(policy::checkpoint_hash(m) == before);

  const std::size_t n = ds.train.size();
  std::vector<double> sum(n, 0.0);
  auto copy = m;
  for (int pass = 0; pass < 3; ++pass) {
    util::Rng rng(util::derive_seed(11, static_cast<std::uint64_t>(pass)));
    const auto order = util::shuffled_indices(n, rng);
    for (std::size_t s = 0; s < n; s += 7) {
      std::vector<objectives::PreferencePair> batch;
      for (std::size_t k = s; k < std::min(n, s + 7); ++k) batch.push_back(ds.train[order[k]]);
      const auto r = objectives::anchor_records(copy, batch, cfg.gapo);
      for (std::size_t k = s; k < std::min(n, s + 7); ++k) sum[order[k]] += r[k - s].gap;
    }
  }
  for (std::size_t i = 0; i < n; ++i) CHECK(rec[i].mean_gap == doctest::Approx(sum[i] / 3.0).epsilon(1e-15));

  std::vector<std::size_t> ranks;
  for (const auto& r : rec) ranks.push_back(r.rank);
  std::sort(ranks.begin(), ranks.end());
  for (std::size_t i = 0; i < n; ++i) CHECK(ranks[i] == i);
  for (const auto& a : rec) {
    for (const auto& b : rec) {
      if (a.mean_gap < b.mean_gap) CHECK(a.rank < b.rank);
    }
  }
  CHECK(valuate_dataset(m, ds, cfg) == rec);
}

TEST_CASE("valuation config errors") {
  const auto ds = small_dataset(3, 20);
  const auto m = testing::tiny_mlp(3);
  ValuationConfig cfg;
  cfg.passes = 0;
  CHECK_THROWS_AS(valuate_dataset(m, ds, cfg), ConfigError);
  CHECK_THROWS_AS(valuate_dataset(m, data::PreferenceDataset{}, ValuationConfig{}), InputError);
}

TEST_CASE("subset selection") {
  const auto ds = small_dataset(4, 100);
  const auto m = testing::tiny_mlp(4);
  const auto rec = valuate_dataset(m, ds, ValuationConfig{});
  const std::size_t n = ds.train.size();

  for (auto mode : {SubsetMode::Stable, SubsetMode::Unstable, SubsetMode::Random}) {
    const auto all = select_subset(rec, ds, 1.0, mode, 3);
    CHECK(all.train == ds.train);
    CHECK(all.test == ds.test);
  }

  auto gap_of = [&](std::int64_t id) {
    for (const auto& r : rec) {
      if (r.pair_id == id) return r.mean_gap;
    }
    return 0.0;
  };
  auto mean_gap = [&](const data::PreferenceDataset& sub) {
    double s = 0;
    for (const auto& p : sub.train) s += gap_of(p.pair_id);
    return s / static_cast<double>(sub.train.size());
  };
  auto ids = [](const data::PreferenceDataset& sub) {
    std::set<std::int64_t> out;
    for (const auto& p : sub.train) out.insert(p.pair_id);
    return out;
  };

  for (double f : {0.1, 0.3, 0.5}) {
    const auto stable = select_subset(rec, ds, f, SubsetMode::Stable, 0);
    const auto unstable = select_subset(rec, ds, f, SubsetMode::Unstable, 0);
    const auto random = select_subset(rec, ds, f, SubsetMode::Random, 7);
    const auto k = static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
    CHECK(stable.train.size() == k);
    CHECK(unstable.train.size() == k);
    CHECK(random.train.size() == k);
    CHECK(stable.test == ds.test);

    std::set<std::int64_t> both;
    const auto s_ids = ids(stable), u_ids = ids(unstable);
    std::set_intersection(s_ids.begin(), s_ids.end(), u_ids.begin(), u_ids.end(), std::inserter(both, both.end()));
    CHECK(both.empty());

    CHECK(mean_gap(stable) <= mean_gap(random));
    CHECK(mean_gap(random) <= mean_gap(unstable));
    for (const auto& p : stable.train) {
      for (const auto& q : ds.train) {
        if (!s_ids.count(q.pair_id)) CHECK(gap_of(p.pair_id) <= gap_of(q.pair_id));
      }
    }
    CHECK(select_subset(rec, ds, f, SubsetMode::Random, 7).train == random.train);

    // Selected pairs keep train order.
    std::vector<std::int64_t> order;
    for (const auto& p : random.train) order.push_back(p.pair_id);
    CHECK(std::is_sorted(order.begin(), order.end()));
  }
  CHECK_THROWS(select_subset(rec, ds, 0.0, SubsetMode::Stable, 0));
  CHECK_THROWS(select_subset(rec, ds, 1.5, SubsetMode::Stable, 0));
  CHECK(parse_subset_mode(to_string(SubsetMode::Unstable)) == SubsetMode::Unstable);
  CHECK_THROWS_AS(parse_subset_mode("best"), ConfigError);
}

TEST_CASE("valuation csv round trip") {
  const std::vector<ValuationRecord> rec{{5, 0.125, 1}, {2, -0.30000000000000004, 0}};
  std::stringstream ss;
  write_valuation_csv(ss, rec);
  CHECK(ss.str() == "pair_id,mean_gap,rank\n5,0.125,1\n2,-0.30000000000000004,0\n");
  CHECK(read_valuation_csv(ss) == rec);

  std::stringstream bad("pair_id,mean_gap,rank\n5,0.125,1\n2,oops,0\n");
  try {
    read_valuation_csv(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.line() == 3);
  }
}
