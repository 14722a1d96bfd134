#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "gapo/data/dataset.hpp"
#include "gapo/errors.hpp"
#include "gapo/policy/checkpoint.hpp"
#include "gapo/trainer/trainer.hpp"
#include "support/fixtures.hpp"

using namespace gapo;
using namespace gapo::trainer;
using policy::PolicyModel;

namespace {

std::vector<double> delta(const diff::ParamVector& after, const diff::ParamVector& before) {
  std::vector<double> d(after.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = after.values()[i] - before.values()[i];
  return d;
}

OptimizerConfig sgd(double lr) {
  OptimizerConfig c;
  c.kind = OptimizerKind::Sgd;
  c.lr = lr;
  return c;
}

bool same_metrics(const StepMetrics& a, const StepMetrics& b) {
  return a.step == b.step && a.loss == b.loss && a.mean_margin == b.mean_margin && a.mean_gap == b.mean_gap &&
         a.mean_weight == b.mean_weight && a.grad_norm == b.grad_norm;
}

}  // namespace

TEST_CASE("sgd and adam updates follow their textbook formulas") {
  auto params = diff::ParamVector::zeros({{"a", 3}});
  params.assign(std::vector<double>{1.0, -2.0, 0.5});
  const diff::Gradient g{{0.5, -1.0, 0.0}, params.layout()};

  auto p1 = params;
  Optimizer s(sgd(0.1));
  s.step(p1, g);
  CHECK(p1.values()[0] == doctest::Approx(0.95));
  CHECK(p1.values()[1] == doctest::Approx(-1.9));
  CHECK(p1.values()[2] == 0.5);

  auto p2 = params;
  Optimizer a;  // adam, lr 5e-3
  a.step(p2, g);
  // First Adam step moves every coordinate with a non-zero gradient by lr * sign(g).
  CHECK(p2.values()[0] == doctest::Approx(1.0 - 5e-3).epsilon(1e-9));
  CHECK(p2.values()[1] == doctest::Approx(-2.0 + 5e-3).epsilon(1e-9));
  CHECK(p2.values()[2] == 0.5);
  CHECK(a.steps() == 1);
  REQUIRE(a.first_moment().size() == 3);
  CHECK(a.first_moment()[0] == doctest::Approx(0.05));
  CHECK(a.second_moment()[1] == doctest::Approx(0.001));
}

TEST_CASE("lr 0 leaves parameters unchanged while metrics are reported") {
  util::Rng rng(1);
  auto m = testing::tiny_mlp(1);
  const auto batch = testing::random_batch(rng, 4, 6);
  const auto ref = policy::freeze_reference(testing::tiny_mlp(2));
  const auto before = m.params();
  for (auto kind : {ObjectiveKind::Gapo, ObjectiveKind::Dpo, ObjectiveKind::Simpo, ObjectiveKind::SimpoSam}) {
    for (auto okind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
      OptimizerConfig oc;
      oc.kind = okind;
      oc.lr = 0.0;
      Optimizer opt(oc);
      StepContext ctx;
      ctx.reference = &ref;
      const auto metrics = train_step(m, batch, kind, ctx, opt);
      CHECK(m.params().bit_identical(before));
      CHECK(std::isfinite(metrics.loss));
      CHECK(metrics.grad_norm > 0.0);
    }
  }
}

// SimPO weights β σ(γ − β M_i) are uniform only when all margins agree, as
// they do for the uniform initial policies used here.
TEST_CASE("gapo at rho 0 and simpo give parallel sgd updates from a uniform policy") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    util::Rng rng(seed);
    auto base = seed % 2 ? PolicyModel::mlp_lm(6, 3, 3, 4, seed) : PolicyModel::tabular_bigram(6);
    const auto batch = testing::random_batch(rng, base.vocab(), 8);
    StepContext ctx;
    ctx.cfg.rho = 0.0;
    auto a = base, b = base;
    Optimizer oa(sgd(0.01)), ob(sgd(0.01));
    train_step(a, batch, ObjectiveKind::Gapo, ctx, oa);
    train_step(b, batch, ObjectiveKind::Simpo, ctx, ob);
    const double c = testing::cosine(delta(a.params(), base.params()), delta(b.params(), base.params()));
    CHECK(std::abs(c - 1.0) <= 1e-6);
  }
}

TEST_CASE("identical state gives bit-identical steps") {
  util::Rng rng(3);
  const auto base = testing::tiny_mlp(3);
  const auto batch = testing::random_batch(rng, 4, 8);
  for (auto kind : {ObjectiveKind::Gapo, ObjectiveKind::Simpo, ObjectiveKind::SimpoSam}) {
    auto a = base, b = base;
    Optimizer oa, ob;
    StepContext ctx;
    for (int i = 0; i < 3; ++i) {
      train_step(a, batch, kind, ctx, oa);
      train_step(b, batch, kind, ctx, ob);
    }
    CHECK(a.params().bit_identical(b.params()));
  }
}

TEST_CASE("sam at rho 0 reproduces the plain simpo step") {
  util::Rng rng(4);
  const auto base = testing::tiny_mlp(4);
  const auto batch = testing::random_batch(rng, 4, 8);
  auto a = base, b = base;
  Optimizer oa, ob;
  StepContext ctx;
  for (int i = 0; i < 5; ++i) {
    sam_step(a, batch, 0.0, ctx, oa);
    train_step(b, batch, ObjectiveKind::Simpo, ctx, ob);
  }
  CHECK(a.params().bit_identical(b.params()));
}

TEST_CASE("sam takes its gradient at the ascended point") {
  util::Rng rng(5);
  auto m = testing::tiny_mlp(5);
  const auto batch = testing::random_batch(rng, 4, 8);
  StepContext ctx;
  ctx.cfg.rho = 0.05;
  const auto g_sam = step_gradient(m, batch, ObjectiveKind::SimpoSam, ctx);

  const auto f = objectives::simpo_objective(m, batch, ctx.cfg.beta, ctx.cfg.gamma);
  const auto g0 = diff::grad(f, m.params());
  const double norm = diff::l2_norm(g0.values);
  std::vector<double> ascended(m.params().values().begin(), m.params().values().end());
  std::vector<double> eps(ascended.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    eps[i] = 0.05 * g0.values[i] / norm;
    ascended[i] += eps[i];
  }
  CHECK(diff::l2_norm(eps) == doctest::Approx(0.05).epsilon(1e-12));
  const auto oracle = diff::grad_values(f, ascended);
  CHECK(diff::max_rel_error(g_sam.values, oracle) == 0.0);
}

TEST_CASE("parameters are restored before every optimizer update") {
  util::Rng rng(6);
  auto m = testing::tiny_mlp(6);
  const auto batch = testing::random_batch(rng, 4, 8);
  Optimizer opt;
  StepContext ctx;
  int observed = 0;
  ctx.observer = [&](const diff::ParamVector& saved, const diff::ParamVector& current) {
    CHECK(saved.bit_identical(current));
    ++observed;
  };
  for (auto kind : {ObjectiveKind::Gapo, ObjectiveKind::SimpoSam}) {
    for (auto strategy : {objectives::Strategy::Batch, objectives::Strategy::Instance}) {
      ctx.cfg.strategy = strategy;
      train_step(m, batch, kind, ctx, opt);
    }
  }
  CHECK(observed == 4);
}

TEST_CASE("sgd step size is bounded by lr times the reported gradient norm") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    util::Rng rng(seed);
    auto m = testing::tiny_mlp(seed);
    const auto batch = testing::random_batch(rng, 4, 6);
    Optimizer opt(sgd(0.03));
    StepContext ctx;
    for (auto kind : {ObjectiveKind::Gapo, ObjectiveKind::Simpo, ObjectiveKind::SimpoSam}) {
      const auto before = m.params();
      const auto metrics = train_step(m, batch, kind, ctx, opt);
      CHECK(diff::l2_norm(delta(m.params(), before)) <= 0.03 * metrics.grad_norm * (1 + 1e-6));
    }
  }
}

TEST_CASE("gapo step metrics summarize the anchor records") {
  util::Rng rng(7);
  auto m = testing::tiny_mlp(7);
  const auto batch = testing::random_batch(rng, 4, 5);
  StepContext ctx;
  auto copy = m;
  const auto rec = objectives::anchor_records(copy, batch, ctx.cfg);
  double mg = 0, gp = 0, w = 0;
  for (const auto& r : rec) {
    mg += r.margin / 5.0;
    gp += r.gap / 5.0;
    w += r.weight / 5.0;
  }
  Optimizer opt;
  const auto metrics = train_step(m, batch, ObjectiveKind::Gapo, ctx, opt);
  CHECK(metrics.mean_margin == doctest::Approx(mg).epsilon(1e-14));
  CHECK(metrics.mean_gap == doctest::Approx(gp).epsilon(1e-12));
  CHECK(metrics.mean_weight == doctest::Approx(w).epsilon(1e-14));
}

TEST_CASE("dpo requires a reference") {
  util::Rng rng(8);
  auto m = testing::tiny_mlp(8);
  const auto batch = testing::random_batch(rng, 4, 4);
  Optimizer opt;
  CHECK_THROWS_AS(train_step(m, batch, ObjectiveKind::Dpo, StepContext{}, opt), ConfigError);
  TrainSettings s;
  s.objective = ObjectiveKind::Dpo;
  CHECK_THROWS_AS(train_run(m, batch, s, nullptr), ConfigError);
}

TEST_CASE("non-finite training aborts with the step index") {
  util::Rng rng(9);
  auto m = testing::tiny_mlp(9);
  const auto batch = testing::random_batch(rng, 4, 4);
  TrainSettings s;
  s.objective = ObjectiveKind::Simpo;
  s.optimizer = sgd(1e306);
  s.epochs = 200;
  s.batch_size = 2;
  try {
    train_run(m, batch, s, nullptr);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(e.where().rfind("step ", 0) == 0);
  }
}

TEST_CASE("zero epochs leave the model unchanged with an empty log") {
  util::Rng rng(10);
  auto m = testing::tiny_mlp(10);
  const auto before = m.params();
  const auto data = testing::random_batch(rng, 4, 20);
  TrainSettings s;
  s.epochs = 0;
  int rows = 0;
  const auto summary = train_run(m, data, s, nullptr, [&](const StepMetrics&) { ++rows; });
  CHECK(rows == 0);
  CHECK(summary.steps == 0);
  CHECK(m.params().bit_identical(before));
}

TEST_CASE("train_run batches, reshuffles and is reproducible") {
  util::Rng rng(11);
  const auto data = testing::random_batch(rng, 4, 37);
  const auto ref = policy::freeze_reference(testing::tiny_mlp(11));
  for (auto kind : {ObjectiveKind::Gapo, ObjectiveKind::Dpo, ObjectiveKind::Simpo, ObjectiveKind::SimpoSam}) {
    TrainSettings s;
    s.objective = kind;
    s.epochs = 2;
    s.batch_size = 16;
    s.seed = 5;
    std::vector<StepMetrics> log_a, log_b;
    auto a = testing::tiny_mlp(11), b = testing::tiny_mlp(11);
    const auto sa = train_run(a, data, s, &ref, [&](const StepMetrics& m) { log_a.push_back(m); });
    train_run(b, data, s, &ref, [&](const StepMetrics& m) { log_b.push_back(m); });
    CHECK(sa.steps == 6);  // ceil(37 / 16) per epoch
    REQUIRE(log_a.size() == log_b.size());
    for (std::size_t i = 0; i < log_a.size(); ++i) {
      CHECK(log_a[i].step == static_cast<long>(i));
      CHECK(same_metrics(log_a[i], log_b[i]));
    }
    CHECK(a.params().bit_identical(b.params()));

    auto c = testing::tiny_mlp(11);
    s.seed = 6;
    train_run(c, data, s, &ref);
    CHECK_FALSE(a.params().bit_identical(c.params()));
  }
}

TEST_CASE("train_run writes the final checkpoint") {
  util::Rng rng(12);
  const auto data = testing::random_batch(rng, 4, 10);
  const auto path = std::filesystem::temp_directory_path() / "gapo_trainer_test.ckpt";
  TrainSettings s;
  s.epochs = 1;
  s.checkpoint_path = path;
  auto m = testing::tiny_mlp(12);
  train_run(m, data, s, nullptr);
  const auto back = policy::load_checkpoint(path);
  CHECK(back.params().bit_identical(m.params()));
  std::filesystem::remove(path);
}

TEST_CASE("metrics csv layout") {
  std::ostringstream out;
  write_metrics_header(out);
  write_metrics_row(out, StepMetrics{3, 0.5, 0.25, -0.125, 1.25, 2.0, 0.001});
  CHECK(out.str() ==
        "step,loss,mean_margin,mean_gap,mean_weight,grad_norm,wall_time\n"
        "3,0.5,0.25,-0.125,1.25,2,0.001\n");
}

TEST_CASE("objective names parse") {
  for (auto k : {ObjectiveKind::Gapo, ObjectiveKind::Dpo, ObjectiveKind::Simpo, ObjectiveKind::SimpoSam}) {
    CHECK(parse_objective(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_objective("ipo"), ConfigError);
  CHECK(parse_optimizer(to_string(OptimizerKind::Sgd)) == OptimizerKind::Sgd);
  CHECK_THROWS_AS(parse_optimizer("lion"), ConfigError);
}

TEST_CASE("gapo training improves reward accuracy in at least 19 of 20 seeds") {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    data::CorpusConfig cc;
    cc.n_pairs = 250;  // 200 train pairs
    cc.seed = seed;
    const auto ds = data::generate_corpus(cc);
    auto m = PolicyModel::mlp_lm(16, 12, 8, 16, seed);
    const double before = data::reward_accuracy(m, ds, data::Split::Train, true);
    TrainSettings s;
    s.seed = seed;
    train_run(m, ds.train, s, nullptr);
    const double after = data::reward_accuracy(m, ds, data::Split::Train, true);
    if (after > before) ++improved;
  }
  CHECK(improved >= 19);
}
