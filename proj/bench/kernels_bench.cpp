// Serial reference vs OpenMP kernels, plus one GAPO loss evaluation on each
// backend. Run with --benchmark_filter=... to pick a subset.

#include <benchmark/benchmark.h>

#include <vector>

#include "gapo/data/dataset.hpp"
#include "gapo/kernels/matmul.hpp"
#include "gapo/objectives/objectives.hpp"
#include "gapo/util/rng.hpp"

namespace {

using namespace gapo;

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  util::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

using MatmulFn = void (*)(std::span<const double>, std::span<const double>, std::span<double>, std::size_t,
                          std::size_t, std::size_t);

template <MatmulFn Fn>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    Fn(a, b, out, n, n, n);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <MatmulFn Fn>
void BM_matmul_tn_acc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 3), g = random_vector(n * n, 4);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    Fn(a, g, out, n, n, n);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

using RowFn = void (*)(std::span<const double>, std::span<double>, std::size_t, std::size_t);

template <RowFn Fn>
void BM_logsumexp_rows(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 16;
  const auto x = random_vector(rows * cols, 5);
  std::vector<double> out(rows);
  for (auto _ : state) {
    Fn(x, out, rows, cols);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * cols));
}

void BM_gapo_loss(benchmark::State& state) {
  kernels::set_backend(state.range(0) == 0 ? kernels::Backend::Serial : kernels::Backend::OpenMP);
  data::CorpusConfig cc;
  cc.n_pairs = 64;
  cc.test_fraction = 0.0;
  const auto ds = data::generate_corpus(cc);
  auto model = policy::PolicyModel::create(policy::ModelShape{}, 0);
  objectives::GapoConfig cfg;
  for (auto _ : state) {
    auto loss = objectives::gapo_loss(model, ds.train, cfg);
    benchmark::DoNotOptimize(loss.loss);
  }
  state.SetLabel(state.range(0) == 0 ? "serial" : "openmp");
  kernels::set_backend(kernels::Backend::OpenMP);
}

}  // namespace

BENCHMARK(BM_matmul<gapo::kernels::serial::matmul>)->Name("matmul/serial")->RangeMultiplier(2)->Range(16, 256);
BENCHMARK(BM_matmul<gapo::kernels::omp::matmul>)->Name("matmul/openmp")->RangeMultiplier(2)->Range(16, 256);
BENCHMARK(BM_matmul_tn_acc<gapo::kernels::serial::matmul_tn_acc>)->Name("matmul_tn_acc/serial")->Range(32, 256);
BENCHMARK(BM_matmul_tn_acc<gapo::kernels::omp::matmul_tn_acc>)->Name("matmul_tn_acc/openmp")->Range(32, 256);
BENCHMARK(BM_logsumexp_rows<gapo::kernels::serial::logsumexp_rows>)->Name("logsumexp_rows/serial")->Range(256, 1 << 14);
BENCHMARK(BM_logsumexp_rows<gapo::kernels::omp::logsumexp_rows>)->Name("logsumexp_rows/openmp")->Range(256, 1 << 14);
BENCHMARK(BM_gapo_loss)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
