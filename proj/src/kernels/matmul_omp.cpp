#include "gapo/kernels/matmul.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace gapo::kernels::omp {

namespace {
bool worth_parallel(std::size_t work) { return work >= kParallelThreshold; }
}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (worth_parallel(m * k * n))
  for (long i = 0; i < rows; ++i) {
    double* row = out.data() + i * n;
    std::fill(row, row + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
}

void matmul_nt_acc(std::span<const double> g, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (worth_parallel(m * k * n))
  for (long i = 0; i < rows; ++i) {
    const double* grow = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data() + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      out[i * k + p] += acc;
    }
  }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> g, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n) {
  // Parallel over output rows p; each row accumulates over i in ascending order.
  const auto out_rows = static_cast<long>(k);
#pragma omp parallel if (worth_parallel(m * k * n))
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (long p = 0; p < out_rows; ++p) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const double aip = a[i * k + p];
        const double* grow = g.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += aip * grow[j];
      }
      double* orow = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += acc[j];
    }
  }
}

void logsumexp_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
                    std::size_t cols) {
  const auto nrows = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (worth_parallel(rows * cols * 8))
  for (long r = 0; r < nrows; ++r) {
    const double* row = x.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    out[r] = mx + std::log(s);
  }
}

}  // namespace gapo::kernels::omp
