#pragma once

// Dense row-major matrix kernels used by the differentiation engine.
//
// Every kernel has a serial reference and an OpenMP version. Both accumulate
// each output element over the shared dimension in ascending order, so the
// two backends produce bit-identical results; tests rely on that.

#include <cstddef>
#include <span>

namespace gapo::kernels {

enum class Backend { Serial, OpenMP };

// Process-wide default backend used by the dispatching entry points.
void set_backend(Backend backend);
Backend backend();

// Below this many multiply-adds the OpenMP path runs serially.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

namespace serial {
// out(m x n) = a(m x k) * b(k x n)
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n);
// out(m x k) += g(m x n) * b(k x n)^T
void matmul_nt_acc(std::span<const double> g, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);
// out(k x n) += a(m x k)^T * g(m x n)
void matmul_tn_acc(std::span<const double> a, std::span<const double> g, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);
// out[r] = log(sum_c exp(x[r, c]))
void logsumexp_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
                    std::size_t cols);
}  // namespace serial

namespace omp {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(std::span<const double> g, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(std::span<const double> a, std::span<const double> g, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);
void logsumexp_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
                    std::size_t cols);
}  // namespace omp

// Dispatch on backend().
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(std::span<const double> g, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(std::span<const double> a, std::span<const double> g, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);
void logsumexp_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
                    std::size_t cols);

}  // namespace gapo::kernels
