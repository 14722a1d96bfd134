#include <atomic>

#include "gapo/kernels/matmul.hpp"

namespace gapo::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::OpenMP};
}

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }
Backend backend() { return g_backend.load(std::memory_order_relaxed); }

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n) {
  if (backend() == Backend::OpenMP) {
    omp::matmul(a, b, out, m, k, n);
  } else {
    serial::matmul(a, b, out, m, k, n);
  }
}

void matmul_nt_acc(std::span<const double> g, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n) {
  if (backend() == Backend::OpenMP) {
    omp::matmul_nt_acc(g, b, out, m, k, n);
  } else {
    serial::matmul_nt_acc(g, b, out, m, k, n);
  }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> g, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n) {
  if (backend() == Backend::OpenMP) {
    omp::matmul_tn_acc(a, g, out, m, k, n);
  } else {
    serial::matmul_tn_acc(a, g, out, m, k, n);
  }
}

void logsumexp_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
                    std::size_t cols) {
  if (backend() == Backend::OpenMP) {
    omp::logsumexp_rows(x, out, rows, cols);
  } else {
    serial::logsumexp_rows(x, out, rows, cols);
  }
}

}  // namespace gapo::kernels
