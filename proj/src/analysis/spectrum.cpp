#include "gapo/analysis/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>

#include <Eigen/Dense>

#include "gapo/errors.hpp"
#include "gapo/util/format.hpp"
#include "gapo/util/rng.hpp"

namespace gapo::analysis {

namespace {

// H restricted to the scope coordinates `idx`.
class ScopedHessian {
 public:
  ScopedHessian(const diff::Objective& f, const diff::ParamVector& theta, std::vector<std::size_t> idx,
                const diff::HvpOptions& opts)
      : f_(f), theta_(theta), idx_(std::move(idx)), opts_(opts), full_(theta.size(), 0.0) {}

  std::size_t dim() const { return idx_.size(); }

  std::vector<double> apply(const std::vector<double>& v) {
    std::fill(full_.begin(), full_.end(), 0.0);
    for (std::size_t i = 0; i < idx_.size(); ++i) full_[idx_[i]] = v[i];
    auto r = diff::hvp(f_, theta_, full_, opts_);
    mode_ = diff::to_string(r.mode);
    std::vector<double> out(idx_.size());
    for (std::size_t i = 0; i < idx_.size(); ++i) out[i] = r.values[idx_[i]];
    return out;
  }

  const std::string& mode() const { return mode_; }

 private:
  const diff::Objective& f_;
  const diff::ParamVector& theta_;
  std::vector<std::size_t> idx_;
  diff::HvpOptions opts_;
  std::vector<double> full_;
  std::string mode_ = diff::to_string(diff::HvpMode::CentralDifferenceOfGradients);
};

std::vector<double> tridiagonal_eigenvalues(const std::vector<double>& alpha, const std::vector<double>& beta) {
  const auto k = static_cast<Eigen::Index>(alpha.size());
  Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(alpha.data(), k);
  Eigen::VectorXd e(std::max<Eigen::Index>(k - 1, 0));
  for (Eigen::Index i = 0; i + 1 < k; ++i) e[i] = beta[static_cast<std::size_t>(i)];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(d, e, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericError("lanczos", "tridiagonal eigensolve failed");
  std::vector<double> out(solver.eigenvalues().data(), solver.eigenvalues().data() + k);
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

}  // namespace

SpectrumReport lanczos_spectrum(const diff::Objective& f, const diff::ParamVector& theta,
                                const diff::ScopeMask& scope, int k_iters, std::uint64_t seed,
                                const LanczosOptions& options) {
  ScopedHessian h(f, theta, scope.indices(theta.layout()), options.hvp);
  const std::size_t d = h.dim();
  if (k_iters < 1 || static_cast<std::size_t>(k_iters) > d) {
    throw InputError("lanczos: iterations must be in [1, " + std::to_string(d) + "]");
  }

  util::Rng rng(seed);
  std::vector<double> q(d);
  for (auto& x : q) x = rng.normal();
  {
    const double n = diff::l2_norm(q);
    for (auto& x : q) x /= n;
  }

  std::vector<std::vector<double>> basis;
  std::vector<double> alpha, beta;
  SpectrumReport report;
  report.scope = scope;
  double scale = 0.0;

  for (int j = 0; j < k_iters; ++j) {
    basis.push_back(q);
    auto w = h.apply(q);
    const double a = diff::dot(w, q);
    alpha.push_back(a);
    scale = std::max(scale, std::abs(a));
    // Full reorthogonalization, twice for stability.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        const double c = diff::dot(w, b);
        for (std::size_t i = 0; i < d; ++i) w[i] -= c * b[i];
      }
    }
    if (j + 1 == k_iters) break;
    const double bnorm = diff::l2_norm(w);
    if (bnorm <= options.breakdown_tol * std::max(scale, 1e-300)) {
      report.breakdown = true;
      break;
    }
    beta.push_back(bnorm);
    scale = std::max(scale, bnorm);
    for (std::size_t i = 0; i < d; ++i) q[i] = w[i] / bnorm;
  }

  report.iterations = static_cast<int>(alpha.size());
  report.ritz_values = tridiagonal_eigenvalues(alpha, beta);
  report.hvp_mode = h.mode();
  return report;
}

std::vector<double> symmetric_eigenvalues(const std::vector<double>& a, std::size_t n) {
  if (a.size() != n * n) throw InputError("symmetric_eigenvalues: matrix is not n x n");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a[r * n + c];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericError("eigensolve", "dense eigensolve failed");
  std::vector<double> out(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

std::vector<double> dense_hessian_eigs(const diff::Objective& f, const diff::ParamVector& theta,
                                       const diff::ScopeMask& scope, std::size_t cap,
                                       const diff::HvpOptions& hvp) {
  ScopedHessian h(f, theta, scope.indices(theta.layout()), hvp);
  const std::size_t d = h.dim();
  if (d > cap) {
    throw InputError("dense Hessian over " + std::to_string(d) + " parameters exceeds the cap of " +
                     std::to_string(cap));
  }
  std::vector<double> m(d * d);
  std::vector<double> e(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    e[c] = 1.0;
    const auto col = h.apply(e);
    e[c] = 0.0;
    for (std::size_t r = 0; r < d; ++r) m[r * d + c] = col[r];
  }
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = r + 1; c < d; ++c) {
      const double s = 0.5 * (m[r * d + c] + m[c * d + r]);
      m[r * d + c] = m[c * d + r] = s;
    }
  }
  return symmetric_eigenvalues(m, d);
}

void write_spectrum_csv(std::ostream& out, const SpectrumReport& report) {
  out << "objective,checkpoint,scope,iterations,breakdown,index,ritz_value\n";
  for (std::size_t i = 0; i < report.ritz_values.size(); ++i) {
    out << report.objective << ',' << report.checkpoint << ',' << report.scope.describe() << ','
        << report.iterations << ',' << (report.breakdown ? 1 : 0) << ',' << i << ','
        << util::format_double(report.ritz_values[i]) << '\n';
  }
}

}  // namespace gapo::analysis
