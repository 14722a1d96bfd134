#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gapo/diff/differentiate.hpp"
#include "gapo/diff/param_vector.hpp"

namespace gapo::analysis {

struct SpectrumReport {
  std::vector<double> ritz_values;  // descending
  diff::ScopeMask scope;
  int iterations = 0;  // Lanczos steps actually taken
  bool breakdown = false;
  std::string objective;   // e.g. "gapo"
  std::string checkpoint;  // checkpoint id (hash) of the probed model
  std::string hvp_mode;
};

struct LanczosOptions {
  // Stop when the next off-diagonal falls below this fraction of the largest
  // tridiagonal entry seen so far.
  double breakdown_tol = 1e-10;
  diff::HvpOptions hvp{};
};

// Lanczos with full reorthogonalization on the Hessian of `f` restricted to
// the parameters in `scope`. The start vector is Gaussian on the scope,
// drawn from `seed`. Requires 1 ≤ k_iters ≤ scope dimension.
SpectrumReport lanczos_spectrum(const diff::Objective& f, const diff::ParamVector& theta,
                                const diff::ScopeMask& scope, int k_iters, std::uint64_t seed,
                                const LanczosOptions& options = {});

inline constexpr std::size_t kDenseHessianCap = 300;

// Scope-restricted Hessian built column by column with hvp, symmetrized,
// all eigenvalues descending. Throws InputError above `cap` dimensions.
std::vector<double> dense_hessian_eigs(const diff::Objective& f, const diff::ParamVector& theta,
                                       const diff::ScopeMask& scope, std::size_t cap = kDenseHessianCap,
                                       const diff::HvpOptions& hvp = {});

// Eigenvalues of a symmetric matrix given row-major, descending.
std::vector<double> symmetric_eigenvalues(const std::vector<double>& a, std::size_t n);

// Columns: objective,checkpoint,scope,iterations,breakdown,index,ritz_value
void write_spectrum_csv(std::ostream& out, const SpectrumReport& report);

}  // namespace gapo::analysis
