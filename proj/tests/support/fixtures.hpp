#pragma once

// Shared helpers for the unit and acceptance suites: small random models and
// batches, plus oracles that do not go through the library's own gradient
// code paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gapo/diff/differentiate.hpp"
#include "gapo/objectives/objectives.hpp"
#include "gapo/policy/policy_model.hpp"
#include "gapo/util/rng.hpp"

namespace gapo::testing {

using objectives::PreferencePair;
using policy::PolicyModel;
using policy::TokenSeq;

inline TokenSeq random_tokens(util::Rng& rng, int vocab, int min_len, int max_len) {
  TokenSeq out(static_cast<std::size_t>(rng.range(min_len, max_len)));
  for (auto& t : out) t = static_cast<policy::Token>(rng.index(static_cast<std::uint64_t>(vocab)));
  return out;
}

inline PreferencePair random_pair(util::Rng& rng, int vocab, std::int64_t id, int max_len = 5) {
  PreferencePair p;
  p.pair_id = id;
  p.x = random_tokens(rng, vocab, 0, 3);
  do {
    p.y_w = random_tokens(rng, vocab, 1, max_len);
    p.y_l = random_tokens(rng, vocab, 1, max_len);
  } while (p.y_w == p.y_l);
  return p;
}

inline std::vector<PreferencePair> random_batch(util::Rng& rng, int vocab, std::size_t n, int max_len = 5) {
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_pair(rng, vocab, static_cast<std::int64_t>(i), max_len));
  return out;
}

inline void randomize(PolicyModel& model, util::Rng& rng, double scale) {
  std::vector<double> v(model.params().size());
  for (auto& x : v) x = scale * rng.normal();
  model.params().assign(v);
}

// V = 4, W = 3, E = 2, H = 3: 47 parameters, every segment non-trivial.
inline PolicyModel tiny_mlp(std::uint64_t seed, double scale = 0.7) {
  auto m = PolicyModel::mlp_lm(4, 3, 2, 3, seed);
  util::Rng rng(util::derive_seed(seed, 99));
  randomize(m, rng, scale);
  return m;
}

// V = 6: 36 parameters.
inline PolicyModel tiny_bigram(std::uint64_t seed, double scale = 0.7) {
  auto m = PolicyModel::tabular_bigram(6);
  util::Rng rng(util::derive_seed(seed, 98));
  randomize(m, rng, scale);
  return m;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// A single-segment parameter vector named "theta".
inline diff::ParamVector flat(std::vector<double> v) {
  const auto n = v.size();
  return diff::ParamVector(std::move(v), {{"theta", 0, n}});
}

// ½ θᵀAθ with A given row-major.
inline diff::Objective quadratic(const std::vector<double>& a, std::size_t n) {
  return [a, n](diff::Tape& tape, diff::Var t) {
    diff::Var A = tape.constant(diff::Tensor(n, n, a));
    return diff::scale(diff::sum(diff::mul(t, diff::matmul(A, t))), 0.5);
  };
}

inline std::vector<double> random_symmetric(util::Rng& rng, std::size_t n) {
  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) a[i * n + j] = a[j * n + i] = rng.normal();
  }
  return a;
}

// Per-pair margin gradients ∇M_i(θ), one objective per pair.
inline std::vector<std::vector<double>> margin_gradients(const PolicyModel& model,
                                                         std::span<const PreferencePair> batch) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto f = objectives::mean_margin_objective(model, batch.subspan(i, 1));
    out.push_back(diff::grad_values(f, model.params().values()));
  }
  return out;
}

// −(1/N) Σ w_i ∇M_i(θ).
inline std::vector<double> reweighted_margin_gradient(const std::vector<std::vector<double>>& grads,
                                                      std::span<const double> weights) {
  std::vector<double> out(grads.front().size(), 0.0);
  const double n = static_cast<double>(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] -= weights[i] * grads[i][k] / n;
  }
  return out;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  return diff::dot(a, b) / (diff::l2_norm(a) * diff::l2_norm(b));
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace gapo::testing
