#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gapo::diff {

// Row-major dense matrix of doubles. Column vectors are (n x 1).
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {}

  static Tensor column(std::span<const double> values) {
    return {values.size(), 1, std::vector<double>(values.begin(), values.end())};
  }
  static Tensor scalar(double v) { return {1, 1, std::vector<double>{v}}; }

  std::size_t size() const noexcept { return data.size(); }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double item() const { return data.front(); }
};

}  // namespace gapo::diff
