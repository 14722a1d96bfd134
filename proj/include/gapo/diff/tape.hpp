#pragma once

// Reverse-mode differentiation over small dense tensors.
//
// A Tape records every primitive applied to its Vars. `backward` walks the
// record in reverse and accumulates adjoints into every node that depends on
// a variable leaf. A Tape created with `record_gradients = false` only runs
// the forward pass; that is how stop-gradient evaluations are done.
//
// Primitives: add, sub, mul, scale, add_scalar, add_row, matmul, exp, log,
// sigmoid, log_sigmoid, logsumexp_rows, gather_rows, pick_cols, slice,
// reshape, segment_sum, sum, mean. tanh is composed from sigmoid.
//
// Every primitive checks its output and throws NumericError naming itself
// when a NaN or Inf appears.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gapo/diff/tensor.hpp"

namespace gapo::diff {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int index = -1;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double item() const { return value().item(); }
  bool valid() const { return tape != nullptr && index >= 0; }
};

class Tape {
 public:
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  Var constant(Tensor value);
  // Leaf that receives a gradient in backward().
  Var variable(Tensor value);

  const Tensor& value(Var v) const;
  // Adjoint of v after backward(); zeros if v did not influence the output.
  Tensor grad(Var v) const;

  // Seeds d(output)/d(output) = 1. Output must be a 1x1 node on this tape.
  void backward(Var output);

  std::size_t size() const noexcept { return nodes_.size(); }

  // --- used by primitive implementations ---
  using BackwardFn = std::function<void(Tape&, int self)>;
  Var push(Tensor value, const char* op, std::initializer_list<Var> inputs, BackwardFn fn);
  Tensor& adjoint(int index);
  const Tensor& node_adjoint(int index) const { return nodes_[index].grad; }
  bool needs_grad(Var v) const { return nodes_[v.index].requires_grad; }
  void check_owner(Var v, const char* op) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    const char* op = "";
    BackwardFn backward;
  };

  bool recording_;
  std::vector<Node> nodes_;
};

// ----- primitives -----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
// a (r x c) + row (1 x c) broadcast over rows.
Var add_row(Var a, Var row);
Var matmul(Var a, Var b);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var log_sigmoid(Var a);
Var tanh(Var a);
// (r x c) -> (r x 1)
Var logsumexp_rows(Var a);
// Row i of the result is row idx[i] of a; idx[i] == -1 gives a zero row.
Var gather_rows(Var a, std::vector<int> idx);
// (r x c) -> (r x 1), element i is a(i, col[i]).
Var pick_cols(Var a, std::vector<int> col);
// Contiguous flat range [offset, offset + rows*cols) reshaped row-major.
Var slice(Var a, std::size_t offset, std::size_t rows, std::size_t cols);
Var reshape(Var a, std::size_t rows, std::size_t cols);
// (r x 1) -> (n_segments x 1), summing entries with the same segment id.
Var segment_sum(Var a, std::vector<int> segment, std::size_t n_segments);
Var sum(Var a);
Var mean(Var a);

}  // namespace gapo::diff
