#include "gapo/diff/tape.hpp"

#include <cmath>
#include <string>

#include "gapo/errors.hpp"
#include "gapo/kernels/matmul.hpp"

namespace gapo::diff {

namespace {

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw NumericError(op, std::string("non-finite value produced by primitive '") + op + "'");
    }
  }
}

void require(bool ok, const char* op, const char* what) {
  if (!ok) throw InputError(std::string(op) + ": " + what);
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

void Tape::check_owner(Var v, const char* op) const {
  if (v.tape != this || v.index < 0 || static_cast<std::size_t>(v.index) >= nodes_.size()) {
    throw InputError(std::string(op) + ": operand was not recorded on this tape");
  }
}

Var Tape::constant(Tensor value) {
  check_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, "constant", {}});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) {
  check_finite(value, "variable");
  nodes_.push_back(Node{std::move(value), {}, recording_, "variable", {}});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  check_owner(v, "value");
  return nodes_[v.index].value;
}

Tensor Tape::grad(Var v) const {
  check_owner(v, "grad");
  const Node& n = nodes_[v.index];
  if (n.grad.size() == 0) return Tensor(n.value.rows, n.value.cols);
  return n.grad;
}

Tensor& Tape::adjoint(int index) {
  Node& n = nodes_[index];
  if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Tensor(n.value.rows, n.value.cols);
  return n.grad;
}

Var Tape::push(Tensor value, const char* op, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool tracked = false;
  for (const Var& in : inputs) {
    check_owner(in, op);
    tracked = tracked || nodes_[in.index].requires_grad;
  }
  check_finite(value, op);
  tracked = tracked && recording_;
  nodes_.push_back(Node{std::move(value), {}, tracked, op, tracked ? std::move(fn) : BackwardFn{}});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var output) {
  check_owner(output, "backward");
  if (!recording_) throw InputError("backward: tape was created without gradient recording");
  const Tensor& out = nodes_[output.index].value;
  if (out.rows != 1 || out.cols != 1) throw InputError("backward: output must be a scalar");
  if (!nodes_[output.index].requires_grad) return;
  adjoint(output.index).data[0] = 1.0;
  for (int i = output.index; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
}

// ----- primitives -----

Var add(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require(av.rows == bv.rows && av.cols == bv.cols, "add", "shape mismatch");
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
  const int ia = a.index, ib = b.index;
  return a.tape->push(std::move(out), "add", {a, b}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    for (int target : {ia, ib}) {
      if (!t.needs_grad(Var{&t, target})) continue;
      Tensor& d = t.adjoint(target);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
    }
  });
}

Var sub(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require(av.rows == bv.rows && av.cols == bv.cols, "sub", "shape mismatch");
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] - bv.data[i];
  const int ia = a.index, ib = b.index;
  return a.tape->push(std::move(out), "sub", {a, b}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    if (t.needs_grad(Var{&t, ia})) {
      Tensor& d = t.adjoint(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
    }
    if (t.needs_grad(Var{&t, ib})) {
      Tensor& d = t.adjoint(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] -= g.data[i];
    }
  });
}

Var mul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require(av.rows == bv.rows && av.cols == bv.cols, "mul", "shape mismatch");
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
  const int ia = a.index, ib = b.index;
  return a.tape->push(std::move(out), "mul", {a, b}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    const Tensor& av = t.value(Var{&t, ia});
    const Tensor& bv = t.value(Var{&t, ib});
    if (t.needs_grad(Var{&t, ia})) {
      Tensor& d = t.adjoint(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * bv.data[i];
    }
    if (t.needs_grad(Var{&t, ib})) {
      Tensor& d = t.adjoint(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * av.data[i];
    }
  });
}

Var scale(Var a, double c) {
  const auto& av = a.value();
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = c * av.data[i];
  const int ia = a.index;
  return a.tape->push(std::move(out), "scale", {a}, [ia, c](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    Tensor& d = t.adjoint(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += c * g.data[i];
  });
}

Var add_scalar(Var a, double c) {
  const auto& av = a.value();
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] + c;
  const int ia = a.index;
  return a.tape->push(std::move(out), "add_scalar", {a}, [ia](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    Tensor& d = t.adjoint(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
  });
}

Var add_row(Var a, Var row) {
  const auto& av = a.value();
  const auto& rv = row.value();
  require(rv.rows == 1 && rv.cols == av.cols, "add_row", "row shape mismatch");
  Tensor out(av.rows, av.cols);
  for (std::size_t r = 0; r < av.rows; ++r) {
    for (std::size_t c = 0; c < av.cols; ++c) out.at(r, c) = av.at(r, c) + rv.data[c];
  }
  const int ia = a.index, ir = row.index;
  return a.tape->push(std::move(out), "add_row", {a, row}, [ia, ir](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    if (t.needs_grad(Var{&t, ia})) {
      Tensor& d = t.adjoint(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
    }
    if (t.needs_grad(Var{&t, ir})) {
      Tensor& d = t.adjoint(ir);
      for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) d.data[c] += g.at(r, c);
      }
    }
  });
}

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require(av.cols == bv.rows, "matmul", "inner dimensions differ");
  const std::size_t m = av.rows, k = av.cols, n = bv.cols;
  Tensor out(m, n);
  kernels::matmul(av.data, bv.data, out.data, m, k, n);
  const int ia = a.index, ib = b.index;
  return a.tape->push(std::move(out), "matmul", {a, b}, [ia, ib, m, k, n](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    if (t.needs_grad(Var{&t, ia})) {
      kernels::matmul_nt_acc(g.data, t.value(Var{&t, ib}).data, t.adjoint(ia).data, m, k, n);
    }
    if (t.needs_grad(Var{&t, ib})) {
      kernels::matmul_tn_acc(t.value(Var{&t, ia}).data, g.data, t.adjoint(ib).data, m, k, n);
    }
  });
}

Var exp(Var a) {
  const auto& av = a.value();
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::exp(av.data[i]);
  const int ia = a.index;
  return a.tape->push(std::move(out), "exp", {a}, [ia](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    const Tensor& y = t.value(Var{&t, self});
    Tensor& d = t.adjoint(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * y.data[i];
  });
}

Var log(Var a) {
  const auto& av = a.value();
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::log(av.data[i]);
  const int ia = a.index;
  return a.tape->push(std::move(out), "log", {a}, [ia](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    const Tensor& x = t.value(Var{&t, ia});
    Tensor& d = t.adjoint(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] / x.data[i];
  });
}

Var sigmoid(Var a) {
  const auto& av = a.value();
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = stable_sigmoid(av.data[i]);
  const int ia = a.index;
  return a.tape->push(std::move(out), "sigmoid", {a}, [ia](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    const Tensor& y = t.value(Var{&t, self});
    Tensor& d = t.adjoint(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
  });
}

Var log_sigmoid(Var a) {
  const auto& av = a.value();
  Tensor out(av.rows, av.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = stable_log_sigmoid(av.data[i]);
  const int ia = a.index;
  return a.tape->push(std::move(out), "log_sigmoid", {a}, [ia](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    const Tensor& x = t.value(Var{&t, ia});
    Tensor& d = t.adjoint(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i] * stable_sigmoid(-x.data[i]);
  });
}

Var tanh(Var a) { return add_scalar(scale(sigmoid(scale(a, 2.0)), 2.0), -1.0); }

Var logsumexp_rows(Var a) {
  const auto& av = a.value();
  require(av.cols > 0, "logsumexp_rows", "no columns");
  Tensor out(av.rows, 1);
  kernels::logsumexp_rows(av.data, out.data, av.rows, av.cols);
  const int ia = a.index;
  return a.tape->push(std::move(out), "logsumexp_rows", {a}, [ia](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    const Tensor& x = t.value(Var{&t, ia});
    const Tensor& lse = t.value(Var{&t, self});
    Tensor& d = t.adjoint(ia);
    for (std::size_t r = 0; r < x.rows; ++r) {
      for (std::size_t c = 0; c < x.cols; ++c) {
        d.at(r, c) += g.data[r] * std::exp(x.at(r, c) - lse.data[r]);
      }
    }
  });
}

Var gather_rows(Var a, std::vector<int> idx) {
  const auto& av = a.value();
  Tensor out(idx.size(), av.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= -1 && idx[i] < static_cast<int>(av.rows), "gather_rows", "row index out of range");
    if (idx[i] < 0) continue;
    const double* src = av.data.data() + static_cast<std::size_t>(idx[i]) * av.cols;
    std::copy(src, src + av.cols, out.data.data() + i * av.cols);
  }
  const int ia = a.index;
  return a.tape->push(std::move(out), "gather_rows", {a},
                      [ia, idx = std::move(idx)](Tape& t, int self) {
                        const Tensor& g = t.node_adjoint(self);
                        Tensor& d = t.adjoint(ia);
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                          if (idx[i] < 0) continue;
                          double* dst = d.data.data() + static_cast<std::size_t>(idx[i]) * d.cols;
                          for (std::size_t c = 0; c < d.cols; ++c) dst[c] += g.at(i, c);
                        }
                      });
}

Var pick_cols(Var a, std::vector<int> col) {
  const auto& av = a.value();
  require(col.size() == av.rows, "pick_cols", "one column index per row required");
  Tensor out(av.rows, 1);
  for (std::size_t r = 0; r < av.rows; ++r) {
    require(col[r] >= 0 && col[r] < static_cast<int>(av.cols), "pick_cols", "column out of range");
    out.data[r] = av.at(r, static_cast<std::size_t>(col[r]));
  }
  const int ia = a.index;
  return a.tape->push(std::move(out), "pick_cols", {a},
                      [ia, col = std::move(col)](Tape& t, int self) {
                        const Tensor& g = t.node_adjoint(self);
                        Tensor& d = t.adjoint(ia);
                        for (std::size_t r = 0; r < col.size(); ++r) {
                          d.at(r, static_cast<std::size_t>(col[r])) += g.data[r];
                        }
                      });
}

Var slice(Var a, std::size_t offset, std::size_t rows, std::size_t cols) {
  const auto& av = a.value();
  require(offset + rows * cols <= av.size(), "slice", "range exceeds operand");
  Tensor out(rows, cols);
  std::copy(av.data.begin() + static_cast<long>(offset),
            av.data.begin() + static_cast<long>(offset + rows * cols), out.data.begin());
  const int ia = a.index;
  return a.tape->push(std::move(out), "slice", {a}, [ia, offset](Tape& t, int self) {
    const Tensor& g = t.node_adjoint(self);
    Tensor& d = t.adjoint(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[offset + i] += g.data[i];
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  require(rows * cols == a.value().size(), "reshape", "element count changes");
  return slice(a, 0, rows, cols);
}

Var segment_sum(Var a, std::vector<int> segment, std::size_t n_segments) {
  const auto& av = a.value();
  require(av.cols == 1 && segment.size() == av.rows, "segment_sum", "expects a column and one id per row");
  Tensor out(n_segments, 1);
  for (std::size_t r = 0; r < av.rows; ++r) {
    require(segment[r] >= 0 && static_cast<std::size_t>(segment[r]) < n_segments, "segment_sum",
            "segment id out of range");
    out.data[static_cast<std::size_t>(segment[r])] += av.data[r];
  }
  const int ia = a.index;
  return a.tape->push(std::move(out), "segment_sum", {a},
                      [ia, segment = std::move(segment)](Tape& t, int self) {
                        const Tensor& g = t.node_adjoint(self);
                        Tensor& d = t.adjoint(ia);
                        for (std::size_t r = 0; r < segment.size(); ++r) {
                          d.data[r] += g.data[static_cast<std::size_t>(segment[r])];
                        }
                      });
}

Var sum(Var a) {
  const auto& av = a.value();
  double s = 0.0;
  for (double v : av.data) s += v;
  const int ia = a.index;
  return a.tape->push(Tensor::scalar(s), "sum", {a}, [ia](Tape& t, int self) {
    const double g = t.node_adjoint(self).data[0];
    Tensor& d = t.adjoint(ia);
    for (double& v : d.data) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  require(n > 0, "mean", "empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

}  // namespace gapo::diff
