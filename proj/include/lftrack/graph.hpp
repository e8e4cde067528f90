#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lftrack/types.hpp"

namespace lftrack::ad {

// Reverse-mode tape over dense Eigen matrices. Every operation evaluates
// eagerly and records a pull-style backward closure; backward() walks the
// tape in reverse creation order (a valid topological order) with fixed-order
// accumulation, so gradients are bit-deterministic.
template <typename S>
class Graph {
 public:
  using M = MatX<S>;

  struct Node {
    M value;
    M grad;  // empty means "identically zero so far"
    std::function<void(Graph&, int)> back;
    bool needs_grad = false;
  };

  int add(M value, bool needs_grad, std::function<void(Graph&, int)> back = {}) {
    nodes_.push_back(Node{std::move(value), M(), std::move(back), needs_grad});
    return int(nodes_.size()) - 1;
  }

  Node& at(int id) { return nodes_[std::size_t(id)]; }
  const Node& at(int id) const { return nodes_[std::size_t(id)]; }
  const M& value(int id) const { return nodes_[std::size_t(id)].value; }

  // Gradient accumulator, allocated (zero) on first touch.
  M& grad_ref(int id) {
    Node& n = nodes_[std::size_t(id)];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(int loss_id) {
    Node& loss = nodes_[std::size_t(loss_id)];
    if (loss.value.rows() != 1 || loss.value.cols() != 1)
      throw ValidationError("backward: loss must be a 1x1 node");
    if (!std::isfinite(double(loss.value(0, 0))))
      throw NumericError("backward: non-finite loss value");
    grad_ref(loss_id).setConstant(S(1));
    for (int i = loss_id; i >= 0; --i) {
      Node& n = nodes_[std::size_t(i)];
      if (n.needs_grad && n.back && n.grad.size() != 0) n.back(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

template <typename S>
struct Var {
  Graph<S>* g = nullptr;
  int id = -1;

  const MatX<S>& v() const { return g->value(id); }
  Index rows() const { return v().rows(); }
  Index cols() const { return v().cols(); }
};

namespace detail {

template <typename S>
bool needs(const Var<S>& a) {
  return a.g->at(a.id).needs_grad;
}

template <typename S>
void check_same_graph(const Var<S>& a, const Var<S>& b) {
  if (a.g != b.g) throw ValidationError("graph op: operands from different graphs");
}

}  // namespace detail

template <typename S>
Var<S> constant(Graph<S>& g, MatX<S> v) {
  return {&g, g.add(std::move(v), false)};
}

// Leaf with gradient tracking; the caller reads the accumulated gradient back
// from the node after backward().
template <typename S>
Var<S> input(Graph<S>& g, MatX<S> v, bool needs_grad = true) {
  return {&g, g.add(std::move(v), needs_grad)};
}

template <typename S>
Var<S> stop_grad(Var<S> a) {
  return constant(*a.g, a.v());
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::check_same_graph(a, b);
  Graph<S>& g = *a.g;
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("add: shape mismatch");
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Graph<S>&, int)> back;
  if (na || nb) {
    back = [ai = a.id, bi = b.id, na, nb](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      if (na) gg.grad_ref(ai) += go;
      if (nb) gg.grad_ref(bi) += go;
    };
  }
  return {&g, g.add(a.v() + b.v(), na || nb, std::move(back))};
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::check_same_graph(a, b);
  Graph<S>& g = *a.g;
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("sub: shape mismatch");
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Graph<S>&, int)> back;
  if (na || nb) {
    back = [ai = a.id, bi = b.id, na, nb](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      if (na) gg.grad_ref(ai) += go;
      if (nb) gg.grad_ref(bi) -= go;
    };
  }
  return {&g, g.add(a.v() - b.v(), na || nb, std::move(back))};
}

template <typename S>
Var<S> scale(Var<S> a, S k) {
  Graph<S>& g = *a.g;
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, k](Graph<S>& gg, int self) {
      gg.grad_ref(ai) += k * gg.at(self).grad;
    };
  }
  return {&g, g.add(MatX<S>(k * a.v()), na, std::move(back))};
}

// Elementwise product of two tracked values.
template <typename S>
Var<S> cmul(Var<S> a, Var<S> b) {
  detail::check_same_graph(a, b);
  Graph<S>& g = *a.g;
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("cmul: shape mismatch");
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Graph<S>&, int)> back;
  if (na || nb) {
    back = [ai = a.id, bi = b.id, na, nb](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      if (na) gg.grad_ref(ai).array() += go.array() * gg.at(bi).value.array();
      if (nb) gg.grad_ref(bi).array() += go.array() * gg.at(ai).value.array();
    };
  }
  return {&g, g.add(MatX<S>(a.v().array() * b.v().array()), na || nb, std::move(back))};
}

// Elementwise product with an untracked coefficient matrix.
template <typename S>
Var<S> cmul_const(Var<S> a, const MatX<S>& m) {
  Graph<S>& g = *a.g;
  if (a.rows() != m.rows() || a.cols() != m.cols())
    throw ValidationError("cmul_const: shape mismatch");
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, m](Graph<S>& gg, int self) {
      gg.grad_ref(ai).array() += gg.at(self).grad.array() * m.array();
    };
  }
  return {&g, g.add(MatX<S>(a.v().array() * m.array()), na, std::move(back))};
}

template <typename S>
Var<S> cdiv(Var<S> a, Var<S> b) {
  detail::check_same_graph(a, b);
  Graph<S>& g = *a.g;
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("cdiv: shape mismatch");
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Graph<S>&, int)> back;
  if (na || nb) {
    back = [ai = a.id, bi = b.id, na, nb](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      const auto bv = gg.at(bi).value.array();
      if (na) gg.grad_ref(ai).array() += go.array() / bv;
      if (nb)
        gg.grad_ref(bi).array() -= go.array() * gg.at(ai).value.array() / (bv * bv);
    };
  }
  return {&g, g.add(MatX<S>((a.v().array() / b.v().array()).matrix()), na || nb, std::move(back))};
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::check_same_graph(a, b);
  Graph<S>& g = *a.g;
  if (a.cols() != b.rows()) throw ValidationError("matmul: inner dimension mismatch");
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Graph<S>&, int)> back;
  if (na || nb) {
    back = [ai = a.id, bi = b.id, na, nb](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      if (na) gg.grad_ref(ai).noalias() += go * gg.at(bi).value.transpose();
      if (nb) gg.grad_ref(bi).noalias() += gg.at(ai).value.transpose() * go;
    };
  }
  return {&g, g.add(MatX<S>(a.v() * b.v()), na || nb, std::move(back))};
}

// a * b^T without materializing a transpose node.
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  detail::check_same_graph(a, b);
  Graph<S>& g = *a.g;
  if (a.cols() != b.cols()) throw ValidationError("matmul_nt: inner dimension mismatch");
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Graph<S>&, int)> back;
  if (na || nb) {
    back = [ai = a.id, bi = b.id, na, nb](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      if (na) gg.grad_ref(ai).noalias() += go * gg.at(bi).value;
      if (nb) gg.grad_ref(bi).noalias() += go.transpose() * gg.at(ai).value;
    };
  }
  return {&g, g.add(MatX<S>(a.v() * b.v().transpose()), na || nb, std::move(back))};
}

template <typename S>
Var<S> matmul_const_r(Var<S> a, const MatX<S>& m) {
  Graph<S>& g = *a.g;
  if (a.cols() != m.rows()) throw ValidationError("matmul_const_r: inner dimension mismatch");
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, m](Graph<S>& gg, int self) {
      gg.grad_ref(ai).noalias() += gg.at(self).grad * m.transpose();
    };
  }
  return {&g, g.add(MatX<S>(a.v() * m), na, std::move(back))};
}

// x + bias with bias broadcast over rows (bias is 1 x C).
template <typename S>
Var<S> add_rowvec(Var<S> a, Var<S> bias) {
  detail::check_same_graph(a, bias);
  Graph<S>& g = *a.g;
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw ValidationError("add_rowvec: bias must be 1 x cols(a)");
  const bool na = detail::needs(a), nb = detail::needs(bias);
  std::function<void(Graph<S>&, int)> back;
  if (na || nb) {
    back = [ai = a.id, bi = bias.id, na, nb](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      if (na) gg.grad_ref(ai) += go;
      if (nb) gg.grad_ref(bi) += go.colwise().sum();
    };
  }
  MatX<S> out = a.v();
  out.rowwise() += bias.v().row(0);
  return {&g, g.add(std::move(out), na || nb, std::move(back))};
}

// Replicate a 1 x C row n times.
template <typename S>
Var<S> broadcast_row(Var<S> a, Index n) {
  Graph<S>& g = *a.g;
  if (a.rows() != 1) throw ValidationError("broadcast_row: input must have one row");
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id](Graph<S>& gg, int self) {
      gg.grad_ref(ai) += gg.at(self).grad.colwise().sum();
    };
  }
  MatX<S> out(n, a.cols());
  out.rowwise() = a.v().row(0);
  return {&g, g.add(std::move(out), na, std::move(back))};
}

// Per-row scaling by an untracked vector (n x 1).
template <typename S>
Var<S> scale_rows(Var<S> a, const VecX<S>& s) {
  Graph<S>& g = *a.g;
  if (s.size() != a.rows()) throw ValidationError("scale_rows: length mismatch");
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, s](Graph<S>& gg, int self) {
      gg.grad_ref(ai) += s.asDiagonal() * gg.at(self).grad;
    };
  }
  return {&g, g.add(MatX<S>(s.asDiagonal() * a.v()), na, std::move(back))};
}

template <typename S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  detail::check_same_graph(a, b);
  Graph<S>& g = *a.g;
  if (a.cols() != b.cols()) throw ValidationError("concat_rows: column mismatch");
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Graph<S>&, int)> back;
  if (na || nb) {
    back = [ai = a.id, bi = b.id, na, nb, ra = a.rows(), rb = b.rows()](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      if (na) gg.grad_ref(ai) += go.topRows(ra);
      if (nb) gg.grad_ref(bi) += go.bottomRows(rb);
    };
  }
  MatX<S> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.v();
  out.bottomRows(b.rows()) = b.v();
  return {&g, g.add(std::move(out), na || nb, std::move(back))};
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no parts");
  Graph<S>& g = *parts[0].g;
  Index cols = 0;
  for (const auto& p : parts) {
    detail::check_same_graph(parts[0], p);
    if (p.rows() != parts[0].rows()) throw ValidationError("concat_cols: row mismatch");
    cols += p.cols();
  }
  bool any = false;
  std::vector<std::pair<int, std::pair<Index, Index>>> spans;  // id -> (offset, width)
  MatX<S> out(parts[0].rows(), cols);
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.v();
    spans.push_back({p.id, {off, p.cols()}});
    any = any || detail::needs(p);
    off += p.cols();
  }
  std::function<void(Graph<S>&, int)> back;
  if (any) {
    back = [spans](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      for (const auto& [id, span] : spans)
        if (gg.at(id).needs_grad) gg.grad_ref(id) += go.middleCols(span.first, span.second);
    };
  }
  return {&g, g.add(std::move(out), any, std::move(back))};
}

template <typename S>
Var<S> slice_rows(Var<S> a, Index r0, Index n) {
  Graph<S>& g = *a.g;
  if (r0 < 0 || n < 1 || r0 + n > a.rows()) throw ValidationError("slice_rows: out of range");
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, r0, n](Graph<S>& gg, int self) {
      gg.grad_ref(ai).middleRows(r0, n) += gg.at(self).grad;
    };
  }
  return {&g, g.add(MatX<S>(a.v().middleRows(r0, n)), na, std::move(back))};
}

template <typename S>
Var<S> slice_cols(Var<S> a, Index c0, Index n) {
  Graph<S>& g = *a.g;
  if (c0 < 0 || n < 1 || c0 + n > a.cols()) throw ValidationError("slice_cols: out of range");
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, c0, n](Graph<S>& gg, int self) {
      gg.grad_ref(ai).middleCols(c0, n) += gg.at(self).grad;
    };
  }
  return {&g, g.add(MatX<S>(a.v().middleCols(c0, n)), na, std::move(back))};
}

// Row gather: out.row(i) = a.row(idx[i]).
template <typename S>
Var<S> gather_rows(Var<S> a, std::vector<int> idx) {
  Graph<S>& g = *a.g;
  for (int i : idx)
    if (i < 0 || i >= a.rows()) throw ValidationError("gather_rows: index out of range");
  const bool na = detail::needs(a);
  MatX<S> out(Index(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(Index(r)) = a.v().row(idx[r]);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, idx](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      MatX<S>& ga = gg.grad_ref(ai);
      for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += go.row(Index(r));
    };
  }
  return {&g, g.add(std::move(out), na, std::move(back))};
}

// Scalar-loop softmax. Deliberately shares its exact evaluation order (max,
// exp, left-to-right sum, divide) with masked_softmax_rows so that a mask
// allowing everything reproduces the unmasked weights bit-for-bit.
template <typename S>
Var<S> softmax_rows(Var<S> a) {
  Graph<S>& g = *a.g;
  MatX<S> w(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    S m = a.v()(i, 0);
    for (Index j = 1; j < a.cols(); ++j) m = std::max(m, a.v()(i, j));
    S sum = S(0);
    for (Index j = 0; j < a.cols(); ++j) {
      w(i, j) = std::exp(a.v()(i, j) - m);
      sum += w(i, j);
    }
    w.row(i) /= sum;
  }
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      const MatX<S>& w = gg.at(self).value;
      MatX<S>& ga = gg.grad_ref(ai);
      for (Index i = 0; i < w.rows(); ++i) {
        const S dot = go.row(i).dot(w.row(i));
        ga.row(i).array() += w.row(i).array() * (go.row(i).array() - dot);
      }
    };
  }
  return {&g, g.add(std::move(w), na, std::move(back))};
}

// Softmax restricted to entries where allow != 0 (logits elsewhere treated as
// -inf). Rows with no allowed entry become all-zero rows.
template <typename S>
Var<S> masked_softmax_rows(Var<S> a, const MatX<S>& allow) {
  Graph<S>& g = *a.g;
  if (allow.rows() != a.rows() || allow.cols() != a.cols())
    throw ValidationError("masked_softmax_rows: mask shape mismatch");
  MatX<S> w = MatX<S>::Zero(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    S m = std::numeric_limits<S>::lowest();
    bool any = false;
    for (Index j = 0; j < a.cols(); ++j)
      if (allow(i, j) != S(0)) {
        m = std::max(m, a.v()(i, j));
        any = true;
      }
    if (!any) continue;
    S sum = S(0);
    for (Index j = 0; j < a.cols(); ++j)
      if (allow(i, j) != S(0)) {
        w(i, j) = std::exp(a.v()(i, j) - m);
        sum += w(i, j);
      }
    w.row(i) /= sum;
  }
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      const MatX<S>& w = gg.at(self).value;
      MatX<S>& ga = gg.grad_ref(ai);
      for (Index i = 0; i < w.rows(); ++i) {
        const S dot = go.row(i).dot(w.row(i));
        ga.row(i).array() += w.row(i).array() * (go.row(i).array() - dot);
      }
    };
  }
  return {&g, g.add(std::move(w), na, std::move(back))};
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Graph<S>& g = *a.g;
  MatX<S> out = (S(1) / (S(1) + (-a.v().array()).exp())).matrix();
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id](Graph<S>& gg, int self) {
      const auto s = gg.at(self).value.array();
      gg.grad_ref(ai).array() += gg.at(self).grad.array() * s * (S(1) - s);
    };
  }
  return {&g, g.add(std::move(out), na, std::move(back))};
}

// Smooth GELU (tanh form).
template <typename S>
Var<S> gelu(Var<S> a) {
  Graph<S>& g = *a.g;
  const S k = S(0.7978845608028653);  // sqrt(2/pi)
  const S c = S(0.044715);
  auto x = a.v().array();
  MatX<S> out = (S(0.5) * x * (S(1) + (k * (x + c * x * x * x)).tanh())).matrix();
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, k, c](Graph<S>& gg, int self) {
      const auto x = gg.at(ai).value.array();
      const auto t = (k * (x + c * x * x * x)).tanh();
      const auto dt = (S(1) - t * t) * k * (S(1) + S(3) * c * x * x);
      gg.grad_ref(ai).array() +=
          gg.at(self).grad.array() * (S(0.5) * (S(1) + t) + S(0.5) * x * dt);
    };
  }
  return {&g, g.add(std::move(out), na, std::move(back))};
}

template <typename S>
Var<S> exp_cwise(Var<S> a) {
  Graph<S>& g = *a.g;
  MatX<S> out = a.v().array().exp().matrix();
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id](Graph<S>& gg, int self) {
      gg.grad_ref(ai).array() += gg.at(self).grad.array() * gg.at(self).value.array();
    };
  }
  return {&g, g.add(std::move(out), na, std::move(back))};
}

// Natural log; caller must keep inputs strictly positive (use clamp).
template <typename S>
Var<S> log_cwise(Var<S> a) {
  Graph<S>& g = *a.g;
  if ((a.v().array() <= S(0)).any()) throw NumericError("log_cwise: non-positive input");
  MatX<S> out = a.v().array().log().matrix();
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id](Graph<S>& gg, int self) {
      gg.grad_ref(ai).array() += gg.at(self).grad.array() / gg.at(ai).value.array();
    };
  }
  return {&g, g.add(std::move(out), na, std::move(back))};
}

// Elementwise square root with zero subgradient at zero.
template <typename S>
Var<S> sqrt_cwise(Var<S> a) {
  Graph<S>& g = *a.g;
  if ((a.v().array() < S(0)).any()) throw NumericError("sqrt_cwise: negative input");
  MatX<S> out = a.v().array().sqrt().matrix();
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id](Graph<S>& gg, int self) {
      const MatX<S>& sv = gg.at(self).value;
      const MatX<S>& go = gg.at(self).grad;
      MatX<S>& ga = gg.grad_ref(ai);
      for (Index i = 0; i < sv.rows(); ++i)
        for (Index j = 0; j < sv.cols(); ++j)
          if (sv(i, j) > S(0)) ga(i, j) += go(i, j) / (S(2) * sv(i, j));
    };
  }
  return {&g, g.add(std::move(out), na, std::move(back))};
}

// Clamp to [lo, hi]; gradient passes only through non-clamped entries.
template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  Graph<S>& g = *a.g;
  MatX<S> out = a.v().array().max(lo).min(hi).matrix();
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, lo, hi](Graph<S>& gg, int self) {
      const auto x = gg.at(ai).value.array();
      const auto pass = (x > lo && x < hi).template cast<S>();
      gg.grad_ref(ai).array() += gg.at(self).grad.array() * pass;
    };
  }
  return {&g, g.add(std::move(out), na, std::move(back))};
}

// max(a, b) elementwise; ties route the gradient to a.
template <typename S>
Var<S> cmax(Var<S> a, Var<S> b) {
  detail::check_same_graph(a, b);
  Graph<S>& g = *a.g;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("cmax: shape mismatch");
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Graph<S>&, int)> back;
  if (na || nb) {
    back = [ai = a.id, bi = b.id, na, nb](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      const auto av = gg.at(ai).value.array();
      const auto bv = gg.at(bi).value.array();
      const auto a_wins = (av >= bv).template cast<S>();
      if (na) gg.grad_ref(ai).array() += go.array() * a_wins;
      if (nb) gg.grad_ref(bi).array() += go.array() * (S(1) - a_wins);
    };
  }
  return {&g, g.add(MatX<S>(a.v().array().max(b.v().array()).matrix()), na || nb, std::move(back))};
}

template <typename S>
Var<S> cmin(Var<S> a, Var<S> b) {
  detail::check_same_graph(a, b);
  Graph<S>& g = *a.g;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("cmin: shape mismatch");
  const bool na = detail::needs(a), nb = detail::needs(b);
  std::function<void(Graph<S>&, int)> back;
  if (na || nb) {
    back = [ai = a.id, bi = b.id, na, nb](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      const auto av = gg.at(ai).value.array();
      const auto bv = gg.at(bi).value.array();
      const auto a_wins = (av <= bv).template cast<S>();
      if (na) gg.grad_ref(ai).array() += go.array() * a_wins;
      if (nb) gg.grad_ref(bi).array() += go.array() * (S(1) - a_wins);
    };
  }
  return {&g, g.add(MatX<S>(a.v().array().min(b.v().array()).matrix()), na || nb, std::move(back))};
}

template <typename S>
Var<S> cmax_scalar(Var<S> a, S k) {
  Graph<S>& g = *a.g;
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, k](Graph<S>& gg, int self) {
      const auto pass = (gg.at(ai).value.array() > k).template cast<S>();
      gg.grad_ref(ai).array() += gg.at(self).grad.array() * pass;
    };
  }
  return {&g, g.add(MatX<S>(a.v().array().max(k).matrix()), na, std::move(back))};
}

template <typename S>
Var<S> sum_all(Var<S> a) {
  Graph<S>& g = *a.g;
  MatX<S> out(1, 1);
  out(0, 0) = a.v().sum();
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id](Graph<S>& gg, int self) {
      gg.grad_ref(ai).array() += gg.at(self).grad(0, 0);
    };
  }
  return {&g, g.add(std::move(out), na, std::move(back))};
}

template <typename S>
Var<S> mean_all(Var<S> a) {
  return scale(sum_all(a), S(1) / S(a.rows() * a.cols()));
}

// Row-wise layer normalization with affine parameters (1 x C each).
template <typename S>
Var<S> layer_norm_rows(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5)) {
  detail::check_same_graph(x, gamma);
  detail::check_same_graph(x, beta);
  Graph<S>& g = *x.g;
  const Index C = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != C || beta.rows() != 1 || beta.cols() != C)
    throw ValidationError("layer_norm_rows: affine params must be 1 x C");

  MatX<S> xhat(x.rows(), C);
  VecX<S> inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const S mu = x.v().row(i).mean();
    const S var = (x.v().row(i).array() - mu).square().sum() / S(C);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std(i) = is;
    xhat.row(i) = ((x.v().row(i).array() - mu) * is).matrix();
  }
  MatX<S> out = xhat;
  for (Index i = 0; i < out.rows(); ++i)
    out.row(i) = (out.row(i).array() * gamma.v().row(0).array() + beta.v().row(0).array()).matrix();

  const bool nx = detail::needs(x), ng = detail::needs(gamma), nb = detail::needs(beta);
  std::function<void(Graph<S>&, int)> back;
  if (nx || ng || nb) {
    back = [xi = x.id, gi = gamma.id, bi = beta.id, nx, ng, nb, xhat, inv_std,
            C](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      if (ng) {
        MatX<S>& ggam = gg.grad_ref(gi);
        for (Index i = 0; i < go.rows(); ++i)
          ggam.row(0).array() += go.row(i).array() * xhat.row(i).array();
      }
      if (nb) gg.grad_ref(bi) += go.colwise().sum();
      if (nx) {
        const auto gam = gg.at(gi).value.row(0).array();
        MatX<S>& gx = gg.grad_ref(xi);
        for (Index i = 0; i < go.rows(); ++i) {
          const auto dxhat = (go.row(i).array() * gam).matrix();
          const S m1 = dxhat.mean();
          const S m2 = (dxhat.array() * xhat.row(i).array()).mean();
          gx.row(i).array() +=
              inv_std(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2);
        }
      }
    };
  }
  return {&g, g.add(std::move(out), nx || ng || nb, std::move(back))};
}

// Row gather with zero padding: out.row(r) = concat over k of
// a.row(table(r, k)), where table entry -1 contributes zeros. The workhorse
// behind strided convolution (im2col).
template <typename S>
Var<S> im2col(Var<S> a, const MatXi& table) {
  Graph<S>& g = *a.g;
  const Index C = a.cols();
  MatX<S> out = MatX<S>::Zero(table.rows(), table.cols() * C);
  for (Index r = 0; r < table.rows(); ++r)
    for (Index k = 0; k < table.cols(); ++k) {
      const int src = table(r, k);
      if (src >= 0) out.row(r).segment(k * C, C) = a.v().row(src);
    }
  const bool na = detail::needs(a);
  std::function<void(Graph<S>&, int)> back;
  if (na) {
    back = [ai = a.id, table, C](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      MatX<S>& ga = gg.grad_ref(ai);
      for (Index r = 0; r < table.rows(); ++r)
        for (Index k = 0; k < table.cols(); ++k) {
          const int src = table(r, k);
          if (src >= 0) ga.row(src) += go.row(r).segment(k * C, C);
        }
    };
  }
  return {&g, g.add(std::move(out), na, std::move(back))};
}

// Per-channel valid cross-correlation. Inputs hold spatial positions as rows
// (row-major y*w + x) and channels as columns.
template <typename S>
Var<S> depthwise_xcorr(Var<S> tmpl, Var<S> search, int ht, int wt, int hs, int ws) {
  detail::check_same_graph(tmpl, search);
  Graph<S>& g = *tmpl.g;
  if (tmpl.rows() != Index(ht) * wt || search.rows() != Index(hs) * ws)
    throw ValidationError("depthwise_xcorr: row count does not match declared dims");
  if (tmpl.cols() != search.cols()) throw ValidationError("depthwise_xcorr: channel mismatch");
  if (ht > hs || wt > ws) throw ValidationError("depthwise_xcorr: template larger than search");
  const int ho = hs - ht + 1, wo = ws - wt + 1;
  const Index C = tmpl.cols();

  MatX<S> out = MatX<S>::Zero(Index(ho) * wo, C);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      auto row = out.row(Index(oy) * wo + ox);
      for (int ky = 0; ky < ht; ++ky)
        for (int kx = 0; kx < wt; ++kx)
          row += (tmpl.v().row(Index(ky) * wt + kx).array() *
                  search.v().row(Index(oy + ky) * ws + (ox + kx)).array())
                     .matrix();
    }

  const bool nt = detail::needs(tmpl), ns = detail::needs(search);
  std::function<void(Graph<S>&, int)> back;
  if (nt || ns) {
    back = [ti = tmpl.id, si = search.id, nt, ns, ht, wt, hs, ws, ho, wo](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      const MatX<S>& tv = gg.at(ti).value;
      const MatX<S>& sv = gg.at(si).value;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const auto gr = go.row(Index(oy) * wo + ox).array();
          for (int ky = 0; ky < ht; ++ky)
            for (int kx = 0; kx < wt; ++kx) {
              const Index tr = Index(ky) * wt + kx;
              const Index sr = Index(oy + ky) * ws + (ox + kx);
              if (nt) gg.grad_ref(ti).row(tr).array() += gr * sv.row(sr).array();
              if (ns) gg.grad_ref(si).row(sr).array() += gr * tv.row(tr).array();
            }
        }
    };
  }
  return {&g, g.add(std::move(out), nt || ns, std::move(back))};
}

// Forward takes the value of `hard_value`; backward passes gradients to
// `soft` unchanged (straight-through estimator).
template <typename S>
Var<S> straight_through(const MatX<S>& hard_value, Var<S> soft) {
  Graph<S>& g = *soft.g;
  if (hard_value.rows() != soft.rows() || hard_value.cols() != soft.cols())
    throw ValidationError("straight_through: shape mismatch");
  const bool ns = detail::needs(soft);
  std::function<void(Graph<S>&, int)> back;
  if (ns) {
    back = [si = soft.id](Graph<S>& gg, int self) { gg.grad_ref(si) += gg.at(self).grad; };
  }
  return {&g, g.add(MatX<S>(hard_value), ns, std::move(back))};
}

// Pads two-column group labels (2N x 2) to the four-column per-frame layout
// (2N x 4): rows of the first frame occupy columns {0,1}, rows of the second
// frame columns {2,3}.
template <typename S>
Var<S> pad_label_cols(Var<S> p, Index n_first) {
  Graph<S>& g = *p.g;
  if (p.cols() != 2) throw ValidationError("pad_label_cols: labels must have 2 columns");
  if (n_first < 0 || n_first > p.rows()) throw ValidationError("pad_label_cols: bad frame split");
  MatX<S> out = MatX<S>::Zero(p.rows(), 4);
  out.block(0, 0, n_first, 2) = p.v().topRows(n_first);
  out.block(n_first, 2, p.rows() - n_first, 2) = p.v().bottomRows(p.rows() - n_first);
  const bool np = detail::needs(p);
  std::function<void(Graph<S>&, int)> back;
  if (np) {
    back = [pi = p.id, n_first](Graph<S>& gg, int self) {
      const MatX<S>& go = gg.at(self).grad;
      MatX<S>& gp = gg.grad_ref(pi);
      gp.topRows(n_first) += go.block(0, 0, n_first, 2);
      gp.bottomRows(go.rows() - n_first) += go.block(n_first, 2, go.rows() - n_first, 2);
    };
  }
  return {&g, g.add(std::move(out), np, std::move(back))};
}

}  // namespace lftrack::ad
