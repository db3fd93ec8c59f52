#pragma once

// Minimal reverse-mode differentiation over dense Eigen matrices.
//
// Every operation appends a node holding its forward value and a closure that
// pushes the node's gradient to its inputs. Nodes are created in topological
// order, so backward() is a single reverse sweep.

#include "stosa/common.hpp"
#include "stosa/gaussian.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace stosa::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <class S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Var constant(Mat<S> value) { return push(std::move(value), false, nullptr); }
  Var leaf(Mat<S> value) { return push(std::move(value), true, nullptr); }

  Var push(Mat<S> value, bool needs_grad, Backward back) {
    nodes_.push_back({std::move(value), Mat<S>(), needs_grad ? std::move(back) : nullptr, needs_grad});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  const Mat<S>& value(Var v) const { return nodes_[v.id].value; }
  const Mat<S>& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  bool has_grad(Var v) const { return nodes_[v.id].grad.size() > 0; }
  S scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  /// Drops every node created after `mark` (a previous size()).
  void truncate(std::size_t mark) { nodes_.resize(mark); }

  template <class Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    auto& node = nodes_[v.id];
    if (!node.needs_grad) return;
    if (node.grad.size() == 0)
      node.grad = g;
    else
      node.grad += g;
  }

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable input.
  void backward(Var root) {
    if (value(root).size() != 1) throw ShapeError("backward: root must be a scalar");
    nodes_[root.id].grad = Mat<S>::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      auto& node = nodes_[i];
      if (node.back && node.grad.size() > 0) node.back(*this, i);
    }
  }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    Backward back;
    bool needs_grad;
  };
  std::vector<Node> nodes_;
};

namespace detail {
template <class S>
bool any_grad(const Tape<S>& t, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (t.needs_grad(v)) return true;
  return false;
}
}  // namespace detail

template <class S>
Var add(Tape<S>& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw ShapeError("add: shape mismatch");
  return t.push(t.value(a) + t.value(b), detail::any_grad(t, {a, b}), [a, b](Tape<S>& tp, int self) {
    const Mat<S> g = tp.grad(Var{self});
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <class S>
Var sub(Tape<S>& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw ShapeError("sub: shape mismatch");
  return t.push(t.value(a) - t.value(b), detail::any_grad(t, {a, b}), [a, b](Tape<S>& tp, int self) {
    const Mat<S> g = tp.grad(Var{self});
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

template <class S>
Var scale(Tape<S>& t, Var a, S factor) {
  return t.push(t.value(a) * factor, t.needs_grad(a), [a, factor](Tape<S>& tp, int self) {
    tp.accumulate(a, tp.grad(Var{self}) * factor);
  });
}

/// a (r x c) + row (1 x c) broadcast over rows.
template <class S>
Var add_row(Tape<S>& t, Var a, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols())
    throw ShapeError("add_row: bias shape mismatch");
  Mat<S> out = t.value(a);
  out.rowwise() += t.value(row).row(0);
  return t.push(std::move(out), detail::any_grad(t, {a, row}), [a, row](Tape<S>& tp, int self) {
    const Mat<S> g = tp.grad(Var{self});
    tp.accumulate(a, g);
    tp.accumulate(row, g.colwise().sum());
  });
}

template <class S>
Var matmul(Tape<S>& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows()) throw ShapeError("matmul: inner dimension mismatch");
  return t.push(t.value(a) * t.value(b), detail::any_grad(t, {a, b}), [a, b](Tape<S>& tp, int self) {
    const Mat<S> g = tp.grad(Var{self});
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

/// a * b^T
template <class S>
Var matmul_nt(Tape<S>& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).cols()) throw ShapeError("matmul_nt: inner dimension mismatch");
  return t.push(t.value(a) * t.value(b).transpose(), detail::any_grad(t, {a, b}),
                [a, b](Tape<S>& tp, int self) {
                  const Mat<S> g = tp.grad(Var{self});
                  if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b));
                  if (tp.needs_grad(b)) tp.accumulate(b, g.transpose() * tp.value(a));
                });
}

template <class S>
Var cwise_mul(Tape<S>& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw ShapeError("cwise_mul: shape mismatch");
  return t.push(t.value(a).cwiseProduct(t.value(b)), detail::any_grad(t, {a, b}),
                [a, b](Tape<S>& tp, int self) {
                  const Mat<S> g = tp.grad(Var{self});
                  if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
                  if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
                });
}

template <class S>
Var square(Tape<S>& t, Var a) {
  return t.push(t.value(a).cwiseAbs2(), t.needs_grad(a), [a](Tape<S>& tp, int self) {
    tp.accumulate(a, S(2) * tp.grad(Var{self}).cwiseProduct(tp.value(a)));
  });
}

template <class S>
Var sqrt(Tape<S>& t, Var a) {
  Mat<S> out = t.value(a).cwiseSqrt();
  return t.push(out, t.needs_grad(a), [a](Tape<S>& tp, int self) {
    const Mat<S>& y = tp.value(Var{self});
    tp.accumulate(a, (tp.grad(Var{self}).array() / (S(2) * y.array())).matrix());
  });
}

template <class S>
Var elu(Tape<S>& t, Var a) {
  Mat<S> out = t.value(a).unaryExpr([](S x) { return stosa::elu(x); });
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<S>& tp, int self) {
    Mat<S> d = tp.value(a).unaryExpr([](S x) { return elu_grad(x); });
    tp.accumulate(a, tp.grad(Var{self}).cwiseProduct(d));
  });
}

/// ELU(x) + 1, strictly positive.
template <class S>
Var elu_plus_one(Tape<S>& t, Var a) {
  Mat<S> out = activate_covariance(t.value(a));
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<S>& tp, int self) {
    Mat<S> d = tp.value(a).unaryExpr([](S x) { return elu_grad(x); });
    tp.accumulate(a, tp.grad(Var{self}).cwiseProduct(d));
  });
}

template <class S>
Var relu(Tape<S>& t, Var a) {
  Mat<S> out = t.value(a).cwiseMax(S(0));
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<S>& tp, int self) {
    Mat<S> d = (tp.value(a).array() > S(0)).template cast<S>().matrix();
    tp.accumulate(a, tp.grad(Var{self}).cwiseProduct(d));
  });
}

/// log(1 + e^x), the BPR term -log(sigmoid(-x)).
template <class S>
Var softplus(Tape<S>& t, Var a) {
  Mat<S> out = t.value(a).unaryExpr([](S x) {
    return x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<S>& tp, int self) {
    Mat<S> sig = tp.value(a).unaryExpr([](S x) {
      return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
    });
    tp.accumulate(a, tp.grad(Var{self}).cwiseProduct(sig));
  });
}

template <class S>
Var sum(Tape<S>& t, Var a) {
  Mat<S> out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<S>& tp, int self) {
    const auto& v = tp.value(a);
    tp.accumulate(a, Mat<S>::Constant(v.rows(), v.cols(), tp.grad(Var{self})(0, 0)));
  });
}

template <class S>
Var sum_squares(Tape<S>& t, Var a) {
  Mat<S> out(1, 1);
  out(0, 0) = t.value(a).squaredNorm();
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<S>& tp, int self) {
    tp.accumulate(a, (S(2) * tp.grad(Var{self})(0, 0)) * tp.value(a));
  });
}

/// Rows of `table` at `rows` (repeats allowed); gradients scatter-add back.
template <class S>
Var gather_rows(Tape<S>& t, Var table, std::vector<int> rows) {
  const auto& tv = t.value(table);
  Mat<S> out(static_cast<Eigen::Index>(rows.size()), tv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= tv.rows()) throw LookupError("gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(r)) = tv.row(rows[r]);
  }
  return t.push(std::move(out), t.needs_grad(table), [table, rows = std::move(rows)](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(Var{self});
    const auto& tv2 = tp.value(table);
    Mat<S> full = Mat<S>::Zero(tv2.rows(), tv2.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) full.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
    tp.accumulate(table, full);
  });
}

template <class S>
Var col_slice(Tape<S>& t, Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > t.value(a).cols()) throw ShapeError("col_slice: out of range");
  Mat<S> out = t.value(a).middleCols(start, count);
  return t.push(std::move(out), t.needs_grad(a), [a, start, count](Tape<S>& tp, int self) {
    const auto& av = tp.value(a);
    Mat<S> full = Mat<S>::Zero(av.rows(), av.cols());
    full.middleCols(start, count) = tp.grad(Var{self});
    tp.accumulate(a, full);
  });
}

template <class S>
Var hcat(Tape<S>& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hcat: no inputs");
  if (parts.size() == 1) return parts.front();
  Eigen::Index rows = t.value(parts[0]).rows(), cols = 0;
  bool grad = false;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw ShapeError("hcat: row mismatch");
    cols += t.value(p).cols();
    grad = grad || t.needs_grad(p);
  }
  Mat<S> out(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    out.middleCols(c, t.value(p).cols()) = t.value(p);
    c += t.value(p).cols();
  }
  return t.push(std::move(out), grad, [parts](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(Var{self});
    Eigen::Index c2 = 0;
    for (Var p : parts) {
      const Eigen::Index w = tp.value(p).cols();
      if (tp.needs_grad(p)) tp.accumulate(p, g.middleCols(c2, w));
      c2 += w;
    }
  });
}

/// Row-wise layer normalization with learned gain and bias (both 1 x c).
template <class S>
Var layer_norm(Tape<S>& t, Var x, Var gain, Var bias, S eps) {
  const auto& xv = t.value(x);
  const Eigen::Index c = xv.cols();
  if (t.value(gain).cols() != c || t.value(bias).cols() != c) throw ShapeError("layer_norm: parameter width");
  Vec<S> mean = xv.rowwise().mean();
  Mat<S> centered = xv.colwise() - mean;
  Vec<S> inv_std = ((centered.rowwise().squaredNorm() / S(c)).array() + eps).rsqrt().matrix();
  Mat<S> xhat = inv_std.asDiagonal() * centered;
  Mat<S> out = xhat * t.value(gain).row(0).asDiagonal();
  out.rowwise() += t.value(bias).row(0);
  return t.push(std::move(out), detail::any_grad(t, {x, gain, bias}),
                [x, gain, bias, xhat, inv_std, c](Tape<S>& tp, int self) {
                  const Mat<S>& g = tp.grad(Var{self});
                  tp.accumulate(bias, g.colwise().sum());
                  tp.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                  if (!tp.needs_grad(x)) return;
                  Mat<S> gh = g * tp.value(gain).row(0).asDiagonal();
                  Vec<S> m1 = gh.rowwise().mean();
                  Vec<S> m2 = gh.cwiseProduct(xhat).rowwise().mean();
                  Mat<S> dx = gh;
                  dx.colwise() -= m1;
                  dx -= xhat.cwiseProduct(m2.replicate(1, c));
                  tp.accumulate(x, inv_std.asDiagonal() * dx);
                });
}

/// Pairwise squared Euclidean distance between rows of a and rows of b.
template <class S>
Var pairwise_sq_dist(Tape<S>& t, Var a, Var b) {
  Mat<S> out = pairwise_squared_distance(t.value(a), t.value(b));
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a, b](Tape<S>& tp, int self) {
    Mat<S> g = tp.grad(Var{self});
    // Zero gradient where the value was clamped at 0.
    g = (tp.value(Var{self}).array() > S(0)).select(g, S(0));
    const auto& av = tp.value(a);
    const auto& bv = tp.value(b);
    if (tp.needs_grad(a)) {
      Vec<S> rs = g.rowwise().sum();
      tp.accumulate(a, S(2) * (rs.asDiagonal() * av - g * bv));
    }
    if (tp.needs_grad(b)) {
      Vec<S> cs = g.colwise().sum().transpose();
      tp.accumulate(b, S(2) * (cs.asDiagonal() * bv - g.transpose() * av));
    }
  });
}

/// Per-row squared Euclidean distance ||a_r - b_r||^2, shape r x 1.
template <class S>
Var row_sq_dist(Tape<S>& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw ShapeError("row_sq_dist: shape mismatch");
  Mat<S> out = (t.value(a) - t.value(b)).rowwise().squaredNorm();
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a, b](Tape<S>& tp, int self) {
    Mat<S> diff = tp.value(a) - tp.value(b);
    Mat<S> g = S(2) * (tp.grad(Var{self}).col(0).asDiagonal() * diff);
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

/// Per-row inner product a_r . b_r, shape r x 1.
template <class S>
Var row_dot(Tape<S>& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw ShapeError("row_dot: shape mismatch");
  Mat<S> out = t.value(a).cwiseProduct(t.value(b)).rowwise().sum();
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a, b](Tape<S>& tp, int self) {
    auto gd = tp.grad(Var{self}).col(0).asDiagonal();
    if (tp.needs_grad(a)) tp.accumulate(a, gd * tp.value(b));
    if (tp.needs_grad(b)) tp.accumulate(b, gd * tp.value(a));
  });
}

/// Multiplies by a fixed (non-differentiable) matrix, e.g. a dropout mask.
template <class S>
Var mask_mul(Tape<S>& t, Var a, Mat<S> mask) {
  if (mask.rows() != t.value(a).rows() || mask.cols() != t.value(a).cols())
    throw ShapeError("mask_mul: shape mismatch");
  Mat<S> out = t.value(a).cwiseProduct(mask);
  return t.push(std::move(out), t.needs_grad(a), [a, mask = std::move(mask)](Tape<S>& tp, int self) {
    tp.accumulate(a, tp.grad(Var{self}).cwiseProduct(mask));
  });
}

}  // namespace stosa::ad
