#pragma once

#include "stosa/attention.hpp"
#include "stosa/common.hpp"
#include "stosa/data.hpp"
#include "stosa/gaussian.hpp"
#include "stosa/tape.hpp"

#include <random>
#include <vector>

namespace stosa {

/// Item and positional Gaussian tables. Covariance tables hold
/// pre-activation values; row 0 of the item tables is the padding row.
template <class T>
struct StochasticTables {
  T item_mean;  // (|V|+1) x d_half
  T item_cov;   // (|V|+1) x d_half, raw
  T pos_mean;   // n x d_half
  T pos_cov;    // n x d_half, raw

  template <class F>
  void visit(F&& f) {
    f("item_mean", item_mean);
    f("item_cov", item_cov);
    f("pos_mean", pos_mean);
    f("pos_cov", pos_cov);
  }
};

template <class S>
Mat<S> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat<S> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<S>(dist(rng));
  return m;
}

template <class S>
StochasticTables<Mat<S>> init_tables(std::size_t num_items, std::size_t n, std::size_t d_half, Rng& rng,
                                     double stddev = 0.02) {
  const auto v = static_cast<Eigen::Index>(num_items + 1);
  const auto len = static_cast<Eigen::Index>(n);
  const auto w = static_cast<Eigen::Index>(d_half);
  return {normal_matrix<S>(v, w, stddev, rng), normal_matrix<S>(v, w, stddev, rng),
          normal_matrix<S>(len, w, stddev, rng), normal_matrix<S>(len, w, stddev, rng)};
}

inline std::vector<int> as_rows(const std::vector<ItemId>& ids) { return {ids.begin(), ids.end()}; }

namespace ad {

/// Item + position sums per slot; covariance activated after the sum.
template <class S>
GaussianVars lookup_sequence(Tape<S>& t, const StochasticTables<Var>& tables, const TrainingWindow& window) {
  const auto n = static_cast<Eigen::Index>(window.length());
  const auto rows = t.value(tables.item_mean).rows();
  if (t.value(tables.pos_mean).rows() != n) throw ShapeError("lookup_sequence: window length differs from positional table");
  for (ItemId id : window.inputs)
    if (id < 0 || id >= rows) throw LookupError("lookup_sequence: item id " + std::to_string(id) + " out of range");
  Var mean = add(t, gather_rows(t, tables.item_mean, as_rows(window.inputs)), tables.pos_mean);
  Var cov = elu_plus_one(t, add(t, gather_rows(t, tables.item_cov, as_rows(window.inputs)), tables.pos_cov));
  return {mean, cov};
}

}  // namespace ad

template <class S>
GaussianSequence<S> lookup_sequence(const StochasticTables<Mat<S>>& tables, const TrainingWindow& window) {
  const auto n = static_cast<Eigen::Index>(window.length());
  if (tables.pos_mean.rows() != n) throw ShapeError("lookup_sequence: window length differs from positional table");
  GaussianSequence<S> out;
  out.mean.resize(n, tables.item_mean.cols());
  Mat<S> raw(n, tables.item_cov.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    const ItemId id = window.inputs[t];
    if (id < 0 || id >= tables.item_mean.rows())
      throw LookupError("lookup_sequence: item id " + std::to_string(id) + " out of range");
    out.mean.row(t) = tables.item_mean.row(id) + tables.pos_mean.row(t);
    raw.row(t) = tables.item_cov.row(id) + tables.pos_cov.row(t);
  }
  out.cov = activate_covariance(raw);
  out.mask = window.mask;
  return out;
}

}  // namespace stosa
