#pragma once

#include "stosa/common.hpp"

#include <cmath>
#include <string>

namespace stosa {

template <class S>
S elu(S x) {
  return x > S(0) ? x : std::expm1(x);
}

/// d/dx ELU(x) with alpha = 1.
template <class S>
S elu_grad(S x) {
  return x > S(0) ? S(1) : std::exp(x);
}

/// ELU(raw) + 1 elementwise. Maps the reals onto (0, inf), monotone.
template <class Derived>
Mat<typename Derived::Scalar> activate_covariance(const Eigen::MatrixBase<Derived>& raw) {
  using S = typename Derived::Scalar;
  if (!raw.allFinite()) throw NumericError("activate_covariance: non-finite input");
  Mat<S> out = raw.unaryExpr([](S x) { return elu(x) + S(1); });
  // Far enough into the negative tail expm1(x) + 1 underflows to zero.
  out = out.cwiseMax(std::numeric_limits<S>::min());
  return out;
}

/// Squared 2-Wasserstein distance between diagonal Gaussians,
/// ||mu1 - mu2||^2 + ||sqrt(cov1) - sqrt(cov2)||^2.
template <class A, class B, class C, class D>
typename A::Scalar w2_squared_diag(const Eigen::MatrixBase<A>& mu1, const Eigen::MatrixBase<B>& cov1,
                                   const Eigen::MatrixBase<C>& mu2, const Eigen::MatrixBase<D>& cov2) {
  using S = typename A::Scalar;
  if (mu1.size() != cov1.size() || mu2.size() != cov2.size() || mu1.size() != mu2.size())
    throw ShapeError("w2_squared_diag: dimension mismatch");
  if ((cov1.array() <= S(0)).any() || (cov2.array() <= S(0)).any())
    throw DomainError("w2_squared_diag: covariance entries must be strictly positive");
  S mean_term = (mu1 - mu2).squaredNorm();
  S cov_term = (cov1.array().sqrt() - cov2.array().sqrt()).matrix().squaredNorm();
  return mean_term + cov_term;
}

/// Pairwise squared Euclidean distances between the rows of `a` (queries) and
/// `b` (keys) via ||a||^2 + ||b||^2 - 2 a.b, clamped at zero.
template <class A, class B>
Mat<typename A::Scalar> pairwise_squared_distance(const Eigen::MatrixBase<A>& a,
                                                  const Eigen::MatrixBase<B>& b) {
  using S = typename A::Scalar;
  if (a.cols() != b.cols()) throw ShapeError("pairwise_squared_distance: column mismatch");
  Vec<S> an = a.rowwise().squaredNorm();
  Vec<S> bn = b.rowwise().squaredNorm();
  Mat<S> d = (-S(2)) * (a * b.transpose());
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(S(0));
}

/// Batched squared W2 between every query row and every key row:
/// entry (t, k) = W2^2(N(q_mean_t, q_cov_t), N(k_mean_k, k_cov_k)).
/// Costs two n x n x d products instead of n^2 scalar calls.
template <class S>
Mat<S> distance_matrix(const Mat<S>& q_mean, const Mat<S>& q_cov, const Mat<S>& k_mean,
                       const Mat<S>& k_cov) {
  if (q_mean.rows() != q_cov.rows() || q_mean.cols() != q_cov.cols() || k_mean.rows() != k_cov.rows() ||
      k_mean.cols() != k_cov.cols() || q_mean.cols() != k_mean.cols())
    throw ShapeError("distance_matrix: query/key shapes differ");
  if ((q_cov.array() <= S(0)).any() || (k_cov.array() <= S(0)).any())
    throw DomainError("distance_matrix: covariance entries must be strictly positive");
  Mat<S> qs = q_cov.cwiseSqrt();
  Mat<S> ks = k_cov.cwiseSqrt();
  return pairwise_squared_distance(q_mean, k_mean) + pairwise_squared_distance(qs, ks);
}

}  // namespace stosa
