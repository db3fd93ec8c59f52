#pragma once

#include "stosa/common.hpp"
#include "stosa/gaussian.hpp"
#include "stosa/tape.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace stosa {

enum class Normalization {
  Softmax,        // softmax over valid causal keys of -distance (default)
  DistanceRatio,  // A_kt / sum_j A_jt with A = -distance
};

/// Stochastic sequence representation: one diagonal Gaussian per position.
template <class S>
struct GaussianSequence {
  Mat<S> mean;  // n x d_half
  Mat<S> cov;   // n x d_half, strictly positive
  std::vector<bool> mask;

  Eigen::Index length() const { return mean.rows(); }
};

template <class S>
using GaussianBatch = std::vector<GaussianSequence<S>>;

/// 1 where query t may attend key k: k <= t and both positions are real.
template <class S>
Mat<S> causal_validity(const std::vector<bool>& mask) {
  const auto n = static_cast<Eigen::Index>(mask.size());
  Mat<S> valid = Mat<S>::Zero(n, n);
  for (Eigen::Index t = 0; t < n; ++t) {
    if (!mask[t]) continue;
    for (Eigen::Index k = 0; k <= t; ++k)
      if (mask[k]) valid(t, k) = S(1);
  }
  return valid;
}

namespace detail {

template <class S>
Mat<S> masked_softmax_rows(const Mat<S>& scores, const Mat<S>& valid) {
  Mat<S> out = Mat<S>::Zero(scores.rows(), scores.cols());
  for (Eigen::Index t = 0; t < scores.rows(); ++t) {
    S best = -std::numeric_limits<S>::infinity();
    for (Eigen::Index k = 0; k < scores.cols(); ++k)
      if (valid(t, k) > S(0)) best = std::max(best, scores(t, k));
    if (!std::isfinite(best)) continue;
    S total = 0;
    for (Eigen::Index k = 0; k < scores.cols(); ++k)
      if (valid(t, k) > S(0)) total += out(t, k) = std::exp(scores(t, k) - best);
    out.row(t) /= total;
  }
  return out;
}

template <class S>
Mat<S> masked_ratio_rows(const Mat<S>& dist, const Mat<S>& valid) {
  Mat<S> out = Mat<S>::Zero(dist.rows(), dist.cols());
  for (Eigen::Index t = 0; t < dist.rows(); ++t) {
    if (!(valid.row(t).array() > S(0)).any()) continue;
    S total = dist.row(t).cwiseProduct(valid.row(t)).sum();
    if (total == S(0))
      throw NormalizationError("distance-ratio normalization: zero denominator at query " + std::to_string(t));
    out.row(t) = dist.row(t).cwiseProduct(valid.row(t)) / total;
  }
  return out;
}

}  // namespace detail

/// Turns an n x n distance matrix into causal attention weights. Rows are
/// queries, columns keys; keys after the query and padding keys get 0.
template <class S>
Mat<S> normalize_attention(const Mat<S>& dist, const std::vector<bool>& mask, Normalization mode) {
  if (dist.rows() != dist.cols() || dist.rows() != static_cast<Eigen::Index>(mask.size()))
    throw ShapeError("normalize_attention: distance matrix must be n x n with an n-entry mask");
  Mat<S> valid = causal_validity<S>(mask);
  if (mode == Normalization::Softmax) return detail::masked_softmax_rows<S>(-dist, valid);
  return detail::masked_ratio_rows<S>(dist, valid);
}

/// Linear combination of Gaussians: means mix with the weights, covariances
/// with the squared weights.
template <class S>
std::pair<Mat<S>, Mat<S>> aggregate(const Mat<S>& weights, const Mat<S>& v_mean, const Mat<S>& v_cov) {
  if (weights.cols() != v_mean.rows() || v_mean.rows() != v_cov.rows() || v_mean.cols() != v_cov.cols())
    throw ShapeError("aggregate: shape mismatch");
  return {weights * v_mean, weights.cwiseAbs2() * v_cov};
}

/// Squared-W2 distance matrices per head; heads split the columns evenly.
template <class S>
std::vector<Mat<S>> multihead_distance(const GaussianSequence<S>& q, const GaussianSequence<S>& k, int heads) {
  if (heads < 1 || q.mean.cols() % heads != 0) throw ShapeError("multihead_distance: heads must divide d_half");
  const Eigen::Index w = q.mean.cols() / heads;
  std::vector<Mat<S>> out;
  for (int h = 0; h < heads; ++h)
    out.push_back(distance_matrix<S>(q.mean.middleCols(h * w, w), q.cov.middleCols(h * w, w),
                                     k.mean.middleCols(h * w, w), k.cov.middleCols(h * w, w)));
  return out;
}

namespace ad {

template <class S>
Var masked_softmax(Tape<S>& t, Var scores, const Mat<S>& valid) {
  Mat<S> out = stosa::detail::masked_softmax_rows<S>(t.value(scores), valid);
  return t.push(out, t.needs_grad(scores), [scores](Tape<S>& tp, int self) {
    const Mat<S>& w = tp.value(Var{self});
    const Mat<S>& g = tp.grad(Var{self});
    Vec<S> inner = g.cwiseProduct(w).rowwise().sum();
    Mat<S> d = g;
    d.colwise() -= inner;
    tp.accumulate(scores, w.cwiseProduct(d));
  });
}

template <class S>
Var masked_ratio(Tape<S>& t, Var dist, Mat<S> valid) {
  Mat<S> out = stosa::detail::masked_ratio_rows<S>(t.value(dist), valid);
  return t.push(out, t.needs_grad(dist), [dist, valid = std::move(valid)](Tape<S>& tp, int self) {
    const Mat<S>& w = tp.value(Var{self});
    const Mat<S>& g = tp.grad(Var{self});
    const Mat<S>& d = tp.value(dist);
    Mat<S> out_grad = Mat<S>::Zero(d.rows(), d.cols());
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      S total = d.row(r).cwiseProduct(valid.row(r)).sum();
      if (total == S(0)) continue;
      S inner = g.row(r).cwiseProduct(w.row(r)).sum();
      out_grad.row(r) = ((g.row(r).array() - inner) / total).matrix().cwiseProduct(valid.row(r));
    }
    tp.accumulate(dist, out_grad);
  });
}

/// Inverted dropout: keeps each entry with probability 1-p and rescales.
template <class S>
Var dropout(Tape<S>& t, Var a, double p, Rng* rng) {
  if (p <= 0.0 || rng == nullptr) return a;
  if (p >= 1.0) throw ConfigError("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const auto& v = t.value(a);
  Mat<S> mask(v.rows(), v.cols());
  const S scale_kept = S(1.0 / (1.0 - p));
  for (Eigen::Index j = 0; j < v.cols(); ++j)
    for (Eigen::Index i = 0; i < v.rows(); ++i) mask(i, j) = keep(*rng) ? scale_kept : S(0);
  return mask_mul(t, a, std::move(mask));
}

}  // namespace ad

/// Weights of one Wasserstein self-attention layer. Instantiated with Mat<S>
/// for storage and with ad::Var once bound to a tape.
template <class T>
struct StosaLayer {
  T wq_mean, wk_mean, wv_mean;
  T wq_cov, wk_cov, wv_cov;
  T ffn_mean_w1, ffn_mean_b1, ffn_mean_w2, ffn_mean_b2;
  T ffn_cov_w1, ffn_cov_b1, ffn_cov_w2, ffn_cov_b2;
  T ln_mean_gain, ln_mean_bias, ln_cov_gain, ln_cov_bias;

  template <class F>
  void visit(F&& f) {
    f("wq_mean", wq_mean);
    f("wk_mean", wk_mean);
    f("wv_mean", wv_mean);
    f("wq_cov", wq_cov);
    f("wk_cov", wk_cov);
    f("wv_cov", wv_cov);
    f("ffn_mean_w1", ffn_mean_w1);
    f("ffn_mean_b1", ffn_mean_b1);
    f("ffn_mean_w2", ffn_mean_w2);
    f("ffn_mean_b2", ffn_mean_b2);
    f("ffn_cov_w1", ffn_cov_w1);
    f("ffn_cov_b1", ffn_cov_b1);
    f("ffn_cov_w2", ffn_cov_w2);
    f("ffn_cov_b2", ffn_cov_b2);
    f("ln_mean_gain", ln_mean_gain);
    f("ln_mean_bias", ln_mean_bias);
    f("ln_cov_gain", ln_cov_gain);
    f("ln_cov_bias", ln_cov_bias);
  }
};

/// Per-forward settings. A null rng disables every dropout site.
template <class S>
struct LayerOptions {
  int heads = 1;
  Normalization normalization = Normalization::Softmax;
  double dropout = 0.0;
  bool attention_dropout = true;
  S layer_norm_eps = S(1e-8);
  Rng* rng = nullptr;
  // When set, receives the normalized (pre-dropout) attention per head.
  std::vector<Mat<S>>* attention_out = nullptr;
};

namespace ad {

struct GaussianVars {
  Var mean;
  Var cov;
};

/// Point-wise feed-forward plus residual on both paths; the covariance path
/// is re-activated with ELU + 1 so it leaves strictly positive.
template <class S>
GaussianVars ffn_block(Tape<S>& t, const StosaLayer<Var>& w, GaussianVars z, const LayerOptions<S>& opt) {
  auto ffn = [&](Var x, Var gain, Var bias, Var w1, Var b1, Var w2, Var b2) {
    Var h = layer_norm(t, x, gain, bias, opt.layer_norm_eps);
    h = elu(t, add_row(t, matmul(t, h, w1), b1));
    h = add_row(t, matmul(t, h, w2), b2);
    return dropout(t, h, opt.dropout, opt.rng);
  };
  Var mean = add(t, z.mean,
                 ffn(z.mean, w.ln_mean_gain, w.ln_mean_bias, w.ffn_mean_w1, w.ffn_mean_b1, w.ffn_mean_w2,
                     w.ffn_mean_b2));
  Var cov = elu_plus_one(
      t, add(t, z.cov,
             ffn(z.cov, w.ln_cov_gain, w.ln_cov_bias, w.ffn_cov_w1, w.ffn_cov_b1, w.ffn_cov_w2, w.ffn_cov_b2)));
  return {mean, cov};
}

/// One Wasserstein self-attention layer: project, pairwise squared W2 per
/// head, causal normalization, Gaussian aggregation, feed-forward.
template <class S>
GaussianVars stosa_layer(Tape<S>& t, const StosaLayer<Var>& w, GaussianVars in, const std::vector<bool>& mask,
                         const LayerOptions<S>& opt) {
  const Eigen::Index dh = t.value(in.mean).cols();
  if (opt.heads < 1 || dh % opt.heads != 0) throw ShapeError("stosa_layer: heads must divide d_half");
  const Eigen::Index hw = dh / opt.heads;

  Var q_mean = matmul(t, in.mean, w.wq_mean);
  Var k_mean = matmul(t, in.mean, w.wk_mean);
  Var v_mean = matmul(t, in.mean, w.wv_mean);
  Var q_cov = elu_plus_one(t, matmul(t, in.cov, w.wq_cov));
  Var k_cov = elu_plus_one(t, matmul(t, in.cov, w.wk_cov));
  Var v_cov = elu_plus_one(t, matmul(t, in.cov, w.wv_cov));
  Var q_std = sqrt(t, q_cov);
  Var k_std = sqrt(t, k_cov);

  const Mat<S> valid = causal_validity<S>(mask);
  std::vector<Var> out_mean, out_cov;
  for (int h = 0; h < opt.heads; ++h) {
    const Eigen::Index c0 = h * hw;
    Var dist = add(t, pairwise_sq_dist(t, col_slice(t, q_mean, c0, hw), col_slice(t, k_mean, c0, hw)),
                   pairwise_sq_dist(t, col_slice(t, q_std, c0, hw), col_slice(t, k_std, c0, hw)));
    Var att;
    if (opt.normalization == Normalization::Softmax)
      att = masked_softmax(t, scale(t, dist, S(-1) / std::sqrt(S(hw))), valid);
    else
      att = masked_ratio(t, dist, valid);
    if (opt.attention_out) opt.attention_out->push_back(t.value(att));
    if (opt.attention_dropout) att = dropout(t, att, opt.dropout, opt.rng);
    out_mean.push_back(matmul(t, att, col_slice(t, v_mean, c0, hw)));
    out_cov.push_back(matmul(t, square(t, att), col_slice(t, v_cov, c0, hw)));
  }
  GaussianVars z{hcat(t, out_mean), hcat(t, out_cov)};
  return ffn_block(t, w, z, opt);
}

}  // namespace ad

/// Binds stored layer weights to a tape, as leaves (trainable) or constants.
template <class S>
StosaLayer<ad::Var> bind_layer(ad::Tape<S>& t, StosaLayer<Mat<S>>& layer, bool trainable,
                               std::vector<ad::Var>* leaves = nullptr) {
  StosaLayer<ad::Var> out;
  std::vector<ad::Var> vars;
  layer.visit([&](const char*, Mat<S>& m) {
    vars.push_back(trainable ? t.leaf(m) : t.constant(m));
    if (leaves) leaves->push_back(vars.back());
  });
  std::size_t i = 0;
  out.visit([&](const char*, ad::Var& v) { v = vars[i++]; });
  return out;
}

/// Value-level feed-forward block (dropout off unless opt.rng is set).
template <class S>
GaussianSequence<S> ffn_block(StosaLayer<Mat<S>> layer, const GaussianSequence<S>& z, const LayerOptions<S>& opt) {
  ad::Tape<S> t;
  auto w = bind_layer(t, layer, false);
  auto out = ad::ffn_block(t, w, {t.constant(z.mean), t.constant(z.cov)}, opt);
  return {t.value(out.mean), t.value(out.cov), z.mask};
}

/// Runs `layers` in sequence over a stochastic input sequence.
/// Position t of the output depends only on input positions <= t.
template <class S>
GaussianSequence<S> encoder_forward(std::vector<StosaLayer<Mat<S>>> layers, const GaussianSequence<S>& input,
                                    const LayerOptions<S>& opt) {
  if (layers.empty()) throw ConfigError("encoder_forward: at least one layer is required");
  ad::Tape<S> t;
  ad::GaussianVars x{t.constant(input.mean), t.constant(input.cov)};
  for (auto& layer : layers) {
    auto w = bind_layer(t, layer, false);
    x = ad::stosa_layer(t, w, x, input.mask, opt);
  }
  return {t.value(x.mean), t.value(x.cov), input.mask};
}

}  // namespace stosa
