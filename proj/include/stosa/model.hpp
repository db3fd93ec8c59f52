#pragma once

#include "stosa/attention.hpp"
#include "stosa/common.hpp"
#include "stosa/data.hpp"
#include "stosa/embeddings.hpp"
#include "stosa/tape.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace stosa {

enum class Variant { Stosa, DotBaseline };

inline const char* to_string(Variant v) { return v == Variant::Stosa ? "stosa" : "dot"; }
inline const char* to_string(Normalization m) { return m == Normalization::Softmax ? "softmax" : "distance-ratio"; }

struct ModelConfig {
  Variant variant = Variant::Stosa;
  std::size_t num_items = 0;
  int d = 64;        // total width; STOSA gives d/2 to each of mean and covariance
  int max_len = 50;  // window length n
  int layers = 1;
  int heads = 1;
  double dropout = 0.3;
  bool attention_dropout = true;
  Normalization normalization = Normalization::Softmax;
  double layer_norm_eps = 1e-8;

  int width() const { return variant == Variant::Stosa ? d / 2 : d; }
  void validate() const {
    if (d <= 0 || d % 2 != 0) throw ConfigError("d must be a positive even number");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (heads < 1 || width() % heads != 0) throw ConfigError("heads must divide the per-path width");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (num_items < 1) throw ConfigError("model needs at least one item");
  }
};

/// Scaled dot-product self-attention block of the baseline encoder.
template <class T>
struct DotLayer {
  T wq, wk, wv;
  T ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  T ln_attn_gain, ln_attn_bias, ln_ffn_gain, ln_ffn_bias;

  template <class F>
  void visit(F&& f) {
    f("wq", wq);
    f("wk", wk);
    f("wv", wv);
    f("ffn_w1", ffn_w1);
    f("ffn_b1", ffn_b1);
    f("ffn_w2", ffn_w2);
    f("ffn_b2", ffn_b2);
    f("ln_attn_gain", ln_attn_gain);
    f("ln_attn_bias", ln_attn_bias);
    f("ln_ffn_gain", ln_ffn_gain);
    f("ln_ffn_bias", ln_ffn_bias);
  }
};

template <class T>
struct StosaWeights {
  StochasticTables<T> tables;
  std::vector<StosaLayer<T>> layers;

  template <class F>
  void visit(F&& f) {
    tables.visit([&](const char* name, T& x) { f(std::string("tables.") + name, x); });
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].visit([&](const char* name, T& x) { f("layers." + std::to_string(l) + "." + name, x); });
  }
};

template <class T>
struct DotWeights {
  T item;  // (|V|+1) x d
  T pos;   // n x d
  std::vector<DotLayer<T>> layers;
  T final_ln_gain, final_ln_bias;

  template <class F>
  void visit(F&& f) {
    f(std::string("tables.item"), item);
    f(std::string("tables.pos"), pos);
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].visit([&](const char* name, T& x) { f("layers." + std::to_string(l) + "." + name, x); });
    f(std::string("final_ln_gain"), final_ln_gain);
    f(std::string("final_ln_bias"), final_ln_bias);
  }
};

template <class T>
using Weights = std::variant<StosaWeights<T>, DotWeights<T>>;

template <class T, class F>
void visit_weights(Weights<T>& w, F&& f) {
  std::visit([&](auto& x) { x.visit(f); }, w);
}

/// All trainable tensors of either encoder variant.
template <class S>
struct Model {
  ModelConfig config;
  Weights<Mat<S>> weights;

  template <class F>
  void visit(F&& f) {
    visit_weights(weights, f);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<Model*>(this)->visit([&](const std::string& name, Mat<S>& m) { f(name, static_cast<const Mat<S>&>(m)); });
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    visit([&](const std::string&, const Mat<S>& m) { total += static_cast<std::size_t>(m.size()); });
    return total;
  }

  /// Closed-form parameter count for a configuration.
  static std::size_t expected_parameter_count(const ModelConfig& c) {
    const std::size_t v = c.num_items + 1, n = static_cast<std::size_t>(c.max_len);
    const std::size_t w = static_cast<std::size_t>(c.width()), l = static_cast<std::size_t>(c.layers);
    if (c.variant == Variant::Stosa)
      return 2 * v * w + 2 * n * w + l * (6 * w * w + 2 * (2 * w * w + 2 * w) + 4 * w);
    return v * w + n * w + l * (3 * w * w + (2 * w * w + 2 * w) + 4 * w) + 2 * w;
  }

  const StosaWeights<Mat<S>>& stosa() const { return std::get<StosaWeights<Mat<S>>>(weights); }
  const DotWeights<Mat<S>>& dot() const { return std::get<DotWeights<Mat<S>>>(weights); }
};

/// Tables and layer weights ~ N(0, stddev^2); biases 0; layer-norm gains 1.
template <class S>
Model<S> init_model(const ModelConfig& config, Rng& rng, double stddev = 0.02) {
  config.validate();
  const auto w = static_cast<Eigen::Index>(config.width());
  auto square = [&] { return normal_matrix<S>(w, w, stddev, rng); };
  auto zeros = [&] { return Mat<S>(Mat<S>::Zero(1, w)); };
  auto ones = [&] { return Mat<S>(Mat<S>::Ones(1, w)); };

  Model<S> model{config, {}};
  if (config.variant == Variant::Stosa) {
    StosaWeights<Mat<S>> sw;
    sw.tables = init_tables<S>(config.num_items, static_cast<std::size_t>(config.max_len),
                               static_cast<std::size_t>(w), rng, stddev);
    for (int l = 0; l < config.layers; ++l) {
      StosaLayer<Mat<S>> layer;
      layer.wq_mean = square();
      layer.wk_mean = square();
      layer.wv_mean = square();
      layer.wq_cov = square();
      layer.wk_cov = square();
      layer.wv_cov = square();
      layer.ffn_mean_w1 = square();
      layer.ffn_mean_b1 = zeros();
      layer.ffn_mean_w2 = square();
      layer.ffn_mean_b2 = zeros();
      layer.ffn_cov_w1 = square();
      layer.ffn_cov_b1 = zeros();
      layer.ffn_cov_w2 = square();
      layer.ffn_cov_b2 = zeros();
      layer.ln_mean_gain = ones();
      layer.ln_mean_bias = zeros();
      layer.ln_cov_gain = ones();
      layer.ln_cov_bias = zeros();
      sw.layers.push_back(std::move(layer));
    }
    model.weights = std::move(sw);
  } else {
    DotWeights<Mat<S>> dw;
    dw.item = normal_matrix<S>(static_cast<Eigen::Index>(config.num_items + 1), w, stddev, rng);
    dw.pos = normal_matrix<S>(config.max_len, w, stddev, rng);
    for (int l = 0; l < config.layers; ++l) {
      DotLayer<Mat<S>> layer;
      layer.wq = square();
      layer.wk = square();
      layer.wv = square();
      layer.ffn_w1 = square();
      layer.ffn_b1 = zeros();
      layer.ffn_w2 = square();
      layer.ffn_b2 = zeros();
      layer.ln_attn_gain = ones();
      layer.ln_attn_bias = zeros();
      layer.ln_ffn_gain = ones();
      layer.ln_ffn_bias = zeros();
      dw.layers.push_back(std::move(layer));
    }
    dw.final_ln_gain = ones();
    dw.final_ln_bias = zeros();
    model.weights = std::move(dw);
  }
  return model;
}

/// Model weights bound to a tape, plus the bound vars in visit order.
struct BoundWeights {
  Weights<ad::Var> weights;
  std::vector<ad::Var> vars;
};

template <class S>
BoundWeights bind(ad::Tape<S>& t, Model<S>& model, bool trainable) {
  BoundWeights out;
  model.visit([&](const std::string&, Mat<S>& m) { out.vars.push_back(trainable ? t.leaf(m) : t.constant(m)); });
  if (model.config.variant == Variant::Stosa) {
    StosaWeights<ad::Var> w;
    w.layers.resize(static_cast<std::size_t>(model.config.layers));
    out.weights = std::move(w);
  } else {
    DotWeights<ad::Var> w;
    w.layers.resize(static_cast<std::size_t>(model.config.layers));
    out.weights = std::move(w);
  }
  std::size_t i = 0;
  visit_weights(out.weights, [&](const std::string&, ad::Var& v) { v = out.vars[i++]; });
  return out;
}

/// Per-layer, per-head normalized attention captured during a forward pass.
template <class S>
using AttentionTrace = std::vector<std::vector<Mat<S>>>;

struct EncodedVars {
  ad::Var mean;
  ad::Var cov;  // unset for the dot-product baseline
};

namespace detail {

template <class S>
ad::Var dot_layer(ad::Tape<S>& t, const DotLayer<ad::Var>& w, ad::Var x, const std::vector<bool>& mask,
                  const ModelConfig& c, Rng* rng, std::vector<Mat<S>>* attention_out) {
  using namespace ad;
  const Eigen::Index width = t.value(x).cols();
  const Eigen::Index hw = width / c.heads;
  const S eps = static_cast<S>(c.layer_norm_eps);

  Var a = layer_norm(t, x, w.ln_attn_gain, w.ln_attn_bias, eps);
  Var q = matmul(t, a, w.wq);
  Var k = matmul(t, x, w.wk);
  Var v = matmul(t, x, w.wv);
  const Mat<S> valid = causal_validity<S>(mask);
  std::vector<Var> heads;
  for (int h = 0; h < c.heads; ++h) {
    const Eigen::Index c0 = h * hw;
    Var scores = scale(t, matmul_nt(t, col_slice(t, q, c0, hw), col_slice(t, k, c0, hw)), S(1) / std::sqrt(S(hw)));
    Var att = masked_softmax(t, scores, valid);
    if (attention_out) attention_out->push_back(t.value(att));
    if (c.attention_dropout) att = dropout(t, att, c.dropout, rng);
    heads.push_back(matmul(t, att, col_slice(t, v, c0, hw)));
  }
  Var z = add(t, hcat(t, heads), a);
  Var h = layer_norm(t, z, w.ln_ffn_gain, w.ln_ffn_bias, eps);
  h = relu(t, add_row(t, matmul(t, h, w.ffn_w1), w.ffn_b1));
  h = add_row(t, matmul(t, h, w.ffn_w2), w.ffn_b2);
  return add(t, z, dropout(t, h, c.dropout, rng));
}

}  // namespace detail

/// Encodes one window. `rng` non-null enables dropout (training).
template <class S>
EncodedVars encode(ad::Tape<S>& t, const ModelConfig& c, const BoundWeights& bound, const TrainingWindow& window,
                   Rng* rng, AttentionTrace<S>* trace = nullptr) {
  if (static_cast<int>(window.length()) != c.max_len) throw ShapeError("encode: window length differs from model");
  if (trace) trace->clear();
  if (c.variant == Variant::Stosa) {
    const auto& w = std::get<StosaWeights<ad::Var>>(bound.weights);
    LayerOptions<S> opt;
    opt.heads = c.heads;
    opt.normalization = c.normalization;
    opt.dropout = c.dropout;
    opt.attention_dropout = c.attention_dropout;
    opt.layer_norm_eps = static_cast<S>(c.layer_norm_eps);
    opt.rng = rng;
    ad::GaussianVars x = ad::lookup_sequence(t, w.tables, window);
    for (const auto& layer : w.layers) {
      if (trace) {
        trace->emplace_back();
        opt.attention_out = &trace->back();
      }
      x = ad::stosa_layer(t, layer, x, window.mask, opt);
    }
    return {x.mean, x.cov};
  }

  const auto& w = std::get<DotWeights<ad::Var>>(bound.weights);
  for (ItemId id : window.inputs)
    if (id < 0 || id >= t.value(w.item).rows()) throw LookupError("encode: item id out of range");
  ad::Var x = ad::add(t, ad::gather_rows(t, w.item, as_rows(window.inputs)), w.pos);
  for (const auto& layer : w.layers) {
    std::vector<Mat<S>>* out = nullptr;
    if (trace) {
      trace->emplace_back();
      out = &trace->back();
    }
    x = detail::dot_layer(t, layer, x, window.mask, c, rng, out);
  }
  x = ad::layer_norm(t, x, w.final_ln_gain, w.final_ln_bias, static_cast<S>(c.layer_norm_eps));
  return {x, {}};
}

/// Baseline encoder states for every position (rows), dropout off.
template <class S>
Mat<S> baseline_forward(Model<S>& model, const TrainingWindow& window, AttentionTrace<S>* trace = nullptr) {
  if (model.config.variant != Variant::DotBaseline) throw VariantError("baseline_forward: model is not the dot-product baseline");
  ad::Tape<S> t;
  auto bound = bind(t, model, false);
  return t.value(encode(t, model.config, bound, window, nullptr, trace).mean);
}

/// Next-item scores for items 1..|V|, ascending = better for both variants:
/// squared W2 for STOSA, negated inner product for the baseline.
template <class S>
struct ScoreVector {
  Vec<S> values;  // values[j - 1] scores item j

  std::size_t num_items() const { return static_cast<std::size_t>(values.size()); }
  S operator[](ItemId j) const { return values(j - 1); }
};

/// Reusable inference context: binds the weights once per scorer.
template <class S>
class Scorer {
 public:
  explicit Scorer(Model<S>& model) : model_(model), bound_(bind(tape_, model, false)) {
    mark_ = tape_.size();
    if (model.config.variant == Variant::Stosa) {
      const auto& tables = model.stosa().tables;
      const auto v = tables.item_mean.rows() - 1;
      item_mean_ = tables.item_mean.bottomRows(v);
      item_std_ = activate_covariance(tables.item_cov.bottomRows(v)).cwiseSqrt();
    } else {
      item_mean_ = model.dot().item.bottomRows(model.dot().item.rows() - 1);
    }
  }

  /// Final-position state (mean row, covariance row; cov empty for baseline).
  std::pair<RowVec<S>, RowVec<S>> state(const TrainingWindow& window, AttentionTrace<S>* trace = nullptr) {
    if (window.valid_count() == 0) throw EvaluationError("predict_scores: window has no valid positions");
    auto enc = encode(tape_, model_.config, bound_, window, nullptr, trace);
    const auto last = tape_.value(enc.mean).rows() - 1;
    RowVec<S> mean = tape_.value(enc.mean).row(last);
    RowVec<S> cov;
    if (enc.cov.valid()) cov = tape_.value(enc.cov).row(last);
    tape_.truncate(mark_);
    return {std::move(mean), std::move(cov)};
  }

  ScoreVector<S> scores(const TrainingWindow& window) {
    auto [mean, cov] = state(window);
    ScoreVector<S> out;
    if (model_.config.variant == Variant::Stosa) {
      RowVec<S> std_row = cov.cwiseSqrt();
      out.values = (item_mean_.rowwise() - mean).rowwise().squaredNorm() +
                   (item_std_.rowwise() - std_row).rowwise().squaredNorm();
    } else {
      out.values = -(item_mean_ * mean.transpose());
    }
    return out;
  }

 private:
  Model<S>& model_;
  ad::Tape<S> tape_;
  BoundWeights bound_;
  std::size_t mark_ = 0;
  Mat<S> item_mean_;  // rows = items 1..|V|
  Mat<S> item_std_;
};

template <class S>
ScoreVector<S> predict_scores(Model<S>& model, const TrainingWindow& window) {
  return Scorer<S>(model).scores(window);
}

/// The N best items in ascending score order, skipping `exclude` (sorted);
/// ties go to the smaller item id.
template <class S>
std::vector<ItemId> top_n(const ScoreVector<S>& scores, std::size_t n, std::span<const ItemId> exclude = {}) {
  if (n < 1) throw ConfigError("top_n: N must be >= 1");
  std::vector<ItemId> candidates;
  for (ItemId j = 1; j <= static_cast<ItemId>(scores.num_items()); ++j)
    if (!std::binary_search(exclude.begin(), exclude.end(), j)) candidates.push_back(j);
  auto better = [&](ItemId a, ItemId b) { return scores[a] < scores[b] || (scores[a] == scores[b] && a < b); };
  const auto keep = std::min(n, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(), better);
  candidates.resize(keep);
  return candidates;
}

}  // namespace stosa
