#pragma once

#include "stosa/common.hpp"
#include "stosa/data.hpp"
#include "stosa/evaluation.hpp"
#include "stosa/model.hpp"
#include "stosa/tape.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace stosa {

/// Decomposition total = bpr + lambda * pvn + beta * l2.
template <class S>
struct LossTerms {
  S bpr = 0;
  S pvn = 0;
  S l2 = 0;
  S total = 0;
  S lambda = 0;
  S beta = 0;
};

/// Hinge that asks the positive-negative item distance to be at least the
/// prediction distance: max(d_pos - d_pos_neg, 0).
template <class S>
S pvn_regularizer(S d_pos, S d_pos_neg) {
  if (d_pos < S(0) || d_pos_neg < S(0)) throw DomainError("pvn_regularizer: distances must be non-negative");
  return std::max(d_pos - d_pos_neg, S(0));
}

/// A window with one sampled negative per valid position (0 at padding).
struct TrainingExample {
  TrainingWindow window;
  std::vector<ItemId> negatives;
};

template <class S>
struct StepResult {
  LossTerms<S> loss;
  std::vector<Mat<S>> grads;  // parameter visit order; empty when not requested
};

/// Loss over all valid positions of every example plus beta * ||theta||^2.
/// The baseline has no pvn term (its scores are not distances).
/// `dropout_rng` null disables dropout.
template <class S>
StepResult<S> step_loss(Model<S>& model, std::span<const TrainingExample> batch, S lambda, S beta,
                        Rng* dropout_rng, bool want_grads = true) {
  using namespace ad;
  if (lambda < S(0) || beta < S(0)) throw ConfigError("step_loss: lambda and beta must be >= 0");
  Tape<S> t;
  BoundWeights bound = bind(t, model, true);
  const bool stosa = model.config.variant == Variant::Stosa;

  std::vector<Var> bpr_terms, pvn_terms;
  for (const auto& ex : batch) {
    const auto& win = ex.window;
    if (ex.negatives.size() != win.length()) throw ShapeError("step_loss: one negative per position is required");
    std::vector<int> idx, pos, neg;
    for (std::size_t p = 0; p < win.length(); ++p) {
      if (!win.mask[p]) continue;
      idx.push_back(static_cast<int>(p));
      pos.push_back(win.targets[p]);
      neg.push_back(ex.negatives[p]);
    }
    if (idx.empty()) continue;
    EncodedVars enc = encode(t, model.config, bound, win, dropout_rng);
    Var z_mean = gather_rows(t, enc.mean, idx);
    if (stosa) {
      const auto& tables = std::get<StosaWeights<Var>>(bound.weights).tables;
      Var z_std = sqrt(t, gather_rows(t, enc.cov, idx));
      Var p_mean = gather_rows(t, tables.item_mean, pos);
      Var n_mean = gather_rows(t, tables.item_mean, neg);
      Var p_std = sqrt(t, elu_plus_one(t, gather_rows(t, tables.item_cov, pos)));
      Var n_std = sqrt(t, elu_plus_one(t, gather_rows(t, tables.item_cov, neg)));
      Var d_pos = add(t, row_sq_dist(t, z_mean, p_mean), row_sq_dist(t, z_std, p_std));
      Var d_neg = add(t, row_sq_dist(t, z_mean, n_mean), row_sq_dist(t, z_std, n_std));
      Var d_pn = add(t, row_sq_dist(t, p_mean, n_mean), row_sq_dist(t, p_std, n_std));
      // -log sigmoid(d_neg - d_pos) = softplus(d_pos - d_neg)
      bpr_terms.push_back(sum(t, softplus(t, sub(t, d_pos, d_neg))));
      pvn_terms.push_back(sum(t, relu(t, sub(t, d_pos, d_pn))));
    } else {
      const auto& item = std::get<DotWeights<Var>>(bound.weights).item;
      Var s_pos = row_dot(t, z_mean, gather_rows(t, item, pos));
      Var s_neg = row_dot(t, z_mean, gather_rows(t, item, neg));
      bpr_terms.push_back(sum(t, softplus(t, sub(t, s_neg, s_pos))));
    }
  }

  auto total_of = [&](const std::vector<Var>& terms) {
    if (terms.empty()) return t.constant(Mat<S>::Zero(1, 1));
    Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(t, acc, terms[i]);
    return acc;
  };
  Var bpr = total_of(bpr_terms);
  Var pvn = total_of(pvn_terms);
  std::vector<Var> squares;
  for (Var v : bound.vars) squares.push_back(sum_squares(t, v));
  Var l2 = total_of(squares);
  Var total = add(t, add(t, bpr, scale(t, pvn, lambda)), scale(t, l2, beta));

  StepResult<S> out;
  out.loss = {t.scalar(bpr), t.scalar(pvn), t.scalar(l2), t.scalar(total), lambda, beta};
  for (auto [name, value] : {std::pair{"bpr", out.loss.bpr}, std::pair{"pvn", out.loss.pvn},
                             std::pair{"l2", out.loss.l2}})
    if (!std::isfinite(value)) throw NumericError(std::string("non-finite loss term '") + name + "'");

  if (want_grads) {
    t.backward(total);
    for (Var v : bound.vars) {
      const auto& val = t.value(v);
      out.grads.push_back(t.has_grad(v) ? t.grad(v) : Mat<S>::Zero(val.rows(), val.cols()));
    }
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
struct AdamState {
  AdamConfig config;
  std::vector<Mat<S>> first;
  std::vector<Mat<S>> second;
  long step = 0;
};

/// Bias-corrected Adam step applied in place.
template <class S>
void adam_update(AdamState<S>& state, Model<S>& model, const std::vector<Mat<S>>& grads) {
  std::size_t i = 0;
  const bool fresh = state.first.empty();
  ++state.step;
  const S b1 = static_cast<S>(state.config.beta1), b2 = static_cast<S>(state.config.beta2);
  const S c1 = S(1) - static_cast<S>(std::pow(state.config.beta1, static_cast<double>(state.step)));
  const S c2 = S(1) - static_cast<S>(std::pow(state.config.beta2, static_cast<double>(state.step)));
  const S lr = static_cast<S>(state.config.lr), eps = static_cast<S>(state.config.eps);
  model.visit([&](const std::string& name, Mat<S>& p) {
    if (i >= grads.size()) throw ShapeError("adam_update: missing gradient for " + name);
    const Mat<S>& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw ShapeError("adam_update: gradient shape for " + name);
    if (fresh) {
      state.first.push_back(Mat<S>::Zero(p.rows(), p.cols()));
      state.second.push_back(Mat<S>::Zero(p.rows(), p.cols()));
    }
    Mat<S>& m = state.first[i];
    Mat<S>& v = state.second[i];
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseAbs2();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    ++i;
  });
  if (i != grads.size()) throw ShapeError("adam_update: gradient count differs from parameter count");
}

struct TrainConfig {
  double lambda = 0.1;
  double beta = 1e-3;
  AdamConfig adam;
  std::size_t batch_size = 256;
  int max_epochs = 200;
  int patience = 50;
  std::uint64_t seed = 42;
  RankMode rank_mode = RankMode::ExcludeSeen;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double bpr = 0;
  double pvn = 0;
  double l2 = 0;
  double val_mrr = 0;
  double elapsed_s = 0;
};

nlohmann::json to_json(const EpochLog& e);

template <class S>
struct TrainResult {
  Model<S> best;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_mrr = -1.0;
  bool diverged = false;
  std::string divergence;
};

/// Mini-batch Adam over shuffled users; keeps the checkpoint with the best
/// validation MRR and stops once it has not improved for `patience` epochs
/// (at least one). Every random draw comes from named substreams of `seed`.
template <class S>
TrainResult<S> train(const SequenceDataset& dataset, ModelConfig model_config, const TrainConfig& config,
                     const std::function<void(const EpochLog&)>& on_epoch = {}) {
  model_config.num_items = dataset.num_items();
  if (config.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  Rng init_rng = substream(config.seed, "init");
  Rng shuffle_rng = substream(config.seed, "shuffle");
  Rng negative_rng = substream(config.seed, "negatives");
  Rng dropout_rng = substream(config.seed, "dropout");

  Model<S> model = init_model<S>(model_config, init_rng);
  AdamState<S> adam{config.adam, {}, {}, 0};

  std::vector<UserId> users;
  std::vector<TrainingWindow> windows(dataset.num_users() + 1);
  for (UserId u = 1; u <= static_cast<UserId>(dataset.num_users()); ++u) {
    windows[u] = make_window(dataset.train(u), static_cast<std::size_t>(model_config.max_len));
    if (windows[u].valid_count() > 0) users.push_back(u);
  }

  TrainResult<S> result{model, {}, 0, -1.0, false, {}};
  const auto start = std::chrono::steady_clock::now();
  int stale = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(users.begin(), users.end(), shuffle_rng);
    EpochLog entry;
    entry.epoch = epoch;
    try {
      for (std::size_t b = 0; b < users.size(); b += config.batch_size) {
        std::vector<TrainingExample> batch;
        for (std::size_t k = b; k < std::min(users.size(), b + config.batch_size); ++k) {
          const UserId u = users[k];
          TrainingExample ex{windows[u], std::vector<ItemId>(windows[u].length(), kPaddingItem)};
          for (std::size_t p = 0; p < ex.window.length(); ++p)
            if (ex.window.mask[p])
              ex.negatives[p] = sample_training_negative(dataset.interacted(u), ex.window.targets[p],
                                                         dataset.num_items(), negative_rng);
          batch.push_back(std::move(ex));
        }
        auto step = step_loss<S>(model, batch, static_cast<S>(config.lambda), static_cast<S>(config.beta),
                                 model_config.dropout > 0.0 ? &dropout_rng : nullptr);
        adam_update(adam, model, step.grads);
        entry.train_loss += static_cast<double>(step.loss.total);
        entry.bpr += static_cast<double>(step.loss.bpr);
        entry.pvn += static_cast<double>(step.loss.pvn);
        entry.l2 = static_cast<double>(step.loss.l2);
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.divergence = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    static const std::vector<int> kMrrOnly{1};
    entry.val_mrr = evaluate(model, dataset, HeldOut::Validation, config.rank_mode, kMrrOnly).mrr;
    entry.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (entry.val_mrr > result.best_val_mrr) {
      result.best_val_mrr = entry.val_mrr;
      result.best_epoch = epoch;
      result.best = model;
      stale = 0;
    } else if (++stale >= std::max(config.patience, 1)) {
      break;
    }
  }
  return result;
}

// Gradient verification -------------------------------------------------------

/// One example per entry of `lengths`: a uniform random item sequence of that
/// length windowed to n, with sampled negatives.
std::vector<TrainingExample> random_examples(std::size_t num_items, std::size_t n, std::span<const std::size_t> lengths,
                                             Rng& rng);

struct GradCheckEntry {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_rel_error = 0.0;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares step_loss gradients with central differences for every entry of
/// every parameter (dropout off).
inline GradCheckReport gradient_check(Model<double>& model, std::span<const TrainingExample> batch, double lambda,
                                      double beta, double h = 1e-5) {
  auto analytic = step_loss<double>(model, batch, lambda, beta, nullptr, true).grads;
  GradCheckReport report;
  std::size_t index = 0;
  std::vector<std::pair<std::string, Mat<double>*>> params;
  model.visit([&](const std::string& name, Mat<double>& m) { params.emplace_back(name, &m); });
  for (auto& [name, m] : params) {
    GradCheckEntry entry{name, static_cast<std::size_t>(m->size()), 0.0, 0.0};
    for (Eigen::Index k = 0; k < m->size(); ++k) {
      const double saved = m->data()[k];
      m->data()[k] = saved + h;
      const double up = step_loss<double>(model, batch, lambda, beta, nullptr, false).loss.total;
      m->data()[k] = saved - h;
      const double down = step_loss<double>(model, batch, lambda, beta, nullptr, false).loss.total;
      m->data()[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[index].data()[k];
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, numeric));
      entry.max_abs_grad = std::max(entry.max_abs_grad, std::abs(a));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(std::move(entry));
    ++index;
  }
  return report;
}

}  // namespace stosa
