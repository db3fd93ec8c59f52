#pragma once

#include "stosa/common.hpp"
#include "stosa/data.hpp"
#include "stosa/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace stosa {

/// 1 + number of candidates scoring strictly better than `target`, counting
/// equal scores with a smaller id as better (same order as top_n).
/// `exclude` is sorted; the target itself must not be excluded.
template <class S>
std::size_t rank_of(const ScoreVector<S>& scores, ItemId target, std::span<const ItemId> exclude = {}) {
  if (target < 1 || target > static_cast<ItemId>(scores.num_items()))
    throw EvaluationError("rank_of: target item out of range");
  if (std::binary_search(exclude.begin(), exclude.end(), target))
    throw EvaluationError("rank_of: target item is excluded from the candidate set");
  const S ts = scores[target];
  std::size_t rank = 1;
  for (ItemId j = 1; j <= static_cast<ItemId>(scores.num_items()); ++j) {
    if (j == target || std::binary_search(exclude.begin(), exclude.end(), j)) continue;
    const S s = scores[j];
    if (s < ts || (s == ts && j < target)) ++rank;
  }
  return rank;
}

struct RankingReport {
  std::map<UserId, std::size_t> per_user_rank;
  std::vector<int> ns;
  std::map<int, double> recall;
  std::map<int, double> ndcg;
  double mrr = 0.0;

  std::size_t users() const { return per_user_rank.size(); }
};

/// Recall@N, NDCG@N (single relevant item, 1/log2(rank+1)) and MRR averaged
/// over users. Throws EvaluationError on an empty rank set or a rank < 1.
RankingReport compute_metrics(const std::map<UserId, std::size_t>& per_user_rank, std::span<const int> ns);

struct BucketReport {
  BucketAxis axis = BucketAxis::SequenceLength;
  std::vector<double> edges;
  std::vector<std::size_t> sizes;                   // users per bucket
  std::vector<std::optional<RankingReport>> reports;  // nullopt for empty buckets
};

/// Metrics per bucket. `user_bucket[u]` is the bucket of user u (-1 skips).
BucketReport bucketed_metrics(const std::map<UserId, std::size_t>& per_user_rank, std::span<const int> user_bucket,
                              const std::vector<double>& edges, BucketAxis axis, std::span<const int> ns);

enum class HeldOut { Validation, Test };
enum class RankMode { ExcludeSeen, RankAll };

inline const char* to_string(RankMode m) { return m == RankMode::ExcludeSeen ? "exclude-seen" : "rank-all"; }

/// Per-user bucket ids: by train length, or by the train popularity of the
/// user's held-out item (items never seen in training fall into bucket 0).
std::vector<int> user_buckets(const SequenceDataset& dataset, BucketAxis axis, std::span<const double> edges,
                              HeldOut which);

/// Input window and excluded candidates used to rank a user's held-out item.
/// The test window ends at the validation item; the validation window ends at
/// the last train item. The other held-out item is never a candidate.
struct RankingQuery {
  TrainingWindow window;
  ItemId target = 0;
  std::vector<ItemId> exclude;  // sorted
};

RankingQuery ranking_query(const SequenceDataset& dataset, UserId u, HeldOut which, RankMode mode,
                           std::size_t max_len);

template <class S>
std::map<UserId, std::size_t> rank_users(Model<S>& model, const SequenceDataset& dataset, HeldOut which,
                                         RankMode mode) {
  Scorer<S> scorer(model);
  std::map<UserId, std::size_t> ranks;
  for (UserId u = 1; u <= static_cast<UserId>(dataset.num_users()); ++u) {
    auto q = ranking_query(dataset, u, which, mode, static_cast<std::size_t>(model.config.max_len));
    ranks[u] = rank_of(scorer.scores(q.window), q.target, q.exclude);
  }
  return ranks;
}

template <class S>
RankingReport evaluate(Model<S>& model, const SequenceDataset& dataset, HeldOut which, RankMode mode,
                       std::span<const int> ns) {
  return compute_metrics(rank_users(model, dataset, which, mode), ns);
}

nlohmann::json to_json(const RankingReport& report);
nlohmann::json to_json(const BucketReport& report);

}  // namespace stosa
