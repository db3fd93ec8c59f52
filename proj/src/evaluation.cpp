#include "stosa/evaluation.hpp"

#include <cmath>
#include <string>

namespace stosa {

RankingReport compute_metrics(const std::map<UserId, std::size_t>& per_user_rank, std::span<const int> ns) {
  if (per_user_rank.empty()) throw EvaluationError("compute_metrics: no users to average over");
  RankingReport r;
  r.per_user_rank = per_user_rank;
  r.ns.assign(ns.begin(), ns.end());
  std::sort(r.ns.begin(), r.ns.end());
  r.ns.erase(std::unique(r.ns.begin(), r.ns.end()), r.ns.end());
  for (int n : r.ns) {
    if (n < 1) throw EvaluationError("compute_metrics: cutoffs must be >= 1");
    r.recall[n] = 0.0;
    r.ndcg[n] = 0.0;
  }
  for (const auto& [user, rank] : per_user_rank) {
    if (rank < 1) throw EvaluationError("compute_metrics: rank of user " + std::to_string(user) + " is < 1");
    const double rk = static_cast<double>(rank);
    r.mrr += 1.0 / rk;
    for (int n : r.ns) {
      if (rank <= static_cast<std::size_t>(n)) {
        r.recall[n] += 1.0;
        r.ndcg[n] += 1.0 / std::log2(rk + 1.0);
      }
    }
  }
  const double users = static_cast<double>(per_user_rank.size());
  r.mrr /= users;
  for (int n : r.ns) {
    r.recall[n] /= users;
    r.ndcg[n] /= users;
  }
  return r;
}

BucketReport bucketed_metrics(const std::map<UserId, std::size_t>& per_user_rank, std::span<const int> user_bucket,
                              const std::vector<double>& edges, BucketAxis axis, std::span<const int> ns) {
  BucketReport out;
  out.axis = axis;
  out.edges = edges;
  std::vector<std::map<UserId, std::size_t>> groups(edges.size());
  for (const auto& [user, rank] : per_user_rank) {
    if (user < 0 || static_cast<std::size_t>(user) >= user_bucket.size())
      throw EvaluationError("bucketed_metrics: user " + std::to_string(user) + " has no bucket");
    const int b = user_bucket[static_cast<std::size_t>(user)];
    if (b < 0) continue;
    if (static_cast<std::size_t>(b) >= groups.size()) throw EvaluationError("bucketed_metrics: bucket id out of range");
    groups[static_cast<std::size_t>(b)].emplace(user, rank);
  }
  for (auto& g : groups) {
    out.sizes.push_back(g.size());
    if (g.empty())
      out.reports.emplace_back(std::nullopt);
    else
      out.reports.emplace_back(compute_metrics(g, ns));
  }
  return out;
}

std::vector<int> user_buckets(const SequenceDataset& dataset, BucketAxis axis, std::span<const double> edges,
                              HeldOut which) {
  std::vector<int> out(dataset.num_users() + 1, -1);
  std::vector<std::size_t> counts;
  if (axis == BucketAxis::ItemPopularity) counts = dataset.train_item_counts();
  for (UserId u = 1; u <= static_cast<UserId>(dataset.num_users()); ++u) {
    double value;
    if (axis == BucketAxis::SequenceLength) {
      value = static_cast<double>(dataset.train(u).size());
    } else {
      const ItemId item = which == HeldOut::Test ? dataset.test_item(u) : dataset.validation_item(u);
      value = static_cast<double>(counts[static_cast<std::size_t>(item)]);
    }
    out[static_cast<std::size_t>(u)] = static_cast<int>(bucket_of(value, edges));
  }
  return out;
}

RankingQuery ranking_query(const SequenceDataset& dataset, UserId u, HeldOut which, RankMode mode,
                           std::size_t max_len) {
  auto seq = dataset.sequence(u);
  RankingQuery q;
  ItemId other;
  if (which == HeldOut::Test) {
    q.window = make_window(seq, max_len);
    q.target = dataset.test_item(u);
    other = kPaddingItem;
  } else {
    q.window = make_window(seq.first(seq.size() - 1), max_len);
    q.target = dataset.validation_item(u);
    other = dataset.test_item(u);
  }
  if (mode == RankMode::ExcludeSeen) {
    auto train = dataset.train(u);
    q.exclude.assign(train.begin(), train.end());
    if (which == HeldOut::Test) q.exclude.push_back(dataset.validation_item(u));
  }
  if (other != kPaddingItem) q.exclude.push_back(other);
  std::erase(q.exclude, q.target);
  std::sort(q.exclude.begin(), q.exclude.end());
  q.exclude.erase(std::unique(q.exclude.begin(), q.exclude.end()), q.exclude.end());
  return q;
}

nlohmann::json to_json(const RankingReport& report) {
  nlohmann::json j;
  j["users"] = report.users();
  for (int n : report.ns) {
    j["recall@" + std::to_string(n)] = report.recall.at(n);
    j["ndcg@" + std::to_string(n)] = report.ndcg.at(n);
  }
  j["mrr"] = report.mrr;
  return j;
}

nlohmann::json to_json(const BucketReport& report) {
  nlohmann::json j;
  j["axis"] = report.axis == BucketAxis::SequenceLength ? "sequence_length" : "item_popularity";
  j["buckets"] = nlohmann::json::array();
  for (std::size_t b = 0; b < report.edges.size(); ++b) {
    nlohmann::json entry;
    entry["lo"] = report.edges[b];
    if (b + 1 < report.edges.size())
      entry["hi"] = report.edges[b + 1];
    else
      entry["hi"] = nullptr;
    entry["users"] = report.sizes[b];
    entry["metrics"] = report.reports[b] ? to_json(*report.reports[b]) : nlohmann::json(nullptr);
    j["buckets"].push_back(std::move(entry));
  }
  return j;
}

}  // namespace stosa
