#pragma once

#include "stosa/common.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace stosa {

/// One (user, item, timestamp) event as read from a log.
struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

struct MalformedLine {
  std::size_t line_number = 0;  // 1-based
  std::string reason;
};

struct ParseResult {
  std::vector<Interaction> interactions;
  std::vector<MalformedLine> malformed;
};

/// Reads tab-separated `user<TAB>item<TAB>timestamp[<TAB>ignored...]` records.
/// Malformed lines are reported in the result rather than dropped silently.
ParseResult parse_interactions(std::istream& in);

/// Keeps users with at least `k` interactions (repeats count). With
/// `iterative` set, alternates user- and item-side filtering until stable.
std::vector<Interaction> k_core_filter(std::span<const Interaction> interactions, int k,
                                       bool iterative = false);

/// Per-user chronological sequences with dense vocabularies.
///
/// Users are numbered 1..|U| and items 1..|V| in order of first appearance in
/// the input; item 0 is padding. For every user the last element of the
/// sequence is the test item and the second-to-last the validation item.
class SequenceDataset {
 public:
  SequenceDataset() = default;
  SequenceDataset(std::vector<std::string> user_names, std::vector<std::string> item_names,
                  std::vector<std::vector<ItemId>> sequences);

  std::size_t num_users() const { return user_names_.size(); }
  std::size_t num_items() const { return item_names_.size() - 1; }
  std::size_t num_interactions() const;

  const std::string& user_name(UserId u) const { return user_names_.at(u - 1); }
  const std::string& item_name(ItemId i) const { return item_names_.at(i); }
  UserId user_id(const std::string& name) const;
  ItemId item_id(const std::string& name) const;

  std::span<const ItemId> sequence(UserId u) const { return sequences_.at(u - 1); }
  std::span<const ItemId> train(UserId u) const;
  ItemId validation_item(UserId u) const;
  ItemId test_item(UserId u) const;

  /// Train + validation + test item sets, sorted and deduplicated.
  const std::vector<ItemId>& interacted(UserId u) const { return interacted_.at(u - 1); }

  /// Number of occurrences of each item in train portions (index = item id).
  std::vector<std::size_t> train_item_counts() const;

 private:
  std::vector<std::string> user_names_;
  std::vector<std::string> item_names_;  // [0] is the padding placeholder
  std::vector<std::vector<ItemId>> sequences_;
  std::vector<std::vector<ItemId>> interacted_;
  std::unordered_map<std::string, UserId> user_lookup_;
  std::unordered_map<std::string, ItemId> item_lookup_;
};

/// Sorts each user's events stably by timestamp and assigns dense ids.
/// Throws DatasetError if a user has fewer than 3 interactions.
SequenceDataset build_sequences(std::span<const Interaction> interactions);

/// Fixed-length, left-padded next-item training window.
struct TrainingWindow {
  std::vector<ItemId> inputs;
  std::vector<ItemId> targets;
  std::vector<bool> mask;

  std::size_t length() const { return inputs.size(); }
  std::size_t valid_count() const;
};

/// Keeps the most recent min(len, n+1) items: inputs are all but the last of
/// that slice, targets all but the first, right-aligned and padded with 0.
TrainingWindow make_window(std::span<const ItemId> sequence, std::size_t n);

/// Window whose inputs are the last n items of `sequence`, for predicting the
/// item that follows the whole history. Targets are left as padding.
TrainingWindow next_item_window(std::span<const ItemId> sequence, std::size_t n);

/// Uniform draw from items 1..num_items not in `interacted` (sorted).
ItemId sample_negative(std::span<const ItemId> interacted, std::size_t num_items, Rng& rng);

/// Negative for one training position. Users who have interacted with every
/// item fall back to any item other than the position's positive.
ItemId sample_training_negative(std::span<const ItemId> interacted, ItemId positive, std::size_t num_items, Rng& rng);

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

/// Index i such that edges[i] <= value < edges[i+1]; the last bucket is
/// unbounded above. Values below edges[0] map to bucket 0.
std::size_t bucket_of(double value, std::span<const double> edges);

enum class BucketAxis { SequenceLength, ItemPopularity };

/// Bucket assignment keyed by user id (sequence length axis) or item id
/// (popularity axis). Entities that are not bucketed hold -1.
struct BucketAssignment {
  BucketAxis axis = BucketAxis::SequenceLength;
  std::vector<double> edges;
  std::vector<int> bucket;  // index = user id or item id; [0] unused

  std::size_t num_buckets() const { return edges.size(); }
  std::vector<std::size_t> sizes() const;
};

/// Users by train-sequence length, or items with at least one train
/// interaction by train popularity. Throws ConfigError unless edges are
/// strictly increasing.
BucketAssignment bucketize(const SequenceDataset& dataset, BucketAxis axis,
                           std::span<const double> edges);

/// Quartile edges of the empirical distribution along `axis`, starting at 0
/// and deduplicated.
std::vector<double> quartile_edges(const SequenceDataset& dataset, BucketAxis axis);

// Split manifest --------------------------------------------------------------

inline constexpr std::string_view kManifestHeader = "#stosa-split v1";

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double density = 0.0;
  double avg_per_user = 0.0;
};

DatasetStats dataset_stats(const SequenceDataset& dataset);

/// Text manifest: header line, a stats line, one `item` line per item and one
/// `user` line per user carrying train ids, validation id and test id.
void write_manifest(std::ostream& out, const SequenceDataset& dataset);
SequenceDataset read_manifest(std::istream& in);

SequenceDataset load_manifest(const std::string& path);

}  // namespace stosa
