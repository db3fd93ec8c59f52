#include "stosa/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace stosa {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

template <class T>
bool parse_int(std::string_view text, T& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::vector<ItemId> parse_id_list(std::string_view text) {
  std::vector<ItemId> ids;
  if (text.empty()) return ids;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto pos = text.find(',', start);
    auto token = text.substr(start, pos == std::string_view::npos ? text.npos : pos - start);
    ItemId id = 0;
    if (!parse_int(token, id)) throw DatasetError("manifest: bad item id '" + std::string(token) + "'");
    ids.push_back(id);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return ids;
}

}  // namespace

ParseResult parse_interactions(std::istream& in) {
  if (!in) throw IngestionError("interaction stream is not readable");
  ParseResult result;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 3) {
      result.malformed.push_back({line_number, "expected at least 3 tab-separated fields"});
      continue;
    }
    if (fields[0].empty() || fields[1].empty()) {
      result.malformed.push_back({line_number, "empty user or item id"});
      continue;
    }
    std::int64_t ts = 0;
    if (!parse_int(fields[2], ts)) {
      result.malformed.push_back({line_number, "timestamp is not an integer"});
      continue;
    }
    result.interactions.push_back({std::string(fields[0]), std::string(fields[1]), ts});
  }
  if (in.bad()) throw IngestionError("read error after line " + std::to_string(line_number));
  return result;
}

std::vector<Interaction> k_core_filter(std::span<const Interaction> interactions, int k,
                                       bool iterative) {
  if (k < 1) throw ConfigError("k-core: k must be >= 1");
  std::vector<Interaction> current(interactions.begin(), interactions.end());
  while (true) {
    std::unordered_map<std::string, std::size_t> per_user;
    for (const auto& x : current) ++per_user[x.user];
    std::vector<Interaction> kept;
    kept.reserve(current.size());
    for (const auto& x : current)
      if (per_user[x.user] >= static_cast<std::size_t>(k)) kept.push_back(x);

    if (iterative) {
      std::unordered_map<std::string, std::size_t> per_item;
      for (const auto& x : kept) ++per_item[x.item];
      std::vector<Interaction> both;
      both.reserve(kept.size());
      for (const auto& x : kept)
        if (per_item[x.item] >= static_cast<std::size_t>(k)) both.push_back(x);
      kept = std::move(both);
    }
    bool stable = kept.size() == current.size();
    current = std::move(kept);
    if (!iterative || stable) return current;
  }
}

SequenceDataset::SequenceDataset(std::vector<std::string> user_names,
                                 std::vector<std::string> item_names,
                                 std::vector<std::vector<ItemId>> sequences)
    : user_names_(std::move(user_names)),
      item_names_(std::move(item_names)),
      sequences_(std::move(sequences)) {
  if (item_names_.empty()) item_names_.emplace_back();
  if (user_names_.size() != sequences_.size())
    throw DatasetError("user vocabulary and sequence count differ");
  const auto max_item = static_cast<ItemId>(num_items());
  for (std::size_t u = 0; u < sequences_.size(); ++u) {
    const auto& seq = sequences_[u];
    if (seq.size() < 3)
      throw DatasetError("user '" + user_names_[u] + "' has " + std::to_string(seq.size()) +
                         " interactions; at least 3 are needed for train/validation/test");
    for (ItemId i : seq)
      if (i < 1 || i > max_item)
        throw DatasetError("user '" + user_names_[u] + "' references item id " + std::to_string(i) +
                           " outside 1.." + std::to_string(max_item));
    std::vector<ItemId> set(seq.begin(), seq.end());
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    interacted_.push_back(std::move(set));
  }
  for (std::size_t u = 0; u < user_names_.size(); ++u)
    if (!user_lookup_.emplace(user_names_[u], static_cast<UserId>(u + 1)).second)
      throw DatasetError("duplicate user '" + user_names_[u] + "'");
  for (std::size_t i = 1; i < item_names_.size(); ++i)
    if (!item_lookup_.emplace(item_names_[i], static_cast<ItemId>(i)).second)
      throw DatasetError("duplicate item '" + item_names_[i] + "'");
}

std::size_t SequenceDataset::num_interactions() const {
  std::size_t total = 0;
  for (const auto& s : sequences_) total += s.size();
  return total;
}

UserId SequenceDataset::user_id(const std::string& name) const {
  auto it = user_lookup_.find(name);
  if (it == user_lookup_.end()) throw LookupError("unknown user '" + name + "'");
  return it->second;
}

ItemId SequenceDataset::item_id(const std::string& name) const {
  auto it = item_lookup_.find(name);
  if (it == item_lookup_.end()) throw LookupError("unknown item '" + name + "'");
  return it->second;
}

std::span<const ItemId> SequenceDataset::train(UserId u) const {
  auto seq = sequence(u);
  return seq.first(seq.size() - 2);
}

ItemId SequenceDataset::validation_item(UserId u) const {
  auto seq = sequence(u);
  return seq[seq.size() - 2];
}

ItemId SequenceDataset::test_item(UserId u) const { return sequence(u).back(); }

std::vector<std::size_t> SequenceDataset::train_item_counts() const {
  std::vector<std::size_t> counts(num_items() + 1, 0);
  for (UserId u = 1; u <= static_cast<UserId>(num_users()); ++u)
    for (ItemId i : train(u)) ++counts[i];
  return counts;
}

SequenceDataset build_sequences(std::span<const Interaction> interactions) {
  std::vector<std::string> users;
  std::vector<std::string> items{std::string()};
  std::unordered_map<std::string, std::size_t> user_index;
  std::unordered_map<std::string, ItemId> item_index;
  std::vector<std::vector<std::pair<std::int64_t, ItemId>>> events;

  for (const auto& x : interactions) {
    auto [uit, new_user] = user_index.emplace(x.user, users.size());
    if (new_user) {
      users.push_back(x.user);
      events.emplace_back();
    }
    auto [iit, new_item] = item_index.emplace(x.item, static_cast<ItemId>(items.size()));
    if (new_item) items.push_back(x.item);
    events[uit->second].emplace_back(x.timestamp, iit->second);
  }

  std::vector<std::vector<ItemId>> sequences;
  sequences.reserve(events.size());
  for (auto& ev : events) {
    std::stable_sort(ev.begin(), ev.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<ItemId> seq;
    seq.reserve(ev.size());
    for (const auto& e : ev) seq.push_back(e.second);
    sequences.push_back(std::move(seq));
  }
  return SequenceDataset(std::move(users), std::move(items), std::move(sequences));
}

std::size_t TrainingWindow::valid_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

TrainingWindow make_window(std::span<const ItemId> sequence, std::size_t n) {
  if (n == 0) throw ConfigError("window length must be >= 1");
  TrainingWindow w;
  w.inputs.assign(n, kPaddingItem);
  w.targets.assign(n, kPaddingItem);
  w.mask.assign(n, false);
  if (sequence.size() < 2) return w;

  auto slice = sequence.last(std::min(sequence.size(), n + 1));
  const std::size_t pairs = slice.size() - 1;
  const std::size_t offset = n - pairs;
  for (std::size_t i = 0; i < pairs; ++i) {
    w.inputs[offset + i] = slice[i];
    w.targets[offset + i] = slice[i + 1];
    w.mask[offset + i] = true;
  }
  return w;
}

TrainingWindow next_item_window(std::span<const ItemId> sequence, std::size_t n) {
  if (n == 0) throw ConfigError("window length must be >= 1");
  TrainingWindow w;
  w.inputs.assign(n, kPaddingItem);
  w.targets.assign(n, kPaddingItem);
  w.mask.assign(n, false);
  auto slice = sequence.last(std::min(sequence.size(), n));
  const std::size_t offset = n - slice.size();
  for (std::size_t i = 0; i < slice.size(); ++i) {
    w.inputs[offset + i] = slice[i];
    w.mask[offset + i] = true;
  }
  return w;
}

ItemId sample_negative(std::span<const ItemId> interacted, std::size_t num_items, Rng& rng) {
  // `interacted` is sorted and unique; count only in-vocabulary entries.
  std::size_t taken = 0;
  for (ItemId i : interacted)
    if (i >= 1 && static_cast<std::size_t>(i) <= num_items) ++taken;
  if (taken >= num_items) throw SamplingError("user has interacted with every item; no negative exists");

  std::uniform_int_distribution<ItemId> pick(1, static_cast<ItemId>(num_items));
  if (taken * 2 < num_items) {
    // Rejection is cheap when the complement is large.
    while (true) {
      ItemId c = pick(rng);
      if (!std::binary_search(interacted.begin(), interacted.end(), c)) return c;
    }
  }
  // Dense histories: draw a rank in the complement and walk to it.
  std::uniform_int_distribution<std::size_t> rank(0, num_items - taken - 1);
  std::size_t r = rank(rng);
  ItemId candidate = 1;
  auto it = interacted.begin();
  while (true) {
    while (it != interacted.end() && *it < candidate) ++it;
    if (it == interacted.end() || *it != candidate) {
      if (r == 0) return candidate;
      --r;
    }
    ++candidate;
  }
}

ItemId sample_training_negative(std::span<const ItemId> interacted, ItemId positive, std::size_t num_items, Rng& rng) {
  if (interacted.size() < num_items) return sample_negative(interacted, num_items, rng);
  const ItemId only[] = {positive};
  return sample_negative(only, num_items, rng);
}

std::size_t bucket_of(double value, std::span<const double> edges) {
  if (edges.empty()) throw ConfigError("bucket edges are empty");
  auto it = std::upper_bound(edges.begin(), edges.end(), value);
  if (it == edges.begin()) return 0;
  return static_cast<std::size_t>(std::distance(edges.begin(), it) - 1);
}

std::vector<std::size_t> BucketAssignment::sizes() const {
  std::vector<std::size_t> out(num_buckets(), 0);
  for (int b : bucket)
    if (b >= 0) ++out[static_cast<std::size_t>(b)];
  return out;
}

BucketAssignment bucketize(const SequenceDataset& dataset, BucketAxis axis,
                           std::span<const double> edges) {
  if (edges.empty()) throw ConfigError("bucket edges are empty");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw ConfigError("bucket edges must be strictly increasing");

  BucketAssignment out;
  out.axis = axis;
  out.edges.assign(edges.begin(), edges.end());
  if (axis == BucketAxis::SequenceLength) {
    out.bucket.assign(dataset.num_users() + 1, -1);
    for (UserId u = 1; u <= static_cast<UserId>(dataset.num_users()); ++u)
      out.bucket[u] = static_cast<int>(bucket_of(static_cast<double>(dataset.train(u).size()), edges));
  } else {
    auto counts = dataset.train_item_counts();
    out.bucket.assign(dataset.num_items() + 1, -1);
    for (std::size_t i = 1; i < counts.size(); ++i)
      if (counts[i] > 0) out.bucket[i] = static_cast<int>(bucket_of(static_cast<double>(counts[i]), edges));
  }
  return out;
}

std::vector<double> quartile_edges(const SequenceDataset& dataset, BucketAxis axis) {
  std::vector<double> values;
  if (axis == BucketAxis::SequenceLength) {
    for (UserId u = 1; u <= static_cast<UserId>(dataset.num_users()); ++u)
      values.push_back(static_cast<double>(dataset.train(u).size()));
  } else {
    auto counts = dataset.train_item_counts();
    for (std::size_t i = 1; i < counts.size(); ++i)
      if (counts[i] > 0) values.push_back(static_cast<double>(counts[i]));
  }
  std::vector<double> edges{0.0};
  if (values.empty()) return edges;
  std::sort(values.begin(), values.end());
  for (double q : {0.25, 0.5, 0.75}) {
    double v = values[static_cast<std::size_t>(q * static_cast<double>(values.size() - 1) + 0.5)];
    if (v > edges.back()) edges.push_back(v);
  }
  return edges;
}

DatasetStats dataset_stats(const SequenceDataset& dataset) {
  DatasetStats s;
  s.users = dataset.num_users();
  s.items = dataset.num_items();
  s.interactions = dataset.num_interactions();
  if (s.users > 0 && s.items > 0) {
    s.density = static_cast<double>(s.interactions) / (static_cast<double>(s.users) * static_cast<double>(s.items));
    s.avg_per_user = static_cast<double>(s.interactions) / static_cast<double>(s.users);
  }
  return s;
}

void write_manifest(std::ostream& out, const SequenceDataset& dataset) {
  out << kManifestHeader << '\n';
  out << "#users\t" << dataset.num_users() << "\titems\t" << dataset.num_items() << "\tinteractions\t"
      << dataset.num_interactions() << '\n';
  for (ItemId i = 1; i <= static_cast<ItemId>(dataset.num_items()); ++i)
    out << "item\t" << i << '\t' << dataset.item_name(i) << '\n';
  for (UserId u = 1; u <= static_cast<UserId>(dataset.num_users()); ++u) {
    out << "user\t" << u << '\t' << dataset.user_name(u) << '\t';
    auto train = dataset.train(u);
    for (std::size_t k = 0; k < train.size(); ++k) out << (k ? "," : "") << train[k];
    out << '\t' << dataset.validation_item(u) << '\t' << dataset.test_item(u) << '\n';
  }
}

SequenceDataset read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw DatasetError("manifest: missing '" + std::string(kManifestHeader) + "' header");
  std::vector<std::string> users;
  std::vector<std::string> items{std::string()};
  std::vector<std::vector<ItemId>> sequences;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line[0] == '#') continue;
    auto f = split_tabs(line);
    auto where = " at manifest line " + std::to_string(line_number);
    if (f[0] == "item" && f.size() == 3) {
      ItemId id = 0;
      if (!parse_int(f[1], id) || id != static_cast<ItemId>(items.size()))
        throw DatasetError("item ids must be consecutive from 1" + where);
      items.emplace_back(f[2]);
    } else if (f[0] == "user" && f.size() == 6) {
      UserId id = 0;
      if (!parse_int(f[1], id) || id != static_cast<UserId>(users.size() + 1))
        throw DatasetError("user ids must be consecutive from 1" + where);
      users.emplace_back(f[2]);
      auto seq = parse_id_list(f[3]);
      ItemId val = 0, test = 0;
      if (!parse_int(f[4], val) || !parse_int(f[5], test)) throw DatasetError("bad split ids" + where);
      seq.push_back(val);
      seq.push_back(test);
      sequences.push_back(std::move(seq));
    } else {
      throw DatasetError("unrecognized record" + where);
    }
  }
  return SequenceDataset(std::move(users), std::move(items), std::move(sequences));
}

SequenceDataset load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open manifest '" + path + "'");
  return read_manifest(in);
}

}  // namespace stosa
