// Command-line front end: prepare, train, eval, compare, recommend, export,
// gradcheck, plus a synth helper that writes the synthetic datasets as TSV.

#include "stosa/checkpoint.hpp"
#include "stosa/config.hpp"
#include "stosa/data.hpp"
#include "stosa/evaluation.hpp"
#include "stosa/model.hpp"
#include "stosa/synthetic.hpp"
#include "stosa/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stosa;

namespace {

using Real = float;  // training and inference precision

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<double> parse_edges(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("bucket edges: cannot parse '" + part + "'");
    }
  }
  return out;
}

/// Config file (optional) plus `--key value` overrides; flags win.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", file, "flat `key = value` config file");
    for (const auto& key : RunConfig::keys()) {
      std::string flag = key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      cmd.add_option("--" + flag, values[key], "override config key '" + key + "'");
    }
  }

  RunConfig resolve() const {
    RunConfig c = file.empty() ? RunConfig{} : RunConfig::load(file);
    for (const auto& [key, value] : values)
      if (!value.empty()) c.set(key, value);
    c.validate();
    return c;
  }
};

SequenceDataset load_dataset(const std::string& manifest) {
  if (manifest.empty()) throw ConfigError("no manifest given (set `manifest` in the config or pass --manifest)");
  return load_manifest(manifest);
}

json stats_json(const DatasetStats& s) {
  return {{"users", s.users},
          {"items", s.items},
          {"interactions", s.interactions},
          {"density", s.density},
          {"avg_per_user", s.avg_per_user}};
}

// prepare ------------------------------------------------------------------------

struct PrepareArgs {
  std::string input;
  std::string out_dir;
  int k = 5;
  bool iterative = false;
};

int cmd_prepare(const PrepareArgs& a) {
  std::ifstream in(a.input, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + a.input + "'");
  auto parsed = parse_interactions(in);
  for (const auto& m : parsed.malformed)
    std::cerr << "warning: line " << m.line_number << " skipped: " << m.reason << '\n';

  auto kept = k_core_filter(parsed.interactions, a.k, a.iterative);
  // Leave-one-out needs train, validation and test items.
  std::map<std::string, std::size_t> counts;
  for (const auto& x : kept) ++counts[x.user];
  std::vector<Interaction> usable;
  std::size_t short_users = 0;
  for (const auto& [user, n] : counts) short_users += n < 3;
  for (const auto& x : kept)
    if (counts[x.user] >= 3) usable.push_back(x);
  if (short_users > 0)
    std::cerr << "warning: dropped " << short_users << " users with fewer than 3 interactions after filtering\n";

  SequenceDataset dataset = build_sequences(usable);
  if (dataset.num_users() == 0) std::cerr << "warning: no users survive " << a.k << "-core filtering; manifest is empty\n";

  const fs::path dir(a.out_dir);
  std::ostringstream manifest;
  write_manifest(manifest, dataset);
  write_text(dir / "split.manifest", manifest.str());
  json stats = stats_json(dataset_stats(dataset));
  stats["k"] = a.k;
  stats["iterative_k_core"] = a.iterative;
  stats["malformed_lines"] = parsed.malformed.size();
  stats["raw_interactions"] = parsed.interactions.size();
  write_json(dir / "stats.json", stats);
  std::cout << stats.dump() << '\n';
  return 0;
}

// train --------------------------------------------------------------------------

struct TrainOutcome {
  Checkpoint<Real> checkpoint;
  TrainResult<Real> result;
};

TrainOutcome run_training(const RunConfig& config, const SequenceDataset& dataset) {
  if (dataset.num_users() == 0) throw DatasetError("manifest has no users");
  const fs::path log_path(config.log);
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path);
  if (!log) throw ConfigError("cannot open log '" + config.log + "'");
  auto result = train<Real>(dataset, config.model_config(dataset.num_items()), config.train_config(),
                            [&](const EpochLog& e) { log << to_json(e).dump() << '\n' << std::flush; });
  json provenance = {{"manifest", config.manifest},
                     {"log", config.log},
                     {"checkpoint", config.checkpoint},
                     {"best_epoch", result.best_epoch},
                     {"best_val_mrr", result.best_val_mrr},
                     {"epochs_run", result.log.size()},
                     {"diverged", result.diverged},
                     {"parameters", result.best.parameter_count()}};
  if (result.diverged) provenance["divergence"] = result.divergence;
  Checkpoint<Real> ckpt{result.best, config, provenance};
  const fs::path ckpt_path(config.checkpoint);
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  save_checkpoint(config.checkpoint, ckpt);
  return {std::move(ckpt), std::move(result)};
}

int cmd_train(const ConfigFlags& flags) {
  RunConfig config = flags.resolve();
  auto outcome = run_training(config, load_dataset(config.manifest));
  std::cout << outcome.checkpoint.provenance.dump() << '\n';
  if (outcome.result.diverged)
    throw NumericError(outcome.result.divergence + " (best checkpoint so far saved to " + config.checkpoint + ")");
  return 0;
}

// eval ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string rank_mode;
  std::vector<int> ns;
  std::string length_edges;
  std::string popularity_edges;
  std::string out;
  std::string ranks_csv;
};

HeldOut parse_split(const std::string& s) {
  if (s == "test") return HeldOut::Test;
  if (s == "validation") return HeldOut::Validation;
  throw ConfigError("split must be test or validation, got '" + s + "'");
}

RankMode parse_rank_mode(const std::string& s) {
  if (s == "exclude-seen") return RankMode::ExcludeSeen;
  if (s == "rank-all") return RankMode::RankAll;
  throw ConfigError("rank mode must be exclude-seen or rank-all, got '" + s + "'");
}

struct Evaluation {
  RankingReport report;
  std::vector<BucketReport> buckets;
  json to_json() const {
    json j = stosa::to_json(report);
    j["buckets"] = json::object();
    for (const auto& b : buckets) {
      json bj = stosa::to_json(b);
      j["buckets"][bj["axis"].get<std::string>()] = bj["buckets"];
    }
    return j;
  }
};

Evaluation evaluate_model(Model<Real>& model, const SequenceDataset& dataset, HeldOut which, RankMode mode,
                          const std::vector<int>& ns, const std::string& length_edges,
                          const std::string& popularity_edges) {
  Evaluation ev;
  auto ranks = rank_users(model, dataset, which, mode);
  ev.report = compute_metrics(ranks, ns);
  for (auto axis : {BucketAxis::SequenceLength, BucketAxis::ItemPopularity}) {
    const std::string& given = axis == BucketAxis::SequenceLength ? length_edges : popularity_edges;
    std::vector<double> edges = given.empty() ? quartile_edges(dataset, axis) : parse_edges(given);
    bucketize(dataset, axis, edges);  // validates the edges
    auto users = user_buckets(dataset, axis, edges, which);
    ev.buckets.push_back(bucketed_metrics(ranks, users, edges, axis, ns));
  }
  return ev;
}

int cmd_eval(const EvalArgs& a) {
  auto ckpt = load_checkpoint<Real>(a.checkpoint);
  auto dataset = load_dataset(a.manifest.empty() ? ckpt.config.manifest : a.manifest);
  if (dataset.num_items() != ckpt.model.config.num_items)
    throw DatasetError("manifest has " + std::to_string(dataset.num_items()) + " items but the checkpoint expects " +
                       std::to_string(ckpt.model.config.num_items));
  const HeldOut which = parse_split(a.split);
  const RankMode mode = a.rank_mode.empty() ? ckpt.config.rank_mode : parse_rank_mode(a.rank_mode);
  const std::vector<int> ns = a.ns.empty() ? ckpt.config.eval_ns : a.ns;
  auto ev = evaluate_model(ckpt.model, dataset, which, mode, ns, a.length_edges, a.popularity_edges);

  json out = {{"split", a.split},
              {"rank_mode", to_string(mode)},
              {"variant", to_string(ckpt.model.config.variant)},
              {"checkpoint", a.checkpoint}};
  out.update(ev.to_json());
  if (!a.out.empty()) write_json(a.out, out);
  if (!a.ranks_csv.empty()) {
    std::ostringstream csv;
    csv << "user,rank\n";
    for (const auto& [u, r] : ev.report.per_user_rank) csv << dataset.user_name(u) << ',' << r << '\n';
    write_text(a.ranks_csv, csv.str());
  }
  std::cout << out.dump() << '\n';
  return 0;
}

// compare ------------------------------------------------------------------------

struct CompareArgs {
  std::string config_a;
  std::string config_b;
  std::string manifest;
  std::string out_dir = "compare";
  std::string length_edges;
  std::string popularity_edges;
};

json metric_map(const RankingReport& r) {
  json j = to_json(r);
  j.erase("users");
  return j;
}

json relative_improvement(const json& a, const json& b) {
  json out = json::object();
  for (const auto& [key, value] : a.items()) {
    const double base = b.at(key).get<double>();
    out[key] = base == 0.0 ? json(nullptr) : json(100.0 * (value.get<double>() - base) / base);
  }
  return out;
}

int cmd_compare(const CompareArgs& a) {
  const fs::path dir(a.out_dir);
  std::vector<RunConfig> configs;
  for (const auto& [path, tag] : {std::pair{a.config_a, "a"}, std::pair{a.config_b, "b"}}) {
    RunConfig c = RunConfig::load(path);
    if (!a.manifest.empty()) c.manifest = a.manifest;
    c.checkpoint = (dir / (std::string(tag) + ".ckpt")).string();
    c.log = (dir / (std::string(tag) + "_log.jsonl")).string();
    c.validate();
    configs.push_back(c);
  }
  if (configs[0].manifest != configs[1].manifest)
    throw ConfigError("compare needs one manifest; the configs name different ones (pass --manifest)");
  auto dataset = load_dataset(configs[0].manifest);

  std::vector<Evaluation> evals;
  json report = json::object();
  for (std::size_t i = 0; i < 2; ++i) {
    auto outcome = run_training(configs[i], dataset);
    auto ev = evaluate_model(outcome.checkpoint.model, dataset, HeldOut::Test, configs[i].rank_mode,
                             configs[i].eval_ns, a.length_edges, a.popularity_edges);
    json side = ev.to_json();
    side["variant"] = to_string(configs[i].variant);
    side["config"] = i == 0 ? a.config_a : a.config_b;
    side["best_epoch"] = outcome.result.best_epoch;
    side["best_val_mrr"] = outcome.result.best_val_mrr;
    report[i == 0 ? "a" : "b"] = side;
    evals.push_back(std::move(ev));
  }

  report["improvement_pct"] = relative_improvement(metric_map(evals[0].report), metric_map(evals[1].report));
  json deltas = json::object();
  for (std::size_t axis = 0; axis < evals[0].buckets.size(); ++axis) {
    const auto& ba = evals[0].buckets[axis];
    const auto& bb = evals[1].buckets[axis];
    json rows = json::array();
    for (std::size_t k = 0; k < ba.edges.size(); ++k) {
      json row = {{"lo", ba.edges[k]}, {"users", ba.sizes[k]}};
      row["hi"] = k + 1 < ba.edges.size() ? json(ba.edges[k + 1]) : json(nullptr);
      if (ba.reports[k] && bb.reports[k]) {
        json ma = metric_map(*ba.reports[k]), mb = metric_map(*bb.reports[k]);
        json d = json::object();
        for (const auto& [key, value] : ma.items()) d[key] = value.get<double>() - mb.at(key).get<double>();
        row["delta"] = d;
        row["improvement_pct"] = relative_improvement(ma, mb);
      } else {
        row["delta"] = nullptr;
        row["improvement_pct"] = nullptr;
      }
      rows.push_back(row);
    }
    deltas[to_json(ba)["axis"].get<std::string>()] = rows;
  }
  report["bucket_deltas"] = deltas;
  write_json(dir / "compare.json", report);
  std::cout << report.dump() << '\n';
  return 0;
}

// recommend ----------------------------------------------------------------------

struct RecommendArgs {
  std::string checkpoint;
  std::string manifest;
  std::string user;
  std::size_t n = 10;
  bool include_seen = false;
};

int cmd_recommend(const RecommendArgs& a) {
  auto ckpt = load_checkpoint<Real>(a.checkpoint);
  auto dataset = load_dataset(a.manifest.empty() ? ckpt.config.manifest : a.manifest);
  const UserId u = dataset.user_id(a.user);
  auto window = next_item_window(dataset.sequence(u), static_cast<std::size_t>(ckpt.model.config.max_len));
  auto scores = predict_scores(ckpt.model, window);
  std::vector<ItemId> exclude;
  if (!a.include_seen) exclude = dataset.interacted(u);
  auto items = top_n(scores, a.n, exclude);
  for (std::size_t r = 0; r < items.size(); ++r)
    std::cout << json{{"user", a.user},
                      {"rank", r + 1},
                      {"item", dataset.item_name(items[r])},
                      {"score", static_cast<double>(scores[items[r]])}}
                     .dump()
              << '\n';
  return 0;
}

// export -------------------------------------------------------------------------

struct ExportArgs {
  std::string checkpoint;
  std::string manifest;
  std::string what;
  std::string user;
  std::string out_dir = "export";
};

template <class Derived>
std::string csv_rows(const Eigen::MatrixBase<Derived>& m) {
  std::ostringstream out;
  out.precision(9);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << '\n';
  }
  return out.str();
}

int cmd_export(const ExportArgs& a) {
  auto ckpt = load_checkpoint<Real>(a.checkpoint);
  const fs::path dir(a.out_dir);
  json written = json::array();
  if (a.what == "attention") {
    if (a.user.empty()) throw ConfigError("attention export needs --user");
    auto dataset = load_dataset(a.manifest.empty() ? ckpt.config.manifest : a.manifest);
    const UserId u = dataset.user_id(a.user);
    auto window = next_item_window(dataset.sequence(u), static_cast<std::size_t>(ckpt.model.config.max_len));
    AttentionTrace<Real> trace;
    Scorer<Real>(ckpt.model).state(window, &trace);
    for (std::size_t l = 0; l < trace.size(); ++l)
      for (std::size_t h = 0; h < trace[l].size(); ++h) {
        const auto path = dir / ("attention_layer" + std::to_string(l) + "_head" + std::to_string(h) + ".csv");
        write_text(path, csv_rows(trace[l][h]));
        written.push_back(path.string());
      }
  } else if (a.what == "embeddings") {
    auto dataset = a.manifest.empty() && ckpt.config.manifest.empty()
                       ? std::optional<SequenceDataset>()
                       : std::optional<SequenceDataset>(load_dataset(a.manifest.empty() ? ckpt.config.manifest : a.manifest));
    std::ostringstream csv;
    Mat<Real> table;
    int half = 0;
    if (ckpt.model.config.variant == Variant::Stosa) {
      const auto& t = ckpt.model.stosa().tables;
      half = static_cast<int>(t.item_mean.cols());
      table.resize(t.item_mean.rows() - 1, 2 * half);
      table << t.item_mean.bottomRows(t.item_mean.rows() - 1),
          activate_covariance(t.item_cov.bottomRows(t.item_cov.rows() - 1));
    } else {
      table = ckpt.model.dot().item.bottomRows(ckpt.model.dot().item.rows() - 1);
    }
    csv << "item";
    for (Eigen::Index c = 0; c < table.cols(); ++c) {
      if (half > 0)
        csv << ',' << (c < half ? "mean_" + std::to_string(c) : "cov_" + std::to_string(c - half));
      else
        csv << ",emb_" << c;
    }
    csv << '\n';
    std::istringstream rows(csv_rows(table));
    std::string line;
    for (ItemId j = 1; std::getline(rows, line); ++j)
      csv << (dataset && static_cast<std::size_t>(j) <= dataset->num_items() ? dataset->item_name(j) : std::to_string(j))
          << ',' << line << '\n';
    const auto path = dir / "embeddings.csv";
    write_text(path, csv.str());
    written.push_back(path.string());
  } else {
    throw ConfigError("export --what must be attention or embeddings, got '" + a.what + "'");
  }
  std::cout << json{{"written", written}}.dump() << '\n';
  return 0;
}

// gradcheck ----------------------------------------------------------------------

struct GradcheckArgs {
  std::string variant = "stosa";
  std::string normalization = "softmax";
  double lambda = 0.5;
  double beta = 1e-3;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  ModelConfig c;
  c.variant = a.variant == "dot" ? Variant::DotBaseline : Variant::Stosa;
  if (a.variant != "dot" && a.variant != "stosa") throw ConfigError("variant must be stosa or dot");
  c.normalization = a.normalization == "distance-ratio" ? Normalization::DistanceRatio : Normalization::Softmax;
  c.num_items = 10;
  c.d = 8;
  c.max_len = 5;
  c.layers = 2;
  c.heads = 1;
  c.dropout = 0.0;
  Rng init = substream(a.seed, "init");
  Rng data = substream(a.seed, "negatives");
  auto model = init_model<double>(c, init, 0.3);

  const std::vector<std::size_t> lengths{3, 5, 7};
  const auto batch = random_examples(c.num_items, 5, lengths, data);

  auto report = gradient_check(model, batch, a.lambda, a.beta);
  json params = json::array();
  for (const auto& p : report.params)
    params.push_back({{"name", p.name}, {"entries", p.entries}, {"max_rel_error", p.max_rel_error}});
  json out = {{"variant", a.variant},
              {"lambda", a.lambda},
              {"max_rel_error", report.max_rel_error},
              {"tolerance", a.tolerance},
              {"pass", report.max_rel_error < a.tolerance},
              {"params", params}};
  std::cout << out.dump(2) << '\n';
  if (report.max_rel_error >= a.tolerance)
    throw NumericError("gradient check failed: max relative error " + std::to_string(report.max_rel_error));
  return 0;
}

// synth --------------------------------------------------------------------------

struct SynthArgs {
  std::string kind = "cyclic";
  std::string out;
  std::size_t users = 0;
  std::uint64_t seed = 0;
  std::string noisy_out;
};

int cmd_synth(const SynthArgs& a) {
  std::vector<Interaction> rows;
  std::vector<std::string> noisy;
  if (a.kind == "cyclic") {
    synthetic::CyclicSpec spec;
    if (a.users) spec.users = a.users;
    if (a.seed) spec.seed = a.seed;
    rows = synthetic::cyclic(spec);
  } else if (a.kind == "mixed") {
    synthetic::MixedTopicSpec spec;
    if (a.users) spec.users = a.users;
    if (a.seed) spec.seed = a.seed;
    auto data = synthetic::mixed_topics(spec);
    rows = std::move(data.interactions);
    noisy = std::move(data.noisy_users);
  } else {
    throw ConfigError("synth --kind must be cyclic or mixed");
  }
  std::ostringstream tsv;
  for (const auto& r : rows) tsv << r.user << '\t' << r.item << '\t' << r.timestamp << '\n';
  write_text(a.out, tsv.str());
  if (!a.noisy_out.empty()) {
    std::ostringstream list;
    for (const auto& u : noisy) list << u << '\n';
    write_text(a.noisy_out, list.str());
  }
  std::cout << json{{"interactions", rows.size()}, {"noisy_users", noisy.size()}}.dump() << '\n';
  return 0;
}

int fail(const std::string& kind, const std::string& message, int code = 1) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic self-attention sequential recommender"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "filter a TSV log and write the leave-one-out split manifest");
  prepare->add_option("--input", prep.input, "user<TAB>item<TAB>timestamp file")->required();
  prepare->add_option("--out-dir", prep.out_dir, "directory for split.manifest and stats.json")->required();
  prepare->add_option("--k", prep.k, "minimum interactions per user")->capture_default_str();
  prepare->add_flag("--iterative", prep.iterative, "alternate user and item k-core filtering until stable");

  ConfigFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint and JSONL log");
  train_flags.attach(*train_cmd);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "rank held-out items and report metrics");
  eval->add_option("--checkpoint", ev.checkpoint)->required();
  eval->add_option("--manifest", ev.manifest, "defaults to the manifest recorded in the checkpoint");
  eval->add_option("--split", ev.split, "test or validation")->capture_default_str();
  eval->add_option("--rank-mode", ev.rank_mode, "exclude-seen or rank-all");
  eval->add_option("--ns", ev.ns, "cutoffs, e.g. --ns 1 5 10");
  eval->add_option("--length-edges", ev.length_edges, "comma-separated bucket edges (default: quartiles)");
  eval->add_option("--popularity-edges", ev.popularity_edges, "comma-separated bucket edges (default: quartiles)");
  eval->add_option("--out", ev.out, "report JSON path");
  eval->add_option("--ranks-csv", ev.ranks_csv, "per-user rank CSV path");

  CompareArgs cmp;
  auto* compare = app.add_subcommand("compare", "train and evaluate two configs on one manifest");
  compare->add_option("--config-a", cmp.config_a)->required();
  compare->add_option("--config-b", cmp.config_b)->required();
  compare->add_option("--manifest", cmp.manifest);
  compare->add_option("--out-dir", cmp.out_dir)->capture_default_str();
  compare->add_option("--length-edges", cmp.length_edges);
  compare->add_option("--popularity-edges", cmp.popularity_edges);

  RecommendArgs rec;
  auto* recommend = app.add_subcommand("recommend", "print a user's top-N next items as JSON lines");
  recommend->add_option("--checkpoint", rec.checkpoint)->required();
  recommend->add_option("--manifest", rec.manifest);
  recommend->add_option("--user", rec.user, "user name as in the input log")->required();
  recommend->add_option("--n", rec.n)->capture_default_str()->check(CLI::PositiveNumber);
  recommend->add_flag("--include-seen", rec.include_seen, "allow items the user already interacted with");

  ExportArgs exp;
  auto* export_cmd = app.add_subcommand("export", "write attention maps or item embeddings as CSV");
  export_cmd->add_option("--checkpoint", exp.checkpoint)->required();
  export_cmd->add_option("--manifest", exp.manifest);
  export_cmd->add_option("--what", exp.what, "attention or embeddings")->required();
  export_cmd->add_option("--user", exp.user);
  export_cmd->add_option("--out-dir", exp.out_dir)->capture_default_str();

  GradcheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gradcheck->add_option("--variant", gc.variant)->capture_default_str();
  gradcheck->add_option("--normalization", gc.normalization)->capture_default_str();
  gradcheck->add_option("--lambda", gc.lambda)->capture_default_str();
  gradcheck->add_option("--beta", gc.beta)->capture_default_str();
  gradcheck->add_option("--seed", gc.seed)->capture_default_str();
  gradcheck->add_option("--tolerance", gc.tolerance)->capture_default_str();

  SynthArgs syn;
  auto* synth = app.add_subcommand("synth", "write a synthetic interaction log as TSV");
  synth->add_option("--kind", syn.kind, "cyclic or mixed")->capture_default_str();
  synth->add_option("--out", syn.out)->required();
  synth->add_option("--users", syn.users);
  synth->add_option("--seed", syn.seed);
  synth->add_option("--noisy-out", syn.noisy_out, "mixed only: file listing the noisy users");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*prepare) return cmd_prepare(prep);
    if (*train_cmd) return cmd_train(train_flags);
    if (*eval) return cmd_eval(ev);
    if (*compare) return cmd_compare(cmp);
    if (*recommend) return cmd_recommend(rec);
    if (*export_cmd) return cmd_export(exp);
    if (*gradcheck) return cmd_gradcheck(gc);
    if (*synth) return cmd_synth(syn);
  } catch (const stosa::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
