#include "stosa/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace stosa {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("config '" + key + "': cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config '" + key + "': expected true/false, got '" + value + "'");
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

bool one_of(double v, std::initializer_list<double> allowed) {
  return std::any_of(allowed.begin(), allowed.end(), [&](double a) { return std::abs(v - a) <= 1e-12 * std::abs(a); });
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k{
      "manifest", "checkpoint", "log",   "variant", "d",         "max_len",  "layers",
      "heads",    "dropout",    "attention_dropout", "normalization", "lr", "beta", "lambda",
      "seed",     "patience",   "max_epochs", "batch_size", "eval_ns", "rank_mode", "allow_deviation"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "manifest") manifest = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "log") log = value;
  else if (key == "variant") {
    if (value == "stosa") variant = Variant::Stosa;
    else if (value == "dot") variant = Variant::DotBaseline;
    else throw ConfigError("config 'variant': expected stosa or dot, got '" + value + "'");
  } else if (key == "d") d = parse_number<int>(key, value);
  else if (key == "max_len") max_len = parse_number<int>(key, value);
  else if (key == "layers") layers = parse_number<int>(key, value);
  else if (key == "heads") heads = parse_number<int>(key, value);
  else if (key == "dropout") dropout = parse_number<double>(key, value);
  else if (key == "attention_dropout") attention_dropout = parse_bool(key, value);
  else if (key == "normalization") {
    if (value == "softmax") normalization = Normalization::Softmax;
    else if (value == "distance-ratio") normalization = Normalization::DistanceRatio;
    else throw ConfigError("config 'normalization': expected softmax or distance-ratio, got '" + value + "'");
  } else if (key == "lr") lr = parse_number<double>(key, value);
  else if (key == "beta") beta = parse_number<double>(key, value);
  else if (key == "lambda") lambda = parse_number<double>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "patience") patience = parse_number<int>(key, value);
  else if (key == "max_epochs") max_epochs = parse_number<int>(key, value);
  else if (key == "batch_size") batch_size = parse_number<std::size_t>(key, value);
  else if (key == "eval_ns") {
    eval_ns.clear();
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ',')) eval_ns.push_back(parse_number<int>(key, trim(part)));
    if (eval_ns.empty()) throw ConfigError("config 'eval_ns': empty list");
  } else if (key == "rank_mode") {
    if (value == "exclude-seen") rank_mode = RankMode::ExcludeSeen;
    else if (value == "rank-all") rank_mode = RankMode::RankAll;
    else throw ConfigError("config 'rank_mode': expected exclude-seen or rank-all, got '" + value + "'");
  } else if (key == "allow_deviation") allow_deviation = parse_bool(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  if (key == "manifest") return manifest;
  if (key == "checkpoint") return checkpoint;
  if (key == "log") return log;
  if (key == "variant") return to_string(variant);
  if (key == "d") return std::to_string(d);
  if (key == "max_len") return std::to_string(max_len);
  if (key == "layers") return std::to_string(layers);
  if (key == "heads") return std::to_string(heads);
  if (key == "dropout") return format_double(dropout);
  if (key == "attention_dropout") return attention_dropout ? "true" : "false";
  if (key == "normalization") return to_string(normalization);
  if (key == "lr") return format_double(lr);
  if (key == "beta") return format_double(beta);
  if (key == "lambda") return format_double(lambda);
  if (key == "seed") return std::to_string(seed);
  if (key == "patience") return std::to_string(patience);
  if (key == "max_epochs") return std::to_string(max_epochs);
  if (key == "batch_size") return std::to_string(batch_size);
  if (key == "eval_ns") {
    std::string out;
    for (std::size_t i = 0; i < eval_ns.size(); ++i) out += (i ? "," : "") + std::to_string(eval_ns[i]);
    return out;
  }
  if (key == "rank_mode") return to_string(rank_mode);
  if (key == "allow_deviation") return allow_deviation ? "true" : "false";
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  if (d <= 0 || d % 2 != 0) throw ConfigError("d must be a positive even number (mean/covariance split)");
  if (max_len < 1 || layers < 1 || heads < 1) throw ConfigError("max_len, layers and heads must be >= 1");
  const int width = variant == Variant::Stosa ? d / 2 : d;
  if (width % heads != 0) throw ConfigError("heads must divide the per-path width");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (lr <= 0.0 || beta < 0.0 || lambda < 0.0) throw ConfigError("lr must be > 0; beta and lambda >= 0");
  if (max_epochs < 1 || patience < 0 || batch_size < 1) throw ConfigError("bad epoch/patience/batch settings");
  if (eval_ns.empty()) throw ConfigError("eval_ns must list at least one cutoff");
  for (int n : eval_ns)
    if (n < 1) throw ConfigError("eval_ns entries must be >= 1");
  if (allow_deviation) return;
  auto out_of_range = [](const std::string& what) {
    return ConfigError(what + " is outside the tuned search range; set allow_deviation = true to override");
  };
  if (!one_of(d, {32, 64, 128})) throw out_of_range("d");
  if (max_len != 50 && max_len != 100) throw out_of_range("max_len");
  if (layers > 3) throw out_of_range("layers");
  if (heads != 1 && heads != 2 && heads != 4) throw out_of_range("heads");
  if (!one_of(dropout, {0.3, 0.5, 0.7})) throw out_of_range("dropout");
  if (!one_of(lr, {1e-3, 1e-4})) throw out_of_range("lr");
  if (!one_of(beta, {1e-1, 1e-2, 1e-3})) throw out_of_range("beta");
}

ModelConfig RunConfig::model_config(std::size_t num_items) const {
  ModelConfig c;
  c.variant = variant;
  c.num_items = num_items;
  c.d = d;
  c.max_len = max_len;
  c.layers = layers;
  c.heads = heads;
  c.dropout = dropout;
  c.attention_dropout = attention_dropout;
  c.normalization = normalization;
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lambda = lambda;
  t.beta = beta;
  t.adam.lr = lr;
  t.batch_size = batch_size;
  t.max_epochs = max_epochs;
  t.patience = patience;
  t.seed = seed;
  t.rank_mode = rank_mode;
  return t;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k + " = " + get(k) + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  int line_number = 0;
  while (std::getline(ss, line)) {
    ++line_number;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_number) + ": expected 'key = value'");
    c.set(trim(std::string_view(line).substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace stosa
