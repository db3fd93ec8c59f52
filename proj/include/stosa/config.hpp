#pragma once

#include "stosa/common.hpp"
#include "stosa/evaluation.hpp"
#include "stosa/model.hpp"
#include "stosa/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace stosa {

/// Everything a run needs. Serialized as flat `key = value` text; unknown
/// keys are errors.
struct RunConfig {
  std::string manifest;
  std::string checkpoint = "model.ckpt";
  std::string log = "train_log.jsonl";
  Variant variant = Variant::Stosa;
  int d = 64;
  int max_len = 50;
  int layers = 1;
  int heads = 1;
  double dropout = 0.3;
  bool attention_dropout = true;
  Normalization normalization = Normalization::Softmax;
  double lr = 1e-3;
  double beta = 1e-3;
  double lambda = 0.1;
  std::uint64_t seed = 42;
  int patience = 50;
  int max_epochs = 200;
  std::size_t batch_size = 256;
  std::vector<int> eval_ns{1, 5};
  RankMode rank_mode = RankMode::ExcludeSeen;
  bool allow_deviation = false;  // permit values outside the tuned search ranges

  bool operator==(const RunConfig&) const = default;

  /// Keys in serialization order.
  static const std::vector<std::string>& keys();

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// Checks structural constraints, and unless allow_deviation the search
  /// ranges d in {32,64,128}, n in {50,100}, L in {1,2,3}, H in {1,2,4},
  /// dropout in {0.3,0.5,0.7}, lr in {1e-3,1e-4}, beta in {1e-1,1e-2,1e-3}.
  void validate() const;

  ModelConfig model_config(std::size_t num_items) const;
  TrainConfig train_config() const;

  std::string to_text() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
};

}  // namespace stosa
