#include "stosa/training.hpp"

#include <algorithm>
#include <random>

namespace stosa {

nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"bpr", e.bpr},
          {"pvn", e.pvn},     {"l2", e.l2},                 {"val_mrr", e.val_mrr},
          {"elapsed_s", e.elapsed_s}};
}

std::vector<TrainingExample> random_examples(std::size_t num_items, std::size_t n, std::span<const std::size_t> lengths,
                                             Rng& rng) {
  std::uniform_int_distribution<ItemId> pick(1, static_cast<ItemId>(num_items));
  std::vector<TrainingExample> batch;
  for (std::size_t len : lengths) {
    std::vector<ItemId> seq(len);
    for (auto& x : seq) x = pick(rng);
    std::vector<ItemId> seen(seq);
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    TrainingExample ex{make_window(seq, n), std::vector<ItemId>(n, kPaddingItem)};
    for (std::size_t p = 0; p < n; ++p)
      if (ex.window.mask[p]) ex.negatives[p] = sample_training_negative(seen, ex.window.targets[p], num_items, rng);
    batch.push_back(std::move(ex));
  }
  return batch;
}

}  // namespace stosa
