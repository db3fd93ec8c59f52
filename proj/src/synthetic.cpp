#include "stosa/synthetic.hpp"

#include <algorithm>
#include <random>
#include <string>

namespace stosa::synthetic {

namespace {

std::string user_name(std::size_t u) { return "u" + std::to_string(u); }
std::string item_name(std::size_t i) { return "i" + std::to_string(i); }

}  // namespace

std::vector<Interaction> cyclic(const CyclicSpec& spec) {
  Rng rng = substream(spec.seed, "cyclic");
  std::uniform_int_distribution<std::size_t> start(0, spec.period - 1);
  std::uniform_int_distribution<std::size_t> length(spec.min_len, spec.max_len);
  std::vector<Interaction> out;
  for (std::size_t u = 0; u < spec.users; ++u) {
    std::size_t item = start(rng);
    const std::size_t len = length(rng);
    for (std::size_t t = 0; t < len; ++t) {
      out.push_back({user_name(u), item_name(item + 1), static_cast<std::int64_t>(t)});
      item = (item + 1) % spec.period;
    }
  }
  return out;
}

MixedTopicData mixed_topics(const MixedTopicSpec& spec) {
  Rng rng = substream(spec.seed, "mixed-topics");
  const std::size_t m = spec.items_per_topic;
  std::uniform_int_distribution<std::size_t> topic(0, spec.topics - 1);
  std::uniform_int_distribution<std::size_t> offset(0, m - 1);
  std::uniform_int_distribution<std::size_t> length(spec.min_len, spec.max_len);
  std::bernoulli_distribution coin(0.5);

  // Each topic's cycle visits its items in a fixed shuffled order.
  std::vector<std::vector<std::size_t>> cycles(spec.topics);
  for (std::size_t k = 0; k < spec.topics; ++k) {
    for (std::size_t j = 0; j < m; ++j) cycles[k].push_back(k * m + j);
    std::shuffle(cycles[k].begin(), cycles[k].end(), rng);
  }

  const auto noisy_count = static_cast<std::size_t>(spec.noisy_fraction * static_cast<double>(spec.users) + 0.5);
  std::vector<bool> noisy(spec.users, false);
  std::fill(noisy.begin(), noisy.begin() + static_cast<std::ptrdiff_t>(noisy_count), true);
  std::shuffle(noisy.begin(), noisy.end(), rng);

  MixedTopicData data;
  for (std::size_t u = 0; u < spec.users; ++u) {
    std::size_t a = topic(rng);
    std::size_t b = topic(rng);
    while (spec.topics > 1 && b == a) b = topic(rng);
    std::size_t current_topic = a;
    std::size_t pos = offset(rng);
    const std::size_t len = length(rng);
    for (std::size_t t = 0; t < len; ++t) {
      data.interactions.push_back(
          {user_name(u), item_name(cycles[current_topic][pos] + 1), static_cast<std::int64_t>(t)});
      if (noisy[u] && coin(rng)) {
        current_topic = current_topic == a ? b : a;
        pos = offset(rng);
      } else {
        pos = (pos + 1) % m;
      }
    }
    if (noisy[u]) data.noisy_users.push_back(user_name(u));
  }
  return data;
}

}  // namespace stosa::synthetic
