#pragma once

#include "stosa/common.hpp"
#include "stosa/data.hpp"

#include <cstdint>
#include <vector>

namespace stosa::synthetic {

/// Every user walks the item cycle 1 -> 2 -> ... -> period -> 1 from a random
/// start, for a random length in [min_len, max_len].
struct CyclicSpec {
  std::size_t users = 50;
  std::size_t period = 10;
  std::size_t min_len = 8;
  std::size_t max_len = 14;
  std::uint64_t seed = 7;
};

std::vector<Interaction> cyclic(const CyclicSpec& spec);

/// Items are grouped into topics, each a fixed cycle. Deterministic users
/// walk one topic's cycle. Noisy users own two topics and at every step either
/// follow the current topic's cycle or jump to a random item of the other
/// topic, each with probability 1/2.
struct MixedTopicSpec {
  std::size_t users = 400;
  double noisy_fraction = 0.3;
  std::size_t topics = 6;
  std::size_t items_per_topic = 8;
  std::size_t min_len = 10;
  std::size_t max_len = 16;
  std::uint64_t seed = 11;
};

struct MixedTopicData {
  std::vector<Interaction> interactions;
  std::vector<std::string> noisy_users;
};

MixedTopicData mixed_topics(const MixedTopicSpec& spec);

}  // namespace stosa::synthetic
