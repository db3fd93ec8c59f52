#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stosa {

using ItemId = std::int32_t;
using UserId = std::int32_t;

/// Reserved item id for left padding of fixed-length windows.
inline constexpr ItemId kPaddingItem = 0;

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

// Error kinds. Each carries a short machine-readable kind() used by the CLI
// when it reports failures as JSON.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define STOSA_DEFINE_ERROR(Name, Kind)                             \
  class Name : public Error {                                      \
   public:                                                         \
    using Error::Error;                                            \
    const char* kind() const noexcept override { return Kind; }    \
  };

STOSA_DEFINE_ERROR(IngestionError, "ingestion")
STOSA_DEFINE_ERROR(DatasetError, "dataset")
STOSA_DEFINE_ERROR(SamplingError, "sampling")
STOSA_DEFINE_ERROR(NumericError, "numeric")
STOSA_DEFINE_ERROR(DomainError, "domain")
STOSA_DEFINE_ERROR(ShapeError, "shape")
STOSA_DEFINE_ERROR(LookupError, "lookup")
STOSA_DEFINE_ERROR(NormalizationError, "normalization")
STOSA_DEFINE_ERROR(ConfigError, "config")
STOSA_DEFINE_ERROR(CheckpointError, "checkpoint")
STOSA_DEFINE_ERROR(EvaluationError, "evaluation")
STOSA_DEFINE_ERROR(VariantError, "variant")

#undef STOSA_DEFINE_ERROR

using Rng = std::mt19937_64;

/// Derives an independent generator for a named purpose ("init",
/// "negatives", "dropout", "shuffle", ...) from the single run seed. Adding a
/// new stream never perturbs the existing ones.
inline Rng substream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

}  // namespace stosa
