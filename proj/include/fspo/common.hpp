#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fspo {

using TokenId = int;
using Tokens = std::vector<TokenId>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using VectorXd = Vector<double>;

inline constexpr const char* kToolVersion = "0.1.0";

// Error taxonomy. Everything derives from a std exception so callers that
// only care about "it failed" can catch std::exception.

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Enumeration state space exceeded its guard.
struct CapacityError : std::length_error {
  using std::length_error::length_error;
};

struct InvalidState : std::logic_error {
  using std::logic_error::logic_error;
};

// A metric whose definition divides by a quantity that vanished.
struct UndefinedMetric : std::domain_error {
  using std::domain_error::domain_error;
};

struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(long step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what),
        step(step) {}
  long step;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Counter-based generator: splitmix64 over an explicit counter. Streams are
/// derived from (seed, tags...) so any sub-computation can be replayed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Derive a child seed from a parent seed and a list of counters.
  template <typename... Tags>
  static std::uint64_t derive(std::uint64_t seed, Tags... tags) {
    std::uint64_t h = mix(seed + 0x9e3779b97f4a7c15ULL);
    ((h = mix(h ^ (static_cast<std::uint64_t>(tags) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)))), ...);
    return h;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

  /// Standard normal via Box-Muller (one value per call, second discarded).
  double normal();

 private:
  std::uint64_t state_;
};

inline double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace fspo
