#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace hsl {

// Error surfaces. Each failure mode maps onto one of these so callers (and
// the CLI exit-code mapping) can tell usage, data, and numeric faults apart.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Dimension disagreement between tensors/masks.
struct ShapeError : Error {
  using Error::Error;
};
// Invalid hyperparameter or option value.
struct ConfigError : Error {
  using Error::Error;
};
// Caller violated an operation's contract (non-scalar loss, empty input, ...).
struct ContractError : Error {
  using Error::Error;
};
// NaN/Inf surfaced where finite values are required.
struct NumericError : Error {
  using Error::Error;
};
// Malformed file content (PNM headers, manifests, checkpoints).
struct ParseError : Error {
  using Error::Error;
};
// Filesystem-level failure.
struct IoError : Error {
  using Error::Error;
};
// Synthetic generation could not satisfy its parameters.
struct GenError : Error {
  using Error::Error;
};
// Training run hit a fault (non-finite loss) and stopped.
struct TrainAbort : Error {
  using Error::Error;
};

// splitmix64; used to derive independent substream seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                              std::uint64_t d) {
  return mix_seed(mix_seed(a, b, c), d);
}

// Deterministic RNG. mt19937_64 is pinned by the standard, and every mapping
// below is implemented here rather than via std::*_distribution (whose output
// is implementation-defined), so streams are bit-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Inclusive on both ends.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw ContractError("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 gen_;
};

// FNV-1a, used for config fingerprints.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string to_hex(std::uint64_t v);

}  // namespace hsl
