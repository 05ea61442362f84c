#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace vsps {

// Named sub-streams for derive_seed. Values are part of the reproducibility
// contract: changing one changes every downstream number.
enum class Stream : std::uint64_t {
  kSplit = 1,
  kFlowInit = 2,
  kFlowTrain = 3,
  kCalibration = 4,
  kSelectionCalibration = 5,
  kSizeEvaluation = 6,
  kTest = 7,
  kQuantileInit = 8,
  kQuantileTrain = 9,
  kGrid = 10,
};

std::uint64_t splitmix64(std::uint64_t& state);

// Deterministic seed for (master, stream, index); distinct triples give
// statistically independent streams.
std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0);

// mt19937_64 with platform-independent uniform/normal/integer draws.
// std:: distributions are implementation-defined, so they are not used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

  // Uniform integer in [0, n), n > 0, by rejection.
  std::size_t index(std::size_t n);

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vsps
