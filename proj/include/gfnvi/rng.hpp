#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>

namespace gfnvi {

/// Purpose tags for deriving independent random streams. A stream is keyed by
/// (seed, tag, step, index) so the draw used for a given sample never depends
/// on evaluation order or worker count.
enum class StreamTag : std::uint64_t {
  Init = 1,
  ForwardSample = 2,
  BackwardSample = 3,
  TerminalSample = 4,
  MixtureSelect = 5,
  Dataset = 6,
  TestSet = 7,
  Evaluation = 8,
  Mcmc = 9,
  Custom = 100,
};

/// Counter-keyed SplitMix64 stream. Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, StreamTag tag = StreamTag::Custom, std::uint64_t step = 0,
               std::uint64_t index = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next(); }
  std::uint64_t next();

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace gfnvi
