#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace btts {

/// Seeded generator with a documented draw protocol.
///
/// The underlying engine is std::mt19937_64, whose output sequence is fixed by
/// the standard. Distributions are implemented here rather than taken from
/// <random> so that a given seed produces the same numbers with every standard
/// library:
///   uniform()  = (next() >> 11) * 2^-53          in [0, 1)
///   below(n)   = next() % n
///   normal()   = Box-Muller over two uniform() draws (no caching)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n);
  double normal();

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a list of salts.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> salts);

}  // namespace btts
