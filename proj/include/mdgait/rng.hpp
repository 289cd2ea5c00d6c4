#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace mdgait {

std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent stream seed from a root seed and a component tag
// plus optional integer coordinates (subject, session, epoch, ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                          std::initializer_list<std::uint64_t> coords = {});

// mt19937_64 with portable transforms: the standard distributions are
// implementation-defined, these are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mdgait
