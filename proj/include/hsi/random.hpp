#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace hsi {

// Seeded random stream: std::mt19937_64 under a hand-rolled Box-Muller
// transform. The stdlib normal_distribution is implementation-defined, so it
// is not used; with the generator and transform both fixed here, a given seed
// replays the same draw sequence on any platform with the same libm.
//
// Child streams are derived with splitmix64 so that independent components
// (per-path, per-sample) can draw without sharing state.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : seed_(seed), gen_(mix(seed)) {}

  // uniform on [0,1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // standard normal via Box-Muller; pairs are cached so draws come two at a time
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so log(u1) is finite
    double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  RandomStream split(std::uint64_t stream_id) const {
    return RandomStream(mix(seed_ + 0x9E3779B97F4A7C15ULL * (stream_id + 1)));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t mix(std::uint64_t x) {  // splitmix64 finalizer
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace hsi
