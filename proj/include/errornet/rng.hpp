#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "errornet/error.hpp"

namespace errornet {

// Deterministic seed derivation (splitmix64 finalizer).
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 0x243f6a8885a308d3ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Random source with a fully pinned output sequence. mt19937_64 is specified
// by the standard; normals use an explicit Box-Muller transform because
// std::normal_distribution's algorithm is implementation-defined.
//
// A default-constructed Rng is unseeded and throws on any draw.
class Rng {
 public:
  Rng() = default;
  explicit Rng(uint64_t s) { seed(s); }

  void seed(uint64_t s) {
    gen_.seed(s);
    seeded_ = true;
    have_spare_ = false;
    spare_ = 0.0;
    draws_ = 0;
  }

  bool seeded() const { return seeded_; }

  // Number of draws handed out so far (used to assert sampling-free paths).
  uint64_t draw_count() const { return draws_; }

  uint64_t next_u64() {
    require_seeded();
    ++draws_;
    return gen_();
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Lemire reduction; single engine draw.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw UsageError("uniform_int: empty range");
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; the paired value is cached.
  double normal() {
    require_seeded();
    if (have_spare_) {
      have_spare_ = false;
      ++draws_;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Text serialization for checkpoints; round-trips the exact state. The
  // cached Box-Muller value is carried as its bit pattern.
  std::string serialize() const {
    uint64_t spare_bits;
    static_assert(sizeof(spare_bits) == sizeof(spare_));
    std::memcpy(&spare_bits, &spare_, sizeof(spare_bits));
    std::ostringstream os;
    os << (seeded_ ? 1 : 0) << ' ' << (have_spare_ ? 1 : 0) << ' '
       << spare_bits << ' ' << draws_ << ' ' << gen_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    int seeded = 0, spare = 0;
    uint64_t spare_bits = 0;
    is >> seeded >> spare >> spare_bits >> draws_ >> gen_;
    if (!is) throw FormatError("rng state: malformed payload");
    std::memcpy(&spare_, &spare_bits, sizeof(spare_));
    seeded_ = seeded != 0;
    have_spare_ = spare != 0;
  }

 private:
  void require_seeded() const {
    if (!seeded_) throw UsageError("rng used before seeding");
  }

  std::mt19937_64 gen_;
  bool seeded_ = false;
  bool have_spare_ = false;
  double spare_ = 0.0;
  uint64_t draws_ = 0;
};

}  // namespace errornet
