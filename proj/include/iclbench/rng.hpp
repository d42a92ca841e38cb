#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace iclbench {

// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

// Deterministic random stream keyed by (seed, label).
//
// Draw n of a stream is splitmix64(key + (n + 1) * 0x9E3779B97F4A7C15) where
// key = splitmix64(seed ^ fnv1a64(label)). The generator is therefore
// counter-based: the same (seed, label) produces the same sequence on every
// platform, and child streams are derived by hashing a sub-label into the key.
//
// Normals use Box-Muller on two consecutive draws:
//   u1 = (hi53(a) + 1) / 2^53   in (0, 1]
//   u2 =  hi53(b)      / 2^53   in [0, 1)
//   z0 = sqrt(-2 ln u1) cos(2 pi u2),  z1 = sqrt(-2 ln u1) sin(2 pi u2)
// z0 is returned first and z1 is cached for the next call.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view label);

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal();

  // Independent stream for a sub-task, e.g. child("step", 17).
  RngStream child(std::string_view sublabel) const;
  RngStream child(std::string_view sublabel, std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::string label_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace iclbench
