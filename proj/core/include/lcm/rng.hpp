#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace lcm {

// 64-bit avalanche finalizer (splitmix64).
std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_tag(std::string_view tag);

/// Counter-based generator. The stream is fully determined by
/// (seed, purpose, index); draws are mix64(key + counter·φ). Gaussians come
/// from Box–Muller on consecutive uniform pairs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::string_view purpose = {}, std::uint64_t index = 0);

  // Independent sub-stream keyed on this stream's key, not its position.
  Rng derive(std::string_view purpose, std::uint64_t index = 0) const;

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  std::size_t uniform_index(std::size_t n);  // [0, n)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  double normal();

  std::uint64_t key() const { return key_; }

 private:
  struct Key {
    std::uint64_t value;
  };
  explicit Rng(Key key) : key_(key.value) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lcm
