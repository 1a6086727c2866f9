#pragma once

#include <cstdint>
#include <limits>

namespace lcm {

// Class-label conditioning. The null condition (∅) is a first-class value
// with its own embedding row, used by the unconditional CFG branch.
class Condition {
 public:
  constexpr Condition() = default;
  static constexpr Condition of(std::uint32_t id) { return Condition(id); }
  static constexpr Condition null() { return Condition(kNullId); }

  constexpr bool is_null() const { return id_ == kNullId; }
  constexpr std::uint32_t id() const { return id_; }

  friend constexpr bool operator==(Condition, Condition) = default;

 private:
  static constexpr std::uint32_t kNullId = std::numeric_limits<std::uint32_t>::max();
  constexpr explicit Condition(std::uint32_t id) : id_(id) {}
  std::uint32_t id_ = kNullId;
};

}  // namespace lcm
