#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "lcm/condition.hpp"
#include "lcm/rng.hpp"
#include "lcm/tensor.hpp"

namespace lcm {

enum class DatasetKind { kRing8, kCheckerboard, kSingleGaussian };
std::string_view to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view text);

// Toy 2-D distributions. rotation_deg rotates every sample about the origin
// while keeping its condition label.
struct DatasetSpec {
  DatasetKind kind = DatasetKind::kRing8;
  double radius = 2.0;           // ring8
  double component_std = 0.1;    // ring8
  std::vector<double> mean = {0.0, 0.0};  // single-gaussian
  double scale = 1.0;            // single-gaussian
  double rotation_deg = 0.0;
};

std::size_t num_conditions(const DatasetSpec& spec);

struct Dataset2D {
  Tensor x;  // [count × 2]
  std::vector<Condition> cond;

  std::size_t size() const { return cond.size(); }
};

// Labels drawn uniformly; sample i depends only on (seed, i).
Dataset2D make_dataset(const DatasetSpec& spec, std::size_t count, std::uint64_t seed);

// Draws one sample per requested label; row i uses stream (seed, purpose, i).
Dataset2D sample_with_labels(const DatasetSpec& spec, std::span<const Condition> labels,
                             std::uint64_t seed);

// Labels 0,1,…,C−1,0,1,… of length `count`.
std::vector<Condition> balanced_labels(const DatasetSpec& spec, std::size_t count);

}  // namespace lcm
