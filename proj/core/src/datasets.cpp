#include "lcm/datasets.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "lcm/errors.hpp"

namespace lcm {

namespace {

constexpr std::size_t kRingComponents = 8;
constexpr std::size_t kCheckerCells = 8;  // filled cells of a 4×4 board

void validate(const DatasetSpec& spec) {
  if (spec.kind == DatasetKind::kRing8 && !(spec.radius > 0.0 && spec.component_std > 0.0)) {
    throw InvalidArgument("ring8 needs positive radius and component_std");
  }
  if (spec.kind == DatasetKind::kSingleGaussian) {
    if (spec.mean.size() != 2) throw InvalidArgument("single-gaussian mean must be 2-D");
    if (!(spec.scale > 0.0)) throw InvalidArgument("single-gaussian scale must be positive");
  }
}

void draw(const DatasetSpec& spec, std::uint32_t label, Rng& rng, Scalar* out) {
  double x = 0.0, y = 0.0;
  switch (spec.kind) {
    case DatasetKind::kRing8: {
      const double angle = 2.0 * std::numbers::pi * label / kRingComponents;
      x = spec.radius * std::cos(angle) + spec.component_std * rng.normal();
      y = spec.radius * std::sin(angle) + spec.component_std * rng.normal();
      break;
    }
    case DatasetKind::kCheckerboard: {
      // Filled cells of a 4×4 board on [-2, 2]²: (row + col) even.
      const std::uint32_t row = label / 2;
      const std::uint32_t col = 2 * (label % 2) + (row % 2);
      x = -2.0 + col + rng.uniform();
      y = -2.0 + row + rng.uniform();
      break;
    }
    case DatasetKind::kSingleGaussian:
      x = spec.mean[0] + spec.scale * rng.normal();
      y = spec.mean[1] + spec.scale * rng.normal();
      break;
  }
  if (spec.rotation_deg != 0.0) {
    const double th = spec.rotation_deg * std::numbers::pi / 180.0;
    const double rx = std::cos(th) * x - std::sin(th) * y;
    const double ry = std::sin(th) * x + std::cos(th) * y;
    x = rx;
    y = ry;
  }
  out[0] = static_cast<Scalar>(x);
  out[1] = static_cast<Scalar>(y);
}

}  // namespace

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kRing8: return "ring8";
    case DatasetKind::kCheckerboard: return "checkerboard";
    case DatasetKind::kSingleGaussian: return "single-gaussian";
  }
  return "unknown";
}

DatasetKind parse_dataset_kind(std::string_view text) {
  if (text == "ring8") return DatasetKind::kRing8;
  if (text == "checkerboard") return DatasetKind::kCheckerboard;
  if (text == "single-gaussian") return DatasetKind::kSingleGaussian;
  throw InvalidArgument("unknown dataset kind '" + std::string(text) + "'");
}

std::size_t num_conditions(const DatasetSpec& spec) {
  switch (spec.kind) {
    case DatasetKind::kRing8: return kRingComponents;
    case DatasetKind::kCheckerboard: return kCheckerCells;
    case DatasetKind::kSingleGaussian: return 1;
  }
  return 1;
}

Dataset2D sample_with_labels(const DatasetSpec& spec, std::span<const Condition> labels,
                             std::uint64_t seed) {
  validate(spec);
  if (labels.empty()) throw InvalidArgument("dataset must be nonempty");
  const std::size_t classes = num_conditions(spec);
  std::vector<Scalar> values(labels.size() * 2);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].is_null() || labels[i].id() >= classes) {
      throw InvalidArgument("label outside dataset's condition range");
    }
    Rng rng(seed, "dataset-sample", i);
    draw(spec, labels[i].id(), rng, &values[i * 2]);
  }
  return Dataset2D{Tensor(Shape{labels.size(), 2}, std::move(values)),
                   std::vector<Condition>(labels.begin(), labels.end())};
}

Dataset2D make_dataset(const DatasetSpec& spec, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw InvalidArgument("dataset must be nonempty");
  const std::size_t classes = num_conditions(spec);
  std::vector<Condition> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, "dataset-label", i);
    labels[i] = Condition::of(static_cast<std::uint32_t>(rng.uniform_index(classes)));
  }
  return sample_with_labels(spec, labels, seed);
}

std::vector<Condition> balanced_labels(const DatasetSpec& spec, std::size_t count) {
  const std::size_t classes = num_conditions(spec);
  std::vector<Condition> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = Condition::of(static_cast<std::uint32_t>(i % classes));
  return labels;
}

}  // namespace lcm
