#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lcm/denoiser.hpp"
#include "lcm/rng.hpp"
#include "lcm/tensor.hpp"

namespace lcm {

inline constexpr double kDefaultStyleWeight = 0.8;  // λ₁
inline constexpr double kDefaultAccelWeight = 1.0;  // λ₂

// Low-rank factors for one weight matrix W₀[d×k]: ΔW = scale·B·A.
struct LoraEntry {
  Tensor a;  // rank × k
  Tensor b;  // d × rank
  std::size_t rank = 0;
  double scale = 1.0;
};

struct LoraSpec {
  std::vector<std::string> targets;  // empty: default_lora_targets()
  std::size_t rank = 8;
  double scale = 1.0;
};

class LoraAdapter {
 public:
  const LoraEntry* find(std::string_view layer) const;
  const std::map<std::string, LoraEntry, std::less<>>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  // Rejects duplicates and factor shapes inconsistent with `entry.rank`.
  void insert(std::string layer, LoraEntry entry);

  // A and B of every entry, in layer-name order.
  std::vector<Tensor> factors() const;
  void set_trainable(bool on);
  LoraAdapter clone() const;

  const std::string& base_fingerprint() const { return base_fingerprint_; }
  void set_base_fingerprint(std::string fp) { base_fingerprint_ = std::move(fp); }

 private:
  std::map<std::string, LoraEntry, std::less<>> entries_;
  std::string base_fingerprint_;
};

// Every dense weight matrix: projections and MLP layers; no biases, no cond_table.
std::vector<std::string> default_lora_targets(const DenoiserNet& net);

/// Wraps the targeted weights with fresh factors: A ~ N(0, 1/r), B = 0, so
/// the adapted model equals the base exactly. Freezes every base parameter.
/// With default targets the rank is capped per layer at min(d, k); a named
/// target whose dims are below the rank is an error.
LoraAdapter attach(DenoiserNet& net, const LoraSpec& spec, Rng& rng);

// Σ r·(d + k) over entries.
std::size_t count_trainable(const LoraAdapter& adapter);

// Dense ΔW = s·B·A, accumulated in ascending rank order.
Tensor materialize(const LoraEntry& entry);
std::map<std::string, Tensor> materialize(const LoraAdapter& adapter);

// Throws IncompatibleError (with both fingerprints) or DimensionError.
void check_compatible(const DenoiserNet& base, const LoraAdapter& adapter);

// W = W₀ + s·B·A for every entry; the result shares no storage with `base`.
DenoiserNet merge(const DenoiserNet& base, const LoraAdapter& adapter);

enum class AdapterRole { kAcceleration, kStyle, kCombined };
std::string_view to_string(AdapterRole role);
AdapterRole parse_adapter_role(std::string_view text);

struct CombineProvenance {
  double lambda_style = kDefaultStyleWeight;
  double lambda_accel = kDefaultAccelWeight;
  std::string style_source;
  std::string accel_source;
};

struct AdapterBundle {
  LoraAdapter adapter;
  AdapterRole role = AdapterRole::kAcceleration;
  std::string name;
  std::optional<CombineProvenance> provenance;
};

/// λ₁·τ′ + λ₂·τ_LCM, kept in factored form: per shared layer the factors are
/// rank-concatenated (B = [λ₁s₁B₁ | λ₂s₂B₂], A = [A₁; A₂], scale 1). A layer
/// present in only one parent carries only that parent's scaled delta.
AdapterBundle combine(const AdapterBundle& style, const AdapterBundle& accel,
                      double lambda_style = kDefaultStyleWeight,
                      double lambda_accel = kDefaultAccelWeight);

}  // namespace lcm
