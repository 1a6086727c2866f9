#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lcm/condition.hpp"
#include "lcm/rng.hpp"
#include "lcm/schedule.hpp"
#include "lcm/tensor.hpp"

namespace lcm {

class LoraAdapter;

struct DenoiserConfig {
  std::size_t data_dim = 2;
  std::vector<std::size_t> hidden = {128, 128, 128};
  std::size_t time_features = 16;
  std::size_t guidance_features = 8;
  std::size_t cond_dim = 8;
  std::size_t num_conditions = 8;
  double omega_ref = 10.0;

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// ε-prediction MLP. Parameter names are stable identifiers used by LoRA and
/// checkpoints: time_proj.{weight,bias}, omega_proj.{weight,bias},
/// cond_table, layer{i}.{weight,bias}.
///
/// Input features are [z | silu(time_proj(sin t)) | silu(omega_proj(sin ω/ω_ref)) | cond_table[c]].
class DenoiserNet {
 public:
  static DenoiserNet create(const DenoiserConfig& config, Rng& rng);
  // Rebuilds a net from stored tensors; names and shapes must match `config`.
  static DenoiserNet from_parameters(const DenoiserConfig& config, std::vector<NamedTensor> params);

  const DenoiserConfig& config() const { return config_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  const Tensor& param(std::string_view name) const;
  bool has_param(std::string_view name) const;
  std::size_t num_layers() const { return config_.hidden.size() + 1; }
  std::size_t input_width() const;
  std::size_t parameter_count() const;

  // Deep copy; the result shares no storage with *this.
  DenoiserNet clone() const;
  void set_trainable(bool on);
  std::vector<Tensor> tensors() const;

  // Hex digest over parameter names and shapes.
  std::string fingerprint() const;

 private:
  DenoiserNet(DenoiserConfig config, std::vector<NamedTensor> params);

  DenoiserConfig config_;
  std::vector<NamedTensor> params_;
};

// Names of every layer that could carry an expected shape for `config`, in order.
std::vector<std::pair<std::string, Shape>> denoiser_layout(const DenoiserConfig& config);

// Per-row network inputs besides z.
struct Conditioning {
  std::vector<double> time;   // normalized t
  std::vector<double> omega;  // guidance scale
  std::vector<Condition> cond;

  std::size_t size() const { return cond.size(); }
};

Conditioning make_conditioning(const NoiseSchedule& schedule, std::span<const std::size_t> n,
                               std::span<const double> omega, std::span<const Condition> cond);

// [values.size() × dims] sinusoidal features, sin half then cos half.
Tensor sinusoidal_features(std::span<const double> values, std::size_t dims, double scale = 1000.0);

/// ε_θ(z, ω, c, t). When `adapter` is given, every targeted weight computes
/// W₀x + s·B(Ax) instead of W₀x.
Tensor forward_eps(const DenoiserNet& net, const Tensor& z, const Conditioning& inputs,
                   const LoraAdapter* adapter = nullptr);

/// Skip/out parameterization of the consistency function on rescaled time
/// u = (t − t_min)/(1 − t_min): c_skip = σ_d²/(u² + σ_d²), c_out = u/√(u² + σ_d²).
struct ConsistencyHead {
  double sigma_data = 0.5;
  double t_min = 0.0;

  static ConsistencyHead for_schedule(const NoiseSchedule& schedule, double sigma_data = 0.5);
  double scaled_time(double t) const;
  double c_skip(double t) const;
  double c_out(double t) const;
};

/// f_θ(z, ω, c, t_n) = c_skip·z + c_out·x̂₀ with x̂₀ = (z − σ(t_n)·ε_θ)/α(t_n).
/// Returns z exactly at n = 1.
Tensor consistency_forward(const DenoiserNet& net, const ConsistencyHead& head,
                           const NoiseSchedule& schedule, const Tensor& z,
                           std::span<const std::size_t> n, std::span<const double> omega,
                           std::span<const Condition> cond, const LoraAdapter* adapter = nullptr);

}  // namespace lcm
