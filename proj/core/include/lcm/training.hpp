#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "lcm/datasets.hpp"
#include "lcm/denoiser.hpp"
#include "lcm/encoder.hpp"
#include "lcm/lora.hpp"
#include "lcm/schedule.hpp"
#include "lcm/solvers.hpp"
#include "lcm/tensor.hpp"

namespace lcm {

enum class OptimizerKind { kSgd, kAdam };
std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);

// Plain gradient descent (θ ← θ − η∇) or Adam, over a fixed parameter list.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::vector<Tensor> params);
  void step();
  double lr() const { return lr_; }
  void set_lr(double lr);

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

enum class LrSchedule { kConstant, kCosine };
std::string_view to_string(LrSchedule schedule);
LrSchedule parse_lr_schedule(std::string_view text);
// Rate for 0-based `step` of `total`: constant, or half-cosine from base to 0.
double scheduled_lr(LrSchedule schedule, double base, std::size_t step, std::size_t total);

enum class DistanceKind { kL2, kPseudoHuber };

// d(a, b) per row, averaged over the batch:
// l2 = ‖a − b‖², pseudo-huber = √(‖a − b‖² + c²) − c.
struct Distance {
  DistanceKind kind = DistanceKind::kL2;
  double huber_c = 0.01;
};
std::string_view to_string(DistanceKind kind);
DistanceKind parse_distance_kind(std::string_view text);
Tensor distance(const Distance& d, const Tensor& a, const Tensor& b);

struct GuidanceMode {
  bool fixed = true;
  double omega = 7.5;  // fixed-mode guidance used during distillation
  double omega_min = 2.0;
  double omega_max = 14.0;
};

struct DistillConfig {
  double lr = 3e-4;
  double ema_rate = 0.95;
  std::size_t skip = 5;  // k
  GuidanceMode guidance;
  Distance distance;
  SolverKind solver = SolverKind::kDdim;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  std::size_t steps = 10000;
  std::size_t batch = 256;
  std::uint64_t seed = 0;

  void validate(const NoiseSchedule& schedule) const;
};

struct TeacherOptions {
  std::size_t steps = 20000;
  double lr = 1e-3;
  std::size_t batch = 256;
  double p_uncond = 0.1;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  LrSchedule lr_schedule = LrSchedule::kCosine;
};

struct MetricsRow {
  std::size_t step = 0;
  double loss = 0.0;
  double ema_loss = 0.0;  // exponentially smoothed loss (factor 0.99)
  double wall_ms = 0.0;
};
using MetricsSink = std::function<void(const MetricsRow&)>;

// Periodic hook for intermediate checkpoints: fn(step, net, adapter) after
// every `every` completed steps. `adapter` is null for full-network training.
struct Snapshot {
  std::size_t every = 0;
  std::function<void(std::size_t, const DenoiserNet&, const LoraAdapter*)> fn;

  void maybe(std::size_t step, const DenoiserNet& net, const LoraAdapter* adapter) const {
    if (every > 0 && fn && (step + 1) % every == 0) fn(step + 1, net, adapter);
  }
};

// Target-network parameters θ⁻. Starts as a deep copy of θ.
class EmaShadow {
 public:
  explicit EmaShadow(const LoraAdapter& live);
  // θ⁻ ← μθ⁻ + (1−μ)θ, in place and off the tape.
  void update(const LoraAdapter& live, double mu);
  const LoraAdapter& adapter() const { return shadow_; }

 private:
  LoraAdapter shadow_;
};

void ema_update(LoraAdapter& shadow, const LoraAdapter& live, double mu);

/// Diffusion (ε-matching) training of every network parameter, with the
/// condition replaced by ∅ with probability p_uncond. The guidance input is
/// held at 0. Returns the trained copy; `init` is untouched.
DenoiserNet train_teacher(const Dataset2D& data, const DenoiserNet& init, const Encoder& encoder,
                          const NoiseSchedule& schedule, const TeacherOptions& opts,
                          const MetricsSink& sink = {}, const Snapshot& snapshot = {});

/// Same objective as train_teacher, but only the adapter's factors move.
AdapterBundle finetune_style_lora(const DenoiserNet& teacher, const LoraAdapter& adapter,
                                  const Dataset2D& style_data, const Encoder& encoder,
                                  const NoiseSchedule& schedule, const TeacherOptions& opts,
                                  const MetricsSink& sink = {},
                                  const Snapshot& snapshot = {});

// One (n, ω) draw: n ~ U{1, …, N−k}; ω fixed or ~ U[ω_min, ω_max].
struct LcdDraw {
  std::size_t n = 1;
  double omega = 0.0;
};
LcdDraw draw_timestep_and_guidance(const DistillConfig& cfg, const NoiseSchedule& schedule, Rng& rng);

struct LcdBatch {
  Tensor z;                        // clean latents
  std::vector<Condition> cond;
  std::vector<std::size_t> n;      // lower timestep; the noised point sits at n + k
  std::vector<double> omega;
  Tensor noise;
};

// Batch for optimization step `step`, drawn from stream (seed, "lcd", step).
LcdBatch sample_lcd_batch(const Tensor& latents, std::span<const Condition> cond,
                          const DistillConfig& cfg, const NoiseSchedule& schedule, std::size_t step);

/// d(f_θ(z_hi, ω, c, n_hi), stopgrad f_θ⁻(z_target, ω, c, n_lo)).
Tensor consistency_loss(const DenoiserNet& net, const ConsistencyHead& head,
                        const NoiseSchedule& schedule, const Distance& dist,
                        const LoraAdapter& student, const LoraAdapter& target,
                        const Tensor& z_hi, std::span<const std::size_t> n_hi,
                        const Tensor& z_target, std::span<const std::size_t> n_lo,
                        std::span<const double> omega, std::span<const Condition> cond);

/// Full LCD objective for one batch: noise to t_{n+k}, build the guided
/// teacher target ẑ at t_n with cfg_target (base weights only), then
/// consistency_loss against the EMA adapter.
Tensor lcd_loss(const DenoiserNet& teacher, const LoraAdapter& student, const LoraAdapter& target,
                const ConsistencyHead& head, const NoiseSchedule& schedule,
                const DistillConfig& cfg, const LcdBatch& batch);

/// Latent consistency distillation with LoRA-only trainable parameters.
/// Latents are encoded once; the teacher is never modified.
AdapterBundle lcd_distill(const DenoiserNet& teacher, const LoraAdapter& adapter,
                          const Dataset2D& data, const Encoder& encoder,
                          const NoiseSchedule& schedule, const DistillConfig& cfg,
                          const MetricsSink& sink = {}, const Snapshot& snapshot = {});

}  // namespace lcm
