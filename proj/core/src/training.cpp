#include "lcm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "lcm/errors.hpp"

namespace lcm {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

class LossTracker {
 public:
  MetricsRow push(std::size_t step, double loss, Clock::time_point start) {
    smoothed_ = first_ ? loss : 0.99 * smoothed_ + 0.01 * loss;
    first_ = false;
    return MetricsRow{step, loss, smoothed_, elapsed_ms(start)};
  }

 private:
  bool first_ = true;
  double smoothed_ = 0.0;
};

void check_dataset(const Dataset2D& data, const Encoder& encoder) {
  if (data.size() == 0) throw InvalidArgument("empty dataset");
  if (data.x.cols() != encoder.dim()) throw DimensionError("encoder width does not match data");
}

// Shared ε-matching loop for the teacher and style adapters.
void fit_diffusion(const DenoiserNet& net, const LoraAdapter* adapter,
                   std::vector<Tensor> trainable, const Dataset2D& data, const Encoder& encoder,
                   const NoiseSchedule& schedule, const TeacherOptions& opts,
                   const MetricsSink& sink, const Snapshot& snapshot, std::string_view tag) {
  check_dataset(data, encoder);
  if (!(opts.p_uncond >= 0.0 && opts.p_uncond < 1.0)) {
    throw InvalidArgument("p_uncond must lie in [0, 1)");
  }
  if (opts.batch == 0) throw InvalidArgument("batch size must be positive");
  const Tensor latents = encoder.encode(data.x);
  const std::size_t d = latents.cols();
  const std::size_t steps_n = schedule.steps();
  Optimizer optim(opts.optimizer, opts.lr, trainable);
  LossTracker tracker;
  const auto start = Clock::now();

  for (std::size_t step = 0; step < opts.steps; ++step) {
    optim.set_lr(scheduled_lr(opts.lr_schedule, opts.lr, step, opts.steps));
    Rng rng(opts.seed, tag, step);
    std::vector<Scalar> z(opts.batch * d), eps(opts.batch * d);
    std::vector<std::size_t> n(opts.batch);
    Conditioning in;
    in.omega.assign(opts.batch, 0.0);
    in.cond.resize(opts.batch);
    in.time.resize(opts.batch);
    for (std::size_t b = 0; b < opts.batch; ++b) {
      const std::size_t idx = rng.uniform_index(data.size());
      for (std::size_t c = 0; c < d; ++c) z[b * d + c] = latents.at(idx, c);
      n[b] = 1 + rng.uniform_index(steps_n);
      in.time[b] = schedule.time(n[b]);
      in.cond[b] = rng.uniform() < opts.p_uncond ? Condition::null() : data.cond[idx];
      for (std::size_t c = 0; c < d; ++c) eps[b * d + c] = static_cast<Scalar>(rng.normal());
    }
    const Tensor eps_t(Shape{opts.batch, d}, std::move(eps));
    const Tensor z_t = add_noise(Tensor(Shape{opts.batch, d}, std::move(z)), n, eps_t, schedule);

    Tape tape;
    double loss_value = 0.0;
    {
      TapeScope scope(tape);
      const Tensor pred = forward_eps(net, z_t, in, adapter);
      const Tensor loss = scale(sum(square(sub(pred, eps_t))), Scalar(1) / static_cast<Scalar>(opts.batch));
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericError("diffusion loss diverged at step " + std::to_string(step));
      }
      tape.backward(loss);
    }
    optim.step();
    const MetricsRow row = tracker.push(step, loss_value, start);
    if (sink) sink(row);
    snapshot.maybe(step, net, adapter);
  }
}

}  // namespace

// ---- optimizer ------------------------------------------------------------

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd") return OptimizerKind::kSgd;
  if (text == "adam") return OptimizerKind::kAdam;
  throw InvalidArgument("unknown optimizer '" + std::string(text) + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double lr, std::vector<Tensor> params)
    : kind_(kind), lr_(lr), params_(std::move(params)) {
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (kind_ == OptimizerKind::kAdam) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
}

void Optimizer::set_lr(double lr) {
  if (!(lr >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
  lr_ = lr;
}

std::string_view to_string(LrSchedule schedule) {
  return schedule == LrSchedule::kConstant ? "constant" : "cosine";
}

LrSchedule parse_lr_schedule(std::string_view text) {
  if (text == "constant") return LrSchedule::kConstant;
  if (text == "cosine") return LrSchedule::kCosine;
  throw InvalidArgument("unknown learning-rate schedule '" + std::string(text) + "'");
}

double scheduled_lr(LrSchedule schedule, double base, std::size_t step, std::size_t total) {
  if (schedule == LrSchedule::kConstant || total == 0) return base;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * progress));
}

void Optimizer::step() {
  ++t_;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    const auto g = p.grad_view();
    if (g.empty()) continue;
    auto w = p.data_mut();
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= static_cast<Scalar>(lr_ * g[i]);
      continue;
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      w[i] -= static_cast<Scalar>(lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps));
    }
  }
}

// ---- distance -------------------------------------------------------------

std::string_view to_string(DistanceKind kind) {
  return kind == DistanceKind::kL2 ? "l2" : "pseudo-huber";
}

DistanceKind parse_distance_kind(std::string_view text) {
  if (text == "l2") return DistanceKind::kL2;
  if (text == "pseudo-huber") return DistanceKind::kPseudoHuber;
  throw InvalidArgument("unknown distance '" + std::string(text) + "'");
}

Tensor distance(const Distance& d, const Tensor& a, const Tensor& b) {
  const Tensor sq = sum_rows(square(sub(a, b)));
  if (d.kind == DistanceKind::kL2) return mean(sq);
  if (!(d.huber_c > 0.0)) throw InvalidArgument("pseudo-huber constant must be positive");
  const auto c = static_cast<Scalar>(d.huber_c);
  return add_scalar(mean(sqrt(add_scalar(sq, c * c))), -c);
}

// ---- EMA ------------------------------------------------------------------

void ema_update(LoraAdapter& shadow, const LoraAdapter& live, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw InvalidArgument("EMA rate must lie in [0, 1]");
  if (!std::ranges::equal(shadow.entries(), live.entries(),
                          [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw DimensionError("EMA shadow does not match live adapter");
  }
  auto target = shadow.factors();
  const auto source = live.factors();
  const auto keep = static_cast<Scalar>(mu);
  const auto take = static_cast<Scalar>(1.0 - mu);
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k].shape() != source[k].shape()) {
      throw DimensionError("EMA shadow factor shape mismatch");
    }
    auto dst = target[k].data_mut();
    const auto src = source[k].data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (mu == 1.0) continue;
      dst[i] = mu == 0.0 ? src[i] : keep * dst[i] + take * src[i];
    }
  }
}

EmaShadow::EmaShadow(const LoraAdapter& live) : shadow_(live.clone()) {}

void EmaShadow::update(const LoraAdapter& live, double mu) { ema_update(shadow_, live, mu); }

// ---- teacher / style ------------------------------------------------------

DenoiserNet train_teacher(const Dataset2D& data, const DenoiserNet& init, const Encoder& encoder,
                          const NoiseSchedule& schedule, const TeacherOptions& opts,
                          const MetricsSink& sink, const Snapshot& snapshot) {
  DenoiserNet net = init.clone();
  net.set_trainable(true);
  fit_diffusion(net, nullptr, net.tensors(), data, encoder, schedule, opts, sink, snapshot, "teacher");
  net.set_trainable(false);
  return net;
}

AdapterBundle finetune_style_lora(const DenoiserNet& teacher, const LoraAdapter& adapter,
                                  const Dataset2D& style_data, const Encoder& encoder,
                                  const NoiseSchedule& schedule, const TeacherOptions& opts,
                                  const MetricsSink& sink, const Snapshot& snapshot) {
  check_compatible(teacher, adapter);
  const DenoiserNet base = teacher.clone();  // clones are frozen
  LoraAdapter live = adapter.clone();
  live.set_trainable(true);
  fit_diffusion(base, &live, live.factors(), style_data, encoder, schedule, opts, sink, snapshot, "style");
  live.set_trainable(false);
  AdapterBundle bundle;
  bundle.adapter = std::move(live);
  bundle.role = AdapterRole::kStyle;
  bundle.name = "style";
  return bundle;
}

// ---- LCD ------------------------------------------------------------------

void DistillConfig::validate(const NoiseSchedule& schedule) const {
  if (skip < 1 || skip > schedule.steps() - 1) {
    throw InvalidArgument("skipping interval k=" + std::to_string(skip) + " outside [1, " +
                          std::to_string(schedule.steps() - 1) + "]");
  }
  if (!(ema_rate >= 0.0 && ema_rate <= 1.0)) throw InvalidArgument("EMA rate must lie in [0, 1]");
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (guidance.fixed) {
    if (!(guidance.omega >= 0.0)) throw InvalidArgument("guidance scale must be non-negative");
  } else if (!(guidance.omega_min >= 0.0 && guidance.omega_min <= guidance.omega_max)) {
    throw InvalidArgument("guidance range must satisfy 0 <= omega_min <= omega_max");
  }
  if (batch == 0) throw InvalidArgument("batch size must be positive");
}

LcdDraw draw_timestep_and_guidance(const DistillConfig& cfg, const NoiseSchedule& schedule, Rng& rng) {
  LcdDraw draw;
  draw.n = 1 + rng.uniform_index(schedule.steps() - cfg.skip);
  draw.omega = cfg.guidance.fixed ? cfg.guidance.omega
                                  : rng.uniform(cfg.guidance.omega_min, cfg.guidance.omega_max);
  return draw;
}

LcdBatch sample_lcd_batch(const Tensor& latents, std::span<const Condition> cond,
                          const DistillConfig& cfg, const NoiseSchedule& schedule, std::size_t step) {
  const std::size_t d = latents.cols();
  const std::size_t count = latents.rows();
  Rng rng(cfg.seed, "lcd", step);
  LcdBatch batch;
  std::vector<Scalar> z(cfg.batch * d), noise(cfg.batch * d);
  batch.cond.resize(cfg.batch);
  batch.n.resize(cfg.batch);
  batch.omega.resize(cfg.batch);
  for (std::size_t b = 0; b < cfg.batch; ++b) {
    const std::size_t idx = rng.uniform_index(count);
    for (std::size_t c = 0; c < d; ++c) z[b * d + c] = latents.at(idx, c);
    batch.cond[b] = cond[idx];
    const LcdDraw draw = draw_timestep_and_guidance(cfg, schedule, rng);
    batch.n[b] = draw.n;
    batch.omega[b] = draw.omega;
    for (std::size_t c = 0; c < d; ++c) noise[b * d + c] = static_cast<Scalar>(rng.normal());
  }
  batch.z = Tensor(Shape{cfg.batch, d}, std::move(z));
  batch.noise = Tensor(Shape{cfg.batch, d}, std::move(noise));
  return batch;
}

Tensor consistency_loss(const DenoiserNet& net, const ConsistencyHead& head,
                        const NoiseSchedule& schedule, const Distance& dist,
                        const LoraAdapter& student, const LoraAdapter& target,
                        const Tensor& z_hi, std::span<const std::size_t> n_hi,
                        const Tensor& z_target, std::span<const std::size_t> n_lo,
                        std::span<const double> omega, std::span<const Condition> cond) {
  Tensor target_value;
  {
    NoGradScope no_grad;
    target_value = stop_gradient(
        consistency_forward(net, head, schedule, z_target, n_lo, omega, cond, &target));
  }
  const Tensor pred = consistency_forward(net, head, schedule, z_hi, n_hi, omega, cond, &student);
  return distance(dist, pred, target_value);
}

Tensor lcd_loss(const DenoiserNet& teacher, const LoraAdapter& student, const LoraAdapter& target,
                const ConsistencyHead& head, const NoiseSchedule& schedule,
                const DistillConfig& cfg, const LcdBatch& batch) {
  std::vector<std::size_t> n_hi(batch.n.size());
  for (std::size_t i = 0; i < n_hi.size(); ++i) n_hi[i] = batch.n[i] + cfg.skip;
  const Tensor z_hi = add_noise(batch.z, n_hi, batch.noise, schedule);
  Tensor z_hat;
  {
    NoGradScope no_grad;
    z_hat = cfg_target(cfg.solver, schedule, teacher_eps(teacher), z_hi, n_hi, batch.n, batch.cond,
                       batch.omega);
  }
  const Tensor loss = consistency_loss(teacher, head, schedule, cfg.distance, student, target, z_hi,
                                       n_hi, z_hat, batch.n, batch.omega, batch.cond);
  if (!std::isfinite(loss.item())) throw NumericError("non-finite LCD loss");
  return loss;
}

AdapterBundle lcd_distill(const DenoiserNet& teacher, const LoraAdapter& adapter,
                          const Dataset2D& data, const Encoder& encoder,
                          const NoiseSchedule& schedule, const DistillConfig& cfg,
                          const MetricsSink& sink, const Snapshot& snapshot) {
  cfg.validate(schedule);
  check_dataset(data, encoder);
  check_compatible(teacher, adapter);

  const DenoiserNet base = teacher.clone();  // frozen copy; the caller's teacher is never touched
  const Tensor latents = encoder.encode(data.x);
  const ConsistencyHead head = ConsistencyHead::for_schedule(schedule);

  LoraAdapter student = adapter.clone();
  student.set_trainable(true);
  EmaShadow shadow(student);  // θ⁻ ← θ
  Optimizer optim(cfg.optimizer, cfg.lr, student.factors());
  LossTracker tracker;
  const auto start = Clock::now();

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    optim.set_lr(scheduled_lr(cfg.lr_schedule, cfg.lr, step, cfg.steps));
    const LcdBatch batch = sample_lcd_batch(latents, data.cond, cfg, schedule, step);
    Tape tape;
    double loss_value = 0.0;
    {
      TapeScope scope(tape);
      const Tensor loss = lcd_loss(base, student, shadow.adapter(), head, schedule, cfg, batch);
      loss_value = loss.item();
      tape.backward(loss);
    }
    optim.step();
    shadow.update(student, cfg.ema_rate);
    const MetricsRow row = tracker.push(step, loss_value, start);
    if (sink) sink(row);
    snapshot.maybe(step, base, &student);
  }

  student.set_trainable(false);
  AdapterBundle bundle;
  bundle.adapter = std::move(student);
  bundle.role = AdapterRole::kAcceleration;
  bundle.name = "acceleration";
  return bundle;
}

}  // namespace lcm
