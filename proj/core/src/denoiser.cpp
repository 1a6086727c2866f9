#include "lcm/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lcm/digest.hpp"
#include "lcm/errors.hpp"
#include "lcm/lora.hpp"

namespace lcm {

namespace {

constexpr double kAlphaGuard = 1e-6;

std::string layer_name(std::size_t i, const char* suffix) {
  return "layer" + std::to_string(i) + "." + suffix;
}

Tensor uniform_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  // He-uniform bound; silu behaves close enough to relu for the gain.
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<Scalar> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Scalar>(rng.uniform(-bound, bound));
  return Tensor(shape, std::move(values));
}

// Linear layer, optionally routed through a LoRA entry.
Tensor adapted_linear(const DenoiserNet& net, const std::string& prefix, const Tensor& x,
                      const LoraAdapter* adapter) {
  const std::string wname = prefix + ".weight";
  Tensor y = linear(x, net.param(wname), net.param(prefix + ".bias"));
  if (adapter != nullptr) {
    if (const LoraEntry* e = adapter->find(wname)) {
      Tensor low = linear(linear(x, e->a), e->b);
      y = add(y, e->scale == 1.0 ? low : scale(low, static_cast<Scalar>(e->scale)));
    }
  }
  return y;
}

}  // namespace

std::vector<std::pair<std::string, Shape>> denoiser_layout(const DenoiserConfig& c) {
  if (c.data_dim == 0 || c.time_features == 0 || c.guidance_features == 0 || c.cond_dim == 0 ||
      c.num_conditions == 0) {
    throw InvalidArgument("denoiser dimensions must be positive");
  }
  if (c.time_features % 2 != 0 || c.guidance_features % 2 != 0) {
    throw InvalidArgument("sinusoidal feature counts must be even");
  }
  if (c.hidden.empty()) throw InvalidArgument("denoiser needs at least one hidden layer");
  std::vector<std::pair<std::string, Shape>> layout;
  layout.emplace_back("time_proj.weight", Shape{c.time_features, c.time_features});
  layout.emplace_back("time_proj.bias", Shape{c.time_features});
  layout.emplace_back("omega_proj.weight", Shape{c.guidance_features, c.guidance_features});
  layout.emplace_back("omega_proj.bias", Shape{c.guidance_features});
  layout.emplace_back("cond_table", Shape{c.num_conditions + 1, c.cond_dim});
  std::size_t in = c.data_dim + c.time_features + c.guidance_features + c.cond_dim;
  std::vector<std::size_t> widths = c.hidden;
  widths.push_back(c.data_dim);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] == 0) throw InvalidArgument("hidden widths must be positive");
    layout.emplace_back(layer_name(i, "weight"), Shape{widths[i], in});
    layout.emplace_back(layer_name(i, "bias"), Shape{widths[i]});
    in = widths[i];
  }
  return layout;
}

DenoiserNet::DenoiserNet(DenoiserConfig config, std::vector<NamedTensor> params)
    : config_(std::move(config)), params_(std::move(params)) {}

DenoiserNet DenoiserNet::create(const DenoiserConfig& config, Rng& rng) {
  const auto layout = denoiser_layout(config);
  const std::string last_layer = layer_name(config.hidden.size(), "weight");
  std::vector<NamedTensor> params;
  for (const auto& [name, shape] : layout) {
    Tensor t;
    const bool is_bias = name.ends_with(".bias");
    if (is_bias || name == last_layer) {
      t = Tensor::zeros(shape);  // zero final layer: untrained net predicts ε = 0
    } else if (name == "cond_table") {
      std::vector<Scalar> values(shape_numel(shape));
      for (auto& v : values) v = static_cast<Scalar>(rng.normal());
      t = Tensor(shape, std::move(values));
    } else {
      t = uniform_init(shape, shape[1], rng);
    }
    params.push_back({name, t});
  }
  return DenoiserNet(config, std::move(params));
}

DenoiserNet DenoiserNet::from_parameters(const DenoiserConfig& config,
                                         std::vector<NamedTensor> params) {
  const auto layout = denoiser_layout(config);
  if (layout.size() != params.size()) {
    throw DimensionError("expected " + std::to_string(layout.size()) + " denoiser tensors, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != params[i].name) {
      throw InvalidArgument("denoiser tensor " + std::to_string(i) + " should be '" +
                            layout[i].first + "', got '" + params[i].name + "'");
    }
    if (layout[i].second != params[i].value.shape()) {
      throw DimensionError("tensor '" + params[i].name + "' has shape " +
                           shape_string(params[i].value.shape()) + ", expected " +
                           shape_string(layout[i].second));
    }
  }
  return DenoiserNet(config, std::move(params));
}

const Tensor& DenoiserNet::param(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw InvalidArgument("unknown layer name '" + std::string(name) + "'");
}

bool DenoiserNet::has_param(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const NamedTensor& p) { return p.name == name; });
}

std::size_t DenoiserNet::input_width() const {
  return config_.data_dim + config_.time_features + config_.guidance_features + config_.cond_dim;
}

std::size_t DenoiserNet::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

DenoiserNet DenoiserNet::clone() const {
  std::vector<NamedTensor> copy;
  copy.reserve(params_.size());
  for (const auto& p : params_) copy.push_back({p.name, p.value.clone()});
  return DenoiserNet(config_, std::move(copy));
}

void DenoiserNet::set_trainable(bool on) {
  for (auto& p : params_) p.value.set_requires_grad(on);
}

std::vector<Tensor> DenoiserNet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::string DenoiserNet::fingerprint() const {
  std::ostringstream os;
  for (const auto& p : params_) os << p.name << ':' << shape_string(p.value.shape()) << ';';
  return sha256_hex(os.str()).substr(0, 16);
}

Conditioning make_conditioning(const NoiseSchedule& schedule, std::span<const std::size_t> n,
                               std::span<const double> omega, std::span<const Condition> cond) {
  if (n.size() != cond.size() || omega.size() != cond.size()) {
    throw DimensionError("conditioning: timestep, guidance and condition counts differ");
  }
  Conditioning out;
  out.time.reserve(n.size());
  for (auto idx : n) out.time.push_back(schedule.time(idx));
  out.omega.assign(omega.begin(), omega.end());
  out.cond.assign(cond.begin(), cond.end());
  return out;
}

Tensor sinusoidal_features(std::span<const double> values, std::size_t dims, double scale) {
  if (dims == 0 || dims % 2 != 0) throw InvalidArgument("sinusoidal feature count must be even");
  const std::size_t half = dims / 2;
  std::vector<Scalar> out(values.size() * dims);
  for (std::size_t r = 0; r < values.size(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = scale * values[r] * freq;
      out[r * dims + i] = static_cast<Scalar>(std::sin(arg));
      out[r * dims + half + i] = static_cast<Scalar>(std::cos(arg));
    }
  }
  return Tensor(Shape{values.size(), dims}, std::move(out));
}

Tensor forward_eps(const DenoiserNet& net, const Tensor& z, const Conditioning& inputs,
                   const LoraAdapter* adapter) {
  const auto& cfg = net.config();
  if (z.ndim() != 2 || z.cols() != cfg.data_dim) {
    throw DimensionError("forward_eps: z must be [B x " + std::to_string(cfg.data_dim) + "], got " +
                         shape_string(z.shape()));
  }
  const std::size_t batch = z.rows();
  if (inputs.time.size() != batch || inputs.omega.size() != batch || inputs.cond.size() != batch) {
    throw DimensionError("forward_eps: conditioning rows do not match batch size " +
                         std::to_string(batch));
  }
  std::vector<std::size_t> rows(batch);
  std::vector<double> omega_scaled(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const Condition c = inputs.cond[i];
    if (c.is_null()) {
      rows[i] = cfg.num_conditions;
    } else if (c.id() < cfg.num_conditions) {
      rows[i] = c.id();
    } else {
      throw InvalidArgument("unknown condition id " + std::to_string(c.id()));
    }
    if (!(inputs.omega[i] >= 0.0)) throw InvalidArgument("guidance scale must be non-negative");
    omega_scaled[i] = inputs.omega[i] / cfg.omega_ref;
  }

  const Tensor temb = silu(adapted_linear(net, "time_proj",
                                          sinusoidal_features(inputs.time, cfg.time_features), adapter));
  const Tensor wemb = silu(adapted_linear(
      net, "omega_proj", sinusoidal_features(omega_scaled, cfg.guidance_features), adapter));
  const Tensor cemb = gather_rows(net.param("cond_table"), rows);

  Tensor h = concat_cols({z, temb, wemb, cemb});
  const std::size_t layers = net.num_layers();
  for (std::size_t i = 0; i < layers; ++i) {
    h = adapted_linear(net, "layer" + std::to_string(i), h, adapter);
    if (i + 1 < layers) h = silu(h);
  }
  require_finite(h, "forward_eps output");
  return h;
}

ConsistencyHead ConsistencyHead::for_schedule(const NoiseSchedule& schedule, double sigma_data) {
  return ConsistencyHead{sigma_data, schedule.t_min()};
}

double ConsistencyHead::scaled_time(double t) const { return (t - t_min) / (1.0 - t_min); }

double ConsistencyHead::c_skip(double t) const {
  const double u = scaled_time(t);
  const double s2 = sigma_data * sigma_data;
  return s2 / (u * u + s2);
}

double ConsistencyHead::c_out(double t) const {
  const double u = scaled_time(t);
  return u / std::sqrt(u * u + sigma_data * sigma_data);
}

Tensor consistency_forward(const DenoiserNet& net, const ConsistencyHead& head,
                           const NoiseSchedule& schedule, const Tensor& z,
                           std::span<const std::size_t> n, std::span<const double> omega,
                           std::span<const Condition> cond, const LoraAdapter* adapter) {
  const Conditioning inputs = make_conditioning(schedule, n, omega, cond);
  const Tensor eps = forward_eps(net, z, inputs, adapter);

  // f = c_skip·z + c_out·(z − σ·ε)/α, folded into per-row coefficients on z and ε.
  // At n = 1 the coefficients are exactly (1, 0), so f == z bitwise.
  const std::size_t batch = z.rows(), cols = z.cols();
  std::vector<Scalar> coef_z(batch * cols), coef_eps(batch * cols);
  for (std::size_t r = 0; r < batch; ++r) {
    const TimePoint tp = schedule.at(n[r]);
    if (tp.alpha < kAlphaGuard) {
      throw ScheduleError("alpha(t_" + std::to_string(n[r]) + ") below 1e-6; cannot recover x0");
    }
    const double skip = head.c_skip(tp.t);
    const double out = head.c_out(tp.t);
    const auto cz = static_cast<Scalar>(skip + out / tp.alpha);
    const auto ce = static_cast<Scalar>(out * tp.sigma / tp.alpha);
    std::fill_n(coef_z.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, cz);
    std::fill_n(coef_eps.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, ce);
  }
  const Tensor cz(z.shape(), std::move(coef_z));
  const Tensor ce(z.shape(), std::move(coef_eps));
  return sub(mul(cz, z), mul(ce, eps));
}

}  // namespace lcm
