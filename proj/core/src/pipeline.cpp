#include "lcm/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "lcm/encoder.hpp"
#include "lcm/errors.hpp"
#include "lcm/metrics.hpp"
#include "lcm/rng.hpp"
#include "lcm/sampling.hpp"

namespace lcm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void prepare_dir(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(cfg));
}

void require_same_schedule(const NoiseSchedule& stored, const RunConfig& cfg) {
  const auto& s = cfg.schedule;
  if (stored.steps() != s.steps || stored.beta_min() != s.beta_min || stored.beta_max() != s.beta_max) {
    throw IncompatibleError("checkpoint schedule " + to_json(stored).dump() +
                            " differs from config schedule " + to_json(cfg).at("schedule").dump());
  }
}

fs::path snapshot_dir(const fs::path& out_dir, std::size_t step) {
  return out_dir / ("checkpoint-" + std::to_string(step));
}

}  // namespace

MetricsCsv::MetricsCsv(const fs::path& path, std::size_t every)
    : out_(std::make_shared<std::ofstream>(path)), every_(every == 0 ? 1 : every) {
  if (!*out_) throw Error("cannot write " + path.string());
  *out_ << "step,loss,ema_loss,wall_ms\n";
  out_->precision(std::numeric_limits<double>::max_digits10);
}

MetricsSink MetricsCsv::sink() {
  return [out = out_, every = every_](const MetricsRow& row) {
    if (row.step % every != 0) return;
    *out << row.step << ',' << row.loss << ',' << row.ema_loss << ',' << row.wall_ms << '\n';
    out->flush();
  };
}

DenoiserNet initial_net(const RunConfig& cfg) {
  Rng rng(cfg.seed, "net-init");
  return DenoiserNet::create(cfg.denoiser_config(), rng);
}

Dataset2D training_data(const RunConfig& cfg) {
  return make_dataset(cfg.dataset.spec, cfg.dataset.count, cfg.seed);
}

Dataset2D style_training_data(const RunConfig& cfg) {
  return make_dataset(cfg.style_dataset(), cfg.dataset.count, mix64(cfg.seed ^ hash_tag("style-data")));
}

Dataset2D reference_data(const DatasetSpec& spec, std::size_t count, std::uint64_t seed) {
  return make_dataset(spec, count, mix64(seed ^ hash_tag("reference")));
}

LoraAdapter fresh_adapter(DenoiserNet& net, const RunConfig& cfg, std::string_view purpose) {
  Rng rng(cfg.seed, purpose);
  return attach(net, cfg.lora, rng);
}

NetCheckpoint run_train_teacher(const RunConfig& cfg, const fs::path& out_dir) {
  prepare_dir(out_dir, cfg);
  const NoiseSchedule schedule = cfg.schedule.build();
  const json echo = to_json(cfg);
  MetricsCsv csv(out_dir / "metrics.csv", cfg.log_every);
  Snapshot snap{cfg.checkpoint_every, [&](std::size_t step, const DenoiserNet& net, const LoraAdapter*) {
                  save_net(snapshot_dir(out_dir, step), net, schedule, echo);
                }};
  const DenoiserNet net = train_teacher(training_data(cfg), initial_net(cfg), Encoder::identity(2),
                                        schedule, cfg.teacher_options(), csv.sink(), snap);
  save_net(out_dir / "checkpoint", net, schedule, echo);
  return load_net(out_dir / "checkpoint");
}

AdapterCheckpoint run_distill(const RunConfig& cfg, const fs::path& teacher_dir, const fs::path& out_dir) {
  NetCheckpoint teacher = load_net(teacher_dir);
  require_same_schedule(teacher.schedule, cfg);
  prepare_dir(out_dir, cfg);
  const json echo = to_json(cfg);
  DenoiserNet base = teacher.net.clone();
  const LoraAdapter adapter = fresh_adapter(base, cfg, "lora-accel");
  MetricsCsv csv(out_dir / "metrics.csv", cfg.log_every);
  Snapshot snap{cfg.checkpoint_every, [&](std::size_t step, const DenoiserNet&, const LoraAdapter* a) {
                  save_adapter(snapshot_dir(out_dir, step),
                               AdapterBundle{a->clone(), AdapterRole::kAcceleration, "acceleration", {}},
                               echo);
                }};
  const AdapterBundle bundle = lcd_distill(teacher.net, adapter, training_data(cfg), Encoder::identity(2),
                                           teacher.schedule, cfg.distill_config(), csv.sink(), snap);
  save_adapter(out_dir / "checkpoint", bundle, echo);
  return load_adapter(out_dir / "checkpoint");
}

AdapterCheckpoint run_finetune_style(const RunConfig& cfg, const fs::path& teacher_dir,
                                     const fs::path& out_dir) {
  NetCheckpoint teacher = load_net(teacher_dir);
  require_same_schedule(teacher.schedule, cfg);
  prepare_dir(out_dir, cfg);
  const json echo = to_json(cfg);
  DenoiserNet base = teacher.net.clone();
  const LoraAdapter adapter = fresh_adapter(base, cfg, "lora-style");
  MetricsCsv csv(out_dir / "metrics.csv", cfg.log_every);
  Snapshot snap{cfg.checkpoint_every, [&](std::size_t step, const DenoiserNet&, const LoraAdapter* a) {
                  save_adapter(snapshot_dir(out_dir, step),
                               AdapterBundle{a->clone(), AdapterRole::kStyle, "style", {}}, echo);
                }};
  const AdapterBundle bundle =
      finetune_style_lora(teacher.net, adapter, style_training_data(cfg), Encoder::identity(2),
                          teacher.schedule, cfg.style_options(), csv.sink(), snap);
  save_adapter(out_dir / "checkpoint", bundle, echo);
  return load_adapter(out_dir / "checkpoint");
}

AdapterCheckpoint run_combine(const fs::path& style_dir, const fs::path& accel_dir, double lambda_style,
                              double lambda_accel, const fs::path& out_dir) {
  AdapterCheckpoint style = load_adapter(style_dir);
  AdapterCheckpoint accel = load_adapter(accel_dir);
  style.bundle.name = style_dir.string();
  accel.bundle.name = accel_dir.string();
  const AdapterBundle combined = combine(style.bundle, accel.bundle, lambda_style, lambda_accel);
  save_adapter(out_dir, combined,
               {{"style_sha256", style.sha256}, {"accel_sha256", accel.sha256}});
  return load_adapter(out_dir);
}

NetCheckpoint run_merge(const fs::path& base_dir, const fs::path& adapter_dir, const fs::path& out_dir) {
  const NetCheckpoint base = load_net(base_dir);
  const AdapterCheckpoint adapter = load_adapter(adapter_dir);
  const DenoiserNet merged = merge(base.net, adapter.bundle.adapter);
  save_net(out_dir, merged, base.schedule,
           {{"base_sha256", base.sha256}, {"adapter_sha256", adapter.sha256}});
  return load_net(out_dir);
}

SamplerKind parse_sampler_kind(std::string_view text) {
  if (text == "lcm") return SamplerKind::kLcm;
  if (text == "ddim") return SamplerKind::kDdim;
  throw InvalidArgument("unknown sampler '" + std::string(text) + "' (expected lcm or ddim)");
}

SampleSet draw_samples(const SampleRequest& req) {
  const NetCheckpoint base = load_net(req.base);
  std::optional<AdapterCheckpoint> adapter;
  if (req.adapter) {
    adapter = load_adapter(*req.adapter);
    check_compatible(base.net, adapter->bundle.adapter);
  }
  const LoraAdapter* lora = adapter ? &adapter->bundle.adapter : nullptr;
  const StepSchedule steps(req.steps, base.schedule.steps());
  const std::size_t classes = base.net.config().num_conditions;
  std::vector<Condition> cond(req.count);
  for (std::size_t i = 0; i < req.count; ++i) cond[i] = Condition::of(static_cast<std::uint32_t>(i % classes));

  SampleSet out;
  if (req.sampler == SamplerKind::kLcm) {
    out.x = lcm_multistep_sample(base.net, lora, ConsistencyHead::for_schedule(base.schedule),
                                 base.schedule, steps, req.omega, cond, req.seed);
  } else {
    out.x = ddim_sample(teacher_eps(base.net, lora), base.schedule, steps, req.omega, cond, req.seed,
                        base.net.config().data_dim, req.solver);
  }
  out.cond = std::move(cond);

  json lambda = nullptr;
  if (adapter && adapter->bundle.provenance) {
    lambda = {{"lambda_style", adapter->bundle.provenance->lambda_style},
              {"lambda_accel", adapter->bundle.provenance->lambda_accel}};
  }
  out.sidecar = {{"sampler", req.sampler == SamplerKind::kLcm ? "lcm" : "ddim"},
                 {"S", req.steps},
                 {"omega", req.omega},
                 {"lambda", lambda},
                 {"seed", req.seed},
                 {"count", req.count},
                 {"base_sha256", base.sha256},
                 {"adapter_sha256", adapter ? json(adapter->sha256) : json(nullptr)}};
  if (req.sampler == SamplerKind::kDdim) out.sidecar["solver"] = std::string(to_string(req.solver));
  return out;
}

void write_samples(const fs::path& csv, const SampleSet& samples) {
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  std::ofstream out(csv);
  if (!out) throw Error("cannot write " + csv.string());
  out.precision(std::numeric_limits<double>::max_digits10);
  const std::size_t d = samples.x.cols();
  for (std::size_t c = 0; c < d; ++c) out << 'x' << c << ',';
  out << "condition\n";
  for (std::size_t i = 0; i < samples.x.rows(); ++i) {
    for (std::size_t c = 0; c < d; ++c) out << samples.x.at(i, c) << ',';
    const Condition cond = samples.cond[i];
    if (cond.is_null()) {
      out << "null\n";
    } else {
      out << cond.id() << '\n';
    }
  }
  write_json(fs::path(csv.string() + ".json"), samples.sidecar);
}

SampleSet read_samples(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw Error("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(csv.string() + " is empty");
  const std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (d == 0 || !line.ends_with("condition")) throw Error(csv.string() + " has an unexpected header");
  std::vector<Scalar> values;
  SampleSet out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    for (std::size_t c = 0; c < d; ++c) {
      if (!std::getline(row, cell, ',')) throw Error("short row in " + csv.string());
      values.push_back(static_cast<Scalar>(std::stod(cell)));
    }
    std::getline(row, cell);
    out.cond.push_back(cell == "null" ? Condition::null()
                                      : Condition::of(static_cast<std::uint32_t>(std::stoul(cell))));
  }
  const std::size_t n = out.cond.size();
  out.x = Tensor(Shape{n, d}, std::move(values));
  return out;
}

EvalResult evaluate(const Tensor& samples, const DatasetSpec& reference_spec, std::size_t count,
                    std::uint64_t seed, std::optional<double> bandwidth) {
  const Dataset2D ref = reference_data(reference_spec, count, seed);
  EvalResult r;
  r.bandwidth = bandwidth ? *bandwidth : median_heuristic_bandwidth(samples, ref.x);
  r.mmd2 = mmd2(samples, ref.x, r.bandwidth);
  r.samples = samples.rows();
  r.reference = ref.size();
  return r;
}

GradCheckReport lcd_gradcheck(const std::vector<std::size_t>& widths, std::size_t rank,
                              std::size_t batch, std::uint64_t seed, double h) {
  DenoiserConfig config;
  config.hidden = widths;
  Rng rng(seed, "gradcheck");
  DenoiserNet created = DenoiserNet::create(config, rng);
  // Perturb every parameter so the zero-initialized output layer carries signal.
  std::vector<NamedTensor> params;
  for (const auto& p : created.parameters()) {
    std::vector<Scalar> v(p.value.data().begin(), p.value.data().end());
    for (auto& x : v) x += static_cast<Scalar>(0.1 * rng.normal());
    params.push_back({p.name, Tensor(p.value.shape(), std::move(v))});
  }
  DenoiserNet net = DenoiserNet::from_parameters(config, std::move(params));
  LoraSpec spec;
  spec.rank = rank;
  LoraAdapter fresh = attach(net, spec, rng);
  LoraAdapter student;
  student.set_base_fingerprint(fresh.base_fingerprint());
  for (const auto& [name, e] : fresh.entries()) {
    std::vector<Scalar> b(e.b.numel());
    for (auto& x : b) x = static_cast<Scalar>(0.1 * rng.normal());
    student.insert(name, LoraEntry{e.a.clone(), Tensor(e.b.shape(), std::move(b)), e.rank, e.scale});
  }
  // θ⁻ ≠ θ so the target branch is a genuine, distinct input.
  LoraAdapter target = student.clone();
  for (auto& t : target.factors()) {
    for (auto& x : t.data_mut()) x += static_cast<Scalar>(0.05 * rng.normal());
  }
  student.set_trainable(true);

  const NoiseSchedule schedule = NoiseSchedule::linear(50, 1e-4, 0.05);
  DistillConfig cfg;
  cfg.batch = batch;
  cfg.seed = seed;
  const Dataset2D data = make_dataset(DatasetSpec{}, 64, seed);
  const LcdBatch lcd = sample_lcd_batch(data.x, data.cond, cfg, schedule, 0);
  const ConsistencyHead head = ConsistencyHead::for_schedule(schedule);
  return grad_check([&] { return lcd_loss(net, student, target, head, schedule, cfg, lcd); },
                    student.factors(), h);
}

}  // namespace lcm
