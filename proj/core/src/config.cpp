#include "lcm/config.hpp"

#include <fstream>
#include <set>

#include "lcm/errors.hpp"

namespace lcm {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& j, std::string path, std::set<std::string> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be a JSON object");
    for (const auto& [key, value] : j_.items()) {
      if (!allowed.contains(key)) throw ConfigError("unknown config key '" + qualify(key) + "'");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + qualify(key) + "' has the wrong type");
    }
  }

  template <typename Enum, typename Parse>
  void get_enum(const std::string& key, Enum& out, Parse parse) const {
    std::string text;
    get(key, text);
    if (text.empty()) return;
    try {
      out = parse(text);
    } catch (const InvalidArgument& e) {
      throw ConfigError("config key '" + qualify(key) + "': " + e.what());
    }
  }

  const json* child(const std::string& key) const {
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string qualify(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
};

void parse_train(const Section& s, TrainConfig& t) {
  s.get("steps", t.steps);
  s.get("lr", t.lr);
  s.get("batch", t.batch);
  s.get("p_uncond", t.p_uncond);
  s.get_enum("optimizer", t.optimizer, parse_optimizer_kind);
  s.get_enum("lr_schedule", t.lr_schedule, parse_lr_schedule);
}

json train_json(const TrainConfig& t) {
  return {{"steps", t.steps}, {"lr", t.lr}, {"batch", t.batch}, {"p_uncond", t.p_uncond},
          {"optimizer", std::string(to_string(t.optimizer))},
          {"lr_schedule", std::string(to_string(t.lr_schedule))}};
}

const std::set<std::string> kTrainKeys = {"steps", "lr", "batch", "p_uncond", "optimizer", "lr_schedule"};

}  // namespace

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig c;
  c.data_dim = 2;
  c.hidden = net.widths;
  c.time_features = net.time_features;
  c.guidance_features = net.guidance_features;
  c.cond_dim = net.cond_dim;
  c.num_conditions = num_conditions(dataset.spec);
  c.omega_ref = net.omega_ref;
  return c;
}

TeacherOptions RunConfig::teacher_options() const {
  return TeacherOptions{teacher.steps, teacher.lr, teacher.batch, teacher.p_uncond, seed,
                        teacher.optimizer, teacher.lr_schedule};
}

TeacherOptions RunConfig::style_options() const {
  return TeacherOptions{style.steps, style.lr, style.batch, style.p_uncond, seed, style.optimizer,
                        style.lr_schedule};
}

DistillConfig RunConfig::distill_config() const {
  DistillConfig c = distill;
  c.seed = seed;
  return c;
}

DatasetSpec RunConfig::style_dataset() const {
  DatasetSpec s = dataset.spec;
  s.rotation_deg += dataset.style_rotation_deg;
  return s;
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  const Section root(j, "",
                     {"schedule", "net", "teacher", "style", "distill", "lora", "sample", "combine",
                      "dataset", "eval", "seed", "log_every", "checkpoint_every"});
  root.get("seed", c.seed);
  root.get("log_every", c.log_every);
  root.get("checkpoint_every", c.checkpoint_every);

  if (const json* s = root.child("schedule")) {
    const Section sec(*s, "schedule", {"N", "beta_min", "beta_max"});
    sec.get("N", c.schedule.steps);
    sec.get("beta_min", c.schedule.beta_min);
    sec.get("beta_max", c.schedule.beta_max);
  }
  if (const json* s = root.child("net")) {
    const Section sec(*s, "net", {"widths", "time_features", "guidance_features", "cond_dim", "omega_ref"});
    sec.get("widths", c.net.widths);
    sec.get("time_features", c.net.time_features);
    sec.get("guidance_features", c.net.guidance_features);
    sec.get("cond_dim", c.net.cond_dim);
    sec.get("omega_ref", c.net.omega_ref);
  }
  if (const json* s = root.child("teacher")) parse_train(Section(*s, "teacher", kTrainKeys), c.teacher);
  if (const json* s = root.child("style")) parse_train(Section(*s, "style", kTrainKeys), c.style);
  if (const json* s = root.child("distill")) {
    const Section sec(*s, "distill",
                      {"lr", "ema_rate", "skip", "guidance", "omega", "omega_min", "omega_max",
                       "distance", "huber_c", "solver", "optimizer", "lr_schedule", "steps", "batch"});
    auto& d = c.distill;
    sec.get("lr", d.lr);
    sec.get("ema_rate", d.ema_rate);
    sec.get("skip", d.skip);
    std::string mode;
    sec.get("guidance", mode);
    if (!mode.empty()) {
      if (mode != "fixed" && mode != "range") {
        throw ConfigError("config key 'distill.guidance' must be \"fixed\" or \"range\"");
      }
      d.guidance.fixed = mode == "fixed";
    }
    sec.get("omega", d.guidance.omega);
    sec.get("omega_min", d.guidance.omega_min);
    sec.get("omega_max", d.guidance.omega_max);
    sec.get_enum("distance", d.distance.kind, parse_distance_kind);
    sec.get("huber_c", d.distance.huber_c);
    sec.get_enum("solver", d.solver, parse_solver_kind);
    sec.get_enum("optimizer", d.optimizer, parse_optimizer_kind);
    sec.get_enum("lr_schedule", d.lr_schedule, parse_lr_schedule);
    sec.get("steps", d.steps);
    sec.get("batch", d.batch);
  }
  if (const json* s = root.child("lora")) {
    const Section sec(*s, "lora", {"rank", "scale", "targets"});
    sec.get("rank", c.lora.rank);
    sec.get("scale", c.lora.scale);
    sec.get("targets", c.lora.targets);
  }
  if (const json* s = root.child("sample")) {
    const Section sec(*s, "sample", {"S", "omega", "count"});
    sec.get("S", c.sample.steps);
    sec.get("omega", c.sample.omega);
    sec.get("count", c.sample.count);
  }
  if (const json* s = root.child("combine")) {
    const Section sec(*s, "combine", {"lambda_style", "lambda_accel"});
    sec.get("lambda_style", c.combine.lambda_style);
    sec.get("lambda_accel", c.combine.lambda_accel);
  }
  if (const json* s = root.child("dataset")) {
    const Section sec(*s, "dataset",
                      {"kind", "radius", "component_std", "mean", "scale", "rotation_deg", "count",
                       "style_rotation_deg"});
    auto& d = c.dataset;
    sec.get_enum("kind", d.spec.kind, parse_dataset_kind);
    sec.get("radius", d.spec.radius);
    sec.get("component_std", d.spec.component_std);
    sec.get("mean", d.spec.mean);
    sec.get("scale", d.spec.scale);
    sec.get("rotation_deg", d.spec.rotation_deg);
    sec.get("count", d.count);
    sec.get("style_rotation_deg", d.style_rotation_deg);
  }
  if (const json* s = root.child("eval")) {
    const Section sec(*s, "eval", {"count", "seeds", "teacher_omega"});
    sec.get("count", c.eval.count);
    sec.get("seeds", c.eval.seeds);
    sec.get("teacher_omega", c.eval.teacher_omega);
  }

  // Semantic checks, still before any compute.
  try {
    const NoiseSchedule schedule = c.schedule.build();
    c.distill_config().validate(schedule);
    if (c.sample.steps < 1 || c.sample.steps > schedule.steps()) {
      throw InvalidArgument("sample.S must lie in [1, N]");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  if (c.net.widths.empty()) throw ConfigError("net.widths must list at least one hidden layer");
  if (c.lora.rank == 0) throw ConfigError("lora.rank must be at least 1");
  if (c.dataset.count == 0) throw ConfigError("dataset.count must be positive");
  if (c.log_every == 0) throw ConfigError("log_every must be positive");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  const auto& d = c.distill;
  return {
      {"seed", c.seed},
      {"log_every", c.log_every},
      {"checkpoint_every", c.checkpoint_every},
      {"schedule", {{"N", c.schedule.steps}, {"beta_min", c.schedule.beta_min}, {"beta_max", c.schedule.beta_max}}},
      {"net",
       {{"widths", c.net.widths},
        {"time_features", c.net.time_features},
        {"guidance_features", c.net.guidance_features},
        {"cond_dim", c.net.cond_dim},
        {"omega_ref", c.net.omega_ref}}},
      {"teacher", train_json(c.teacher)},
      {"style", train_json(c.style)},
      {"distill",
       {{"lr", d.lr},
        {"ema_rate", d.ema_rate},
        {"skip", d.skip},
        {"guidance", d.guidance.fixed ? "fixed" : "range"},
        {"omega", d.guidance.omega},
        {"omega_min", d.guidance.omega_min},
        {"omega_max", d.guidance.omega_max},
        {"distance", std::string(to_string(d.distance.kind))},
        {"huber_c", d.distance.huber_c},
        {"solver", std::string(to_string(d.solver))},
        {"optimizer", std::string(to_string(d.optimizer))},
        {"lr_schedule", std::string(to_string(d.lr_schedule))},
        {"steps", d.steps},
        {"batch", d.batch}}},
      {"lora", {{"rank", c.lora.rank}, {"scale", c.lora.scale}, {"targets", c.lora.targets}}},
      {"sample", {{"S", c.sample.steps}, {"omega", c.sample.omega}, {"count", c.sample.count}}},
      {"combine", {{"lambda_style", c.combine.lambda_style}, {"lambda_accel", c.combine.lambda_accel}}},
      {"dataset",
       {{"kind", std::string(to_string(c.dataset.spec.kind))},
        {"radius", c.dataset.spec.radius},
        {"component_std", c.dataset.spec.component_std},
        {"mean", c.dataset.spec.mean},
        {"scale", c.dataset.spec.scale},
        {"rotation_deg", c.dataset.spec.rotation_deg},
        {"count", c.dataset.count},
        {"style_rotation_deg", c.dataset.style_rotation_deg}}},
      {"eval", {{"count", c.eval.count}, {"seeds", c.eval.seeds}, {"teacher_omega", c.eval.teacher_omega}}},
  };
}

}  // namespace lcm
