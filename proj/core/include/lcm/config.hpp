#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcm/datasets.hpp"
#include "lcm/denoiser.hpp"
#include "lcm/lora.hpp"
#include "lcm/sampling.hpp"
#include "lcm/schedule.hpp"
#include "lcm/training.hpp"

namespace lcm {

struct ScheduleConfig {
  std::size_t steps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.05;

  NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_min, beta_max); }
};

struct NetConfig {
  std::vector<std::size_t> widths = {128, 128, 128};
  std::size_t time_features = 16;
  std::size_t guidance_features = 8;
  std::size_t cond_dim = 8;
  double omega_ref = 10.0;
};

struct TrainConfig {
  std::size_t steps = 20000;
  double lr = 1e-3;
  std::size_t batch = 256;
  double p_uncond = 0.1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  LrSchedule lr_schedule = LrSchedule::kCosine;
};

struct SampleConfig {
  std::size_t steps = kDefaultLcmSteps;  // S
  double omega = 7.5;
  std::size_t count = 2000;
};

struct CombineConfig {
  double lambda_style = kDefaultStyleWeight;
  double lambda_accel = kDefaultAccelWeight;
};

struct DatasetConfig {
  DatasetSpec spec;
  std::size_t count = 20000;
  double style_rotation_deg = 22.5;  // style fine-tuning set = base set rotated by this angle
};

struct EvalConfig {
  std::size_t count = 2000;  // reference samples
  std::size_t seeds = 5;
  double teacher_omega = 2.0;
};

struct RunConfig {
  ScheduleConfig schedule;
  NetConfig net;
  TrainConfig teacher;
  TrainConfig style = {5000, 1e-3, 256, 0.1, OptimizerKind::kAdam, LrSchedule::kCosine};
  DistillConfig distill;
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  LoraSpec lora;
  SampleConfig sample;
  CombineConfig combine;
  DatasetConfig dataset;
  EvalConfig eval;
  std::uint64_t seed = 0;

  DenoiserConfig denoiser_config() const;
  TeacherOptions teacher_options() const;
  TeacherOptions style_options() const;
  // distill with the run seed filled in.
  DistillConfig distill_config() const;
  DatasetSpec style_dataset() const;
};

/// Strict: every unknown key (at any level) raises ConfigError before any
/// value is used. Missing keys take their defaults.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Effective config with every default materialized.
nlohmann::json to_json(const RunConfig& config);

}  // namespace lcm
