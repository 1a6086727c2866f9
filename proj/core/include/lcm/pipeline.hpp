#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcm/checkpoint.hpp"
#include "lcm/config.hpp"
#include "lcm/gradcheck.hpp"

namespace lcm {

// Writes "step,loss,ema_loss,wall_ms" rows every `every` steps (and step 0).
class MetricsCsv {
 public:
  MetricsCsv(const std::filesystem::path& path, std::size_t every);

  MetricsSink sink();

 private:
  std::shared_ptr<std::ofstream> out_;
  std::size_t every_;
};

DenoiserNet initial_net(const RunConfig& cfg);
Dataset2D training_data(const RunConfig& cfg);
Dataset2D style_training_data(const RunConfig& cfg);
// Independent draws used only for evaluation.
Dataset2D reference_data(const DatasetSpec& spec, std::size_t count, std::uint64_t seed);
// Fresh zero-initialized adapter; `purpose` keys the A-factor stream.
LoraAdapter fresh_adapter(DenoiserNet& net, const RunConfig& cfg, std::string_view purpose);

/// Each run_* writes into `out_dir`: config.json (effective config),
/// metrics.csv where training happens, and the checkpoint directory
/// `checkpoint/` (intermediate ones under `checkpoint-<step>/`).
NetCheckpoint run_train_teacher(const RunConfig& cfg, const std::filesystem::path& out_dir);
AdapterCheckpoint run_distill(const RunConfig& cfg, const std::filesystem::path& teacher_dir,
                              const std::filesystem::path& out_dir);
AdapterCheckpoint run_finetune_style(const RunConfig& cfg, const std::filesystem::path& teacher_dir,
                                     const std::filesystem::path& out_dir);
AdapterCheckpoint run_combine(const std::filesystem::path& style_dir,
                              const std::filesystem::path& accel_dir, double lambda_style,
                              double lambda_accel, const std::filesystem::path& out_dir);
NetCheckpoint run_merge(const std::filesystem::path& base_dir, const std::filesystem::path& adapter_dir,
                        const std::filesystem::path& out_dir);

enum class SamplerKind { kLcm, kDdim };
SamplerKind parse_sampler_kind(std::string_view text);

struct SampleRequest {
  std::filesystem::path base;
  std::optional<std::filesystem::path> adapter;
  SamplerKind sampler = SamplerKind::kLcm;
  std::size_t steps = kDefaultLcmSteps;
  double omega = 7.5;
  std::size_t count = 2000;
  std::uint64_t seed = 0;
  SolverKind solver = SolverKind::kDdim;  // ddim sampler only
};

struct SampleSet {
  Tensor x;
  std::vector<Condition> cond;
  nlohmann::json sidecar;
};

// Labels cycle 0…C−1; the result is decoded back to data space (identity encoder).
SampleSet draw_samples(const SampleRequest& req);
// CSV "x0,…,x{d−1},condition" plus "<csv>.json" with the sidecar.
void write_samples(const std::filesystem::path& csv, const SampleSet& samples);
SampleSet read_samples(const std::filesystem::path& csv);

struct EvalResult {
  double mmd2 = 0.0;
  double bandwidth = 0.0;
  std::size_t samples = 0;
  std::size_t reference = 0;
};

// MMD² against `count` fresh reference draws; median-heuristic bandwidth unless given.
EvalResult evaluate(const Tensor& samples, const DatasetSpec& reference_spec, std::size_t count,
                    std::uint64_t seed, std::optional<double> bandwidth = std::nullopt);

/// Central-difference check of the LCD loss w.r.t. every LoRA factor of a
/// small 2-D denoiser. B is randomized so that both factors carry gradient.
GradCheckReport lcd_gradcheck(const std::vector<std::size_t>& widths, std::size_t rank,
                              std::size_t batch, std::uint64_t seed, double h = 1e-5);

}  // namespace lcm
