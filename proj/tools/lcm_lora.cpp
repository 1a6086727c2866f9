// lcm-lora: command-line front end for teacher training, LCM distillation,
// style fine-tuning, adapter arithmetic, sampling and evaluation.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lcm/checkpoint.hpp"
#include "lcm/config.hpp"
#include "lcm/errors.hpp"
#include "lcm/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

fs::path run_root() {
  const char* env = std::getenv("LCM_RUN_ROOT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

fs::path out_or_default(const std::string& out, const char* subcommand) {
  return out.empty() ? run_root() / subcommand : fs::path(out);
}

lcm::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? lcm::RunConfig{} : lcm::load_run_config(path);
}

void echo(const json& j) { std::cout << j.dump(2) << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRA latent consistency distillation on 2-D toy data"};
  app.require_subcommand(1);

  std::string config_path, out, teacher_dir;

  auto* train = app.add_subcommand("train-teacher", "Train the guided diffusion teacher");
  train->add_option("--config", config_path, "RunConfig JSON")->required();
  train->add_option("--out", out, "Run directory (default $LCM_RUN_ROOT/train-teacher)");

  auto* distill = app.add_subcommand("distill-lcm", "Distill an acceleration LoRA from a teacher");
  distill->add_option("--config", config_path, "RunConfig JSON")->required();
  distill->add_option("--teacher", teacher_dir, "Teacher checkpoint directory")->required();
  distill->add_option("--out", out, "Run directory");

  auto* style = app.add_subcommand("finetune-style", "Fine-tune a style LoRA on the rotated dataset");
  style->add_option("--config", config_path, "RunConfig JSON")->required();
  style->add_option("--teacher", teacher_dir, "Teacher checkpoint directory")->required();
  style->add_option("--out", out, "Run directory");

  std::string style_dir, accel_dir;
  double l1 = lcm::kDefaultStyleWeight, l2 = lcm::kDefaultAccelWeight;
  auto* comb = app.add_subcommand("combine-lora", "Combine style and acceleration adapters");
  comb->add_option("--style", style_dir, "Style adapter checkpoint")->required();
  comb->add_option("--accel", accel_dir, "Acceleration adapter checkpoint")->required();
  comb->add_option("--l1", l1, "Style weight");
  comb->add_option("--l2", l2, "Acceleration weight");
  comb->add_option("--out", out, "Output adapter directory");

  std::string base_dir, adapter_dir;
  auto* mrg = app.add_subcommand("merge-lora", "Fold an adapter into the base weights");
  mrg->add_option("--base", base_dir, "Base network checkpoint")->required();
  mrg->add_option("--adapter", adapter_dir, "Adapter checkpoint")->required();
  mrg->add_option("--out", out, "Output network directory");

  std::optional<std::size_t> steps, count;
  std::optional<double> omega;
  std::uint64_t seed = 0;
  std::string sampler = "lcm", solver = "ddim";
  auto* smp = app.add_subcommand("sample", "Draw samples to CSV with a JSON sidecar");
  smp->add_option("--base", base_dir, "Base network checkpoint")->required();
  smp->add_option("--adapter", adapter_dir, "Adapter checkpoint");
  smp->add_option("--config", config_path, "RunConfig JSON supplying sample defaults");
  smp->add_option("--steps", steps, "Inference steps S");
  smp->add_option("--omega", omega, "Guidance scale");
  smp->add_option("--count", count, "Number of samples");
  smp->add_option("--seed", seed, "Sampling seed");
  smp->add_option("--sampler", sampler, "lcm | ddim")->check(CLI::IsMember({"lcm", "ddim"}));
  smp->add_option("--solver", solver, "ddim | dpm2 (ddim sampler)")->check(CLI::IsMember({"ddim", "dpm2"}));
  smp->add_option("--out", out, "Output CSV (default $LCM_RUN_ROOT/sample/samples.csv)");

  std::string samples_path;
  bool rotated = false;
  std::optional<double> bandwidth;
  auto* ev = app.add_subcommand("eval", "MMD² of a sample CSV against the configured dataset");
  ev->add_option("--samples", samples_path, "Sample CSV")->required();
  ev->add_option("--config", config_path, "RunConfig JSON");
  ev->add_flag("--rotated", rotated, "Compare against the style (rotated) dataset");
  ev->add_option("--seed", seed, "Reference sample seed");
  ev->add_option("--bandwidth", bandwidth, "Fixed RBF bandwidth (default: median heuristic)")
      ->check(CLI::PositiveNumber);

  auto* pc = app.add_subcommand("param-count", "Trainable parameter count of an adapter");
  pc->add_option("--adapter", adapter_dir, "Adapter checkpoint")->required();

  std::size_t rank = 4, batch = 8;
  double tolerance = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the LCD loss gradient");
  std::vector<std::size_t> widths = {64, 64};
  gc->add_option("--widths", widths, "Hidden widths")->delimiter(',');
  gc->add_option("--rank", rank, "LoRA rank");
  gc->add_option("--batch", batch, "Batch size");
  gc->add_option("--seed", seed, "Seed");
  gc->add_option("--tolerance", tolerance, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) {
      const auto cfg = lcm::load_run_config(config_path);
      echo(lcm::to_json(cfg));
      const fs::path dir = out_or_default(out, "train-teacher");
      const auto ckpt = lcm::run_train_teacher(cfg, dir);
      std::cerr << "teacher checkpoint " << (dir / "checkpoint").string() << " sha256 " << ckpt.sha256 << "\n";
    } else if (*distill) {
      const auto cfg = lcm::load_run_config(config_path);
      echo(lcm::to_json(cfg));
      const fs::path dir = out_or_default(out, "distill-lcm");
      const auto ckpt = lcm::run_distill(cfg, teacher_dir, dir);
      std::cerr << "acceleration adapter " << (dir / "checkpoint").string() << " sha256 " << ckpt.sha256 << "\n";
    } else if (*style) {
      const auto cfg = lcm::load_run_config(config_path);
      echo(lcm::to_json(cfg));
      const fs::path dir = out_or_default(out, "finetune-style");
      const auto ckpt = lcm::run_finetune_style(cfg, teacher_dir, dir);
      std::cerr << "style adapter " << (dir / "checkpoint").string() << " sha256 " << ckpt.sha256 << "\n";
    } else if (*comb) {
      const fs::path dir = out_or_default(out, "combine-lora");
      echo({{"style", style_dir}, {"accel", accel_dir}, {"l1", l1}, {"l2", l2}, {"out", dir.string()}});
      const auto ckpt = lcm::run_combine(style_dir, accel_dir, l1, l2, dir);
      std::cerr << "combined adapter " << dir.string() << " sha256 " << ckpt.sha256 << "\n";
    } else if (*mrg) {
      const fs::path dir = out_or_default(out, "merge-lora");
      echo({{"base", base_dir}, {"adapter", adapter_dir}, {"out", dir.string()}});
      const auto ckpt = lcm::run_merge(base_dir, adapter_dir, dir);
      std::cerr << "merged network " << dir.string() << " sha256 " << ckpt.sha256 << "\n";
    } else if (*smp) {
      const auto cfg = config_or_default(config_path);
      lcm::SampleRequest req;
      req.base = base_dir;
      if (!adapter_dir.empty()) req.adapter = adapter_dir;
      req.sampler = lcm::parse_sampler_kind(sampler);
      req.solver = lcm::parse_solver_kind(solver);
      req.steps = steps.value_or(cfg.sample.steps);
      req.omega = omega.value_or(cfg.sample.omega);
      req.count = count.value_or(cfg.sample.count);
      req.seed = seed;
      const fs::path csv = out.empty() ? run_root() / "sample" / "samples.csv" : fs::path(out);
      const auto samples = lcm::draw_samples(req);
      lcm::write_samples(csv, samples);
      json shown = samples.sidecar;
      shown["out"] = csv.string();
      echo(shown);
    } else if (*ev) {
      const auto cfg = config_or_default(config_path);
      const auto samples = lcm::read_samples(samples_path);
      const auto spec = rotated ? cfg.style_dataset() : cfg.dataset.spec;
      const auto r = lcm::evaluate(samples.x, spec, cfg.eval.count, seed, bandwidth);
      echo({{"samples", samples_path},
            {"reference", rotated ? "rotated" : "base"},
            {"mmd2", r.mmd2},
            {"bandwidth", r.bandwidth},
            {"n_samples", r.samples},
            {"n_reference", r.reference}});
    } else if (*pc) {
      const auto ckpt = lcm::load_adapter(adapter_dir);
      std::cout << lcm::count_trainable(ckpt.bundle.adapter) << std::endl;
    } else if (*gc) {
      const auto r = lcm::lcd_gradcheck(widths, rank, batch, seed);
      echo({{"widths", widths},
            {"rank", rank},
            {"batch", batch},
            {"checked", r.checked},
            {"max_rel_error", r.max_rel_error},
            {"worst_param", r.worst_param},
            {"worst_index", r.worst_index},
            {"tolerance", tolerance}});
      if (!(r.max_rel_error < tolerance)) return kExitRuntime;
    }
  } catch (const lcm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
