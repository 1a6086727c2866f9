#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "lcm/checkpoint.hpp"
#include "test_support.hpp"

namespace lcm {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::TempDir;

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args, const fs::path& root) {
  const std::string cmd = "LCM_RUN_ROOT='" + root.string() + "' '" LCM_CLI_PATH "' " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json tiny_run_config() {
  return json{{"seed", 5},
              {"log_every", 5},
              {"net", {{"widths", {16, 16}}, {"time_features", 8}, {"guidance_features", 4}, {"cond_dim", 4}}},
              {"teacher", {{"steps", 40}, {"batch", 32}}},
              {"style", {{"steps", 10}, {"batch", 32}}},
              {"distill", {{"steps", 10}, {"batch", 16}}},
              {"lora", {{"rank", 2}}},
              {"sample", {{"count", 24}}},
              {"dataset", {{"count", 400}}},
              {"eval", {{"count", 50}}}};
}

TEST(Cli, ParamCountOfToyAdapter) {
  TempDir dir("cli-count");
  Rng rng(1);
  LoraAdapter adapter;
  adapter.insert("layer0.weight", LoraEntry{testing::random_tensor({2, 6}, rng), testing::random_tensor({4, 2}, rng), 2, 1.0});
  save_adapter(dir.path() / "a.ckpt", AdapterBundle{adapter, AdapterRole::kStyle, "toy", std::nullopt});
  const Result r = run("param-count --adapter '" + (dir.path() / "a.ckpt").string() + "'", dir.path());
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "20\n");
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir dir("cli-usage");
  EXPECT_EQ(run("", dir.path()).code, 2);
  EXPECT_EQ(run("no-such-command", dir.path()).code, 2);
  EXPECT_EQ(run("sample --steps 4", dir.path()).code, 2);  // missing --base

  std::ofstream(dir.path() / "bad.json") << R"({"teacher": {"stepz": 3}})";
  const Result r = run("train-teacher --config '" + (dir.path() / "bad.json").string() + "'", dir.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir.path() / "train-teacher" / "checkpoint"));
}

TEST(Cli, RuntimeFailuresExitOne) {
  TempDir dir("cli-runtime");
  EXPECT_EQ(run("param-count --adapter '" + (dir.path() / "missing").string() + "'", dir.path()).code, 1);
}

TEST(Cli, GradcheckPasses) {
  TempDir dir("cli-grad");
  const Result r = run("gradcheck --widths 8,8 --rank 2 --batch 4 --seed 3", dir.path());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("max_rel_error"), std::string::npos);
}

TEST(Cli, EndToEndPipeline) {
  TempDir dir("cli-e2e");
  const fs::path root = dir.path();
  const std::string cfg = (root / "run.json").string();
  std::ofstream(cfg) << tiny_run_config().dump(2);
  auto p = [&](const char* sub) { return "'" + (root / sub).string() + "'"; };

  const Result train = run("train-teacher --config '" + cfg + "' --out " + p("teacher"), root);
  ASSERT_EQ(train.code, 0) << train.out;
  EXPECT_EQ(json::parse(train.out)["teacher"]["steps"], 40);
  EXPECT_TRUE(fs::exists(root / "teacher" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(root / "teacher" / "config.json"));
  const std::string teacher = (root / "teacher" / "checkpoint").string();

  ASSERT_EQ(run("distill-lcm --config '" + cfg + "' --teacher '" + teacher + "' --out " + p("lcd"), root).code, 0);
  ASSERT_EQ(run("finetune-style --config '" + cfg + "' --teacher '" + teacher + "' --out " + p("style"), root).code, 0);
  const std::string accel = (root / "lcd" / "checkpoint").string();
  const std::string style = (root / "style" / "checkpoint").string();

  const Result comb = run("combine-lora --style '" + style + "' --accel '" + accel +
                              "' --l1 0.8 --l2 1.0 --out " + p("combined"),
                          root);
  ASSERT_EQ(comb.code, 0) << comb.out;
  const AdapterCheckpoint combined = load_adapter(root / "combined");
  EXPECT_EQ(combined.bundle.role, AdapterRole::kCombined);
  ASSERT_TRUE(combined.bundle.provenance.has_value());
  EXPECT_EQ(combined.bundle.provenance->lambda_style, 0.8);
  EXPECT_EQ(combined.bundle.provenance->lambda_accel, 1.0);

  const Result smp = run("sample --base '" + teacher + "' --adapter '" + accel + "' --config '" + cfg +
                             "' --steps 4 --omega 7.5 --out " + p("s.csv"),
                         root);
  ASSERT_EQ(smp.code, 0) << smp.out;
  std::ifstream csv(root / "s.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, "x0,x1,condition");
  while (std::getline(csv, line)) rows += line.empty() ? 0 : 1;
  EXPECT_EQ(rows, 24u);
  std::ifstream side(root / "s.csv.json");
  const json sidecar = json::parse(side);
  EXPECT_EQ(sidecar["S"], 4);
  EXPECT_EQ(sidecar["omega"], 7.5);
  EXPECT_EQ(sidecar["adapter_sha256"], load_adapter(accel).sha256);

  const Result ev = run("eval --samples " + p("s.csv") + " --config '" + cfg + "'", root);
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_TRUE(json::parse(ev.out).contains("mmd2"));

  ASSERT_EQ(run("merge-lora --base '" + teacher + "' --adapter '" + accel + "' --out " + p("merged"), root).code, 0);
  EXPECT_EQ(load_net(root / "merged").net.fingerprint(), load_net(teacher).net.fingerprint());
}

}  // namespace
}  // namespace lcm
