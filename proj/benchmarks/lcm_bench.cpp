#include <vector>

#include <benchmark/benchmark.h>

#include "lcm/denoiser.hpp"
#include "lcm/lora.hpp"
#include "lcm/metrics.hpp"
#include "lcm/sampling.hpp"
#include "lcm/training.hpp"

namespace {

using namespace lcm;

Tensor gaussian(Shape shape, Rng& rng) {
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Scalar>(rng.normal());
  return Tensor(std::move(shape), std::move(v));
}

const NoiseSchedule& schedule() {
  static const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  return s;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = gaussian({256, n}, rng);
  const Tensor b = gaussian({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 256 * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

struct Inputs {
  Tensor z;
  std::vector<std::size_t> n;
  std::vector<double> omega;
  std::vector<Condition> cond;
};

Inputs batch(std::size_t rows, Rng& rng) {
  Inputs in{gaussian({rows, 2}, rng), {}, {}, {}};
  for (std::size_t i = 0; i < rows; ++i) {
    in.n.push_back(1 + rng.uniform_index(50));
    in.omega.push_back(7.5);
    in.cond.push_back(Condition::of(static_cast<std::uint32_t>(i % 8)));
  }
  return in;
}

void BM_DenoiserForward(benchmark::State& state) {
  Rng rng(2);
  const DenoiserNet net = DenoiserNet::create(DenoiserConfig{}, rng);
  const Inputs in = batch(static_cast<std::size_t>(state.range(0)), rng);
  const Conditioning c = make_conditioning(schedule(), in.n, in.omega, in.cond);
  NoGradScope off;
  for (auto _ : state) benchmark::DoNotOptimize(forward_eps(net, in.z, c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DenoiserForward)->Arg(256)->Arg(2000);

void BM_DenoiserForwardBackward(benchmark::State& state) {
  Rng rng(3);
  DenoiserNet net = DenoiserNet::create(DenoiserConfig{}, rng);
  net.set_trainable(true);
  const Inputs in = batch(256, rng);
  const Conditioning c = make_conditioning(schedule(), in.n, in.omega, in.cond);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(mean(square(forward_eps(net, in.z, c))));
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_DenoiserForwardBackward);

void BM_LcdStep(benchmark::State& state) {
  Rng rng(4);
  DenoiserNet teacher = DenoiserNet::create(DenoiserConfig{}, rng);
  LoraAdapter student = attach(teacher, LoraSpec{}, rng);
  student.set_trainable(true);
  EmaShadow target(student);
  DistillConfig cfg;
  const auto kind = state.range(0) == 0 ? SolverKind::kDdim : SolverKind::kDpm2;
  cfg.solver = kind;
  const Dataset2D data = make_dataset(DatasetSpec{}, 4096, 1);
  const ConsistencyHead head = ConsistencyHead::for_schedule(schedule());
  Optimizer opt(OptimizerKind::kAdam, cfg.lr, student.factors());
  std::size_t step = 0;
  for (auto _ : state) {
    const LcdBatch b = sample_lcd_batch(data.x, data.cond, cfg, schedule(), step++);
    {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(lcd_loss(teacher, student, target.adapter(), head, schedule(), cfg, b));
    }
    opt.step();
    target.update(student, cfg.ema_rate);
  }
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_LcdStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_LcmSample(benchmark::State& state) {
  Rng rng(5);
  DenoiserNet net = DenoiserNet::create(DenoiserConfig{}, rng);
  const LoraAdapter adapter = attach(net, LoraSpec{}, rng);
  const ConsistencyHead head = ConsistencyHead::for_schedule(schedule());
  const StepSchedule steps(static_cast<std::size_t>(state.range(0)), 50);
  std::vector<Condition> cond(2000);
  for (std::size_t i = 0; i < cond.size(); ++i) cond[i] = Condition::of(static_cast<std::uint32_t>(i % 8));
  for (auto _ : state) {
    benchmark::DoNotOptimize(lcm_multistep_sample(net, &adapter, head, schedule(), steps, 7.5, cond, 0));
  }
}
BENCHMARK(BM_LcmSample)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_Mmd2(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(6);
  const Tensor x = gaussian({n, 2}, rng);
  const Tensor y = gaussian({n, 2}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(mmd2(x, y));
}
BENCHMARK(BM_Mmd2)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
