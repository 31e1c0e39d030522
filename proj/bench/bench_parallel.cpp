#include <benchmark/benchmark.h>

#include "optibfm/harness.hpp"
#include "optibfm/propcheck.hpp"

using namespace optibfm;

namespace {

ExperimentConfig bench_config() {
  ExperimentConfig c;
  c.world = WorldConfig{20, 4, 8, 0.95, 30, 3, 1.0, 1};
  c.task.seed = 3;
  AgentConfig ucb;
  ucb.name = "ucb";
  ucb.candidates = 32;
  AgentConfig ts;
  ts.name = "ts";
  ts.variant = Variant::Ts;
  c.agents = {ucb, ts};
  c.n_episodes = 4;
  c.seeds = {0, 1, 2, 3};
  return c;
}

void BM_ExperimentSerial(benchmark::State& state) {
  const ExperimentConfig c = bench_config();
  for (auto _ : state) benchmark::DoNotOptimize(run_experiment_serial(c));
}

void BM_ExperimentParallel(benchmark::State& state) {
  const ExperimentConfig c = bench_config();
  for (auto _ : state) benchmark::DoNotOptimize(run_experiment(c, static_cast<int>(state.range(0))));
}

// inequality suite, serial vs worker pool
void BM_Checks(benchmark::State& state) {
  CheckOptions opts;
  opts.instances = 200;
  for (auto _ : state) {
    for (const char* name : {"empirical_sf_bound", "loewner_vw", "elliptical_potential", "det_bound",
                             "ucb_closed_form"}) {
      benchmark::DoNotOptimize(run_checks(name, opts, static_cast<int>(state.range(0))));
    }
  }
}

}  // namespace

BENCHMARK(BM_ExperimentSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExperimentParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Checks)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
