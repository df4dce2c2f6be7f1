// Serial reference kernels against their OpenMP counterparts. The second
// argument of each parallel benchmark is the worker count.

#include <benchmark/benchmark.h>

#include <map>
#include <random>

#include "tcem/batch.hpp"
#include "tcem/clustering.hpp"
#include "tcem/data.hpp"
#include "tcem/model.hpp"

namespace {

using namespace tcem;

struct Fixture {
  TcemParams params;
  Cohort cohort;
  std::vector<const PatientSequence*> batch;
};

// A batch of 32 sep3-shaped patients and a model of the given width.
const Fixture& fixture(std::size_t width) {
  static std::map<std::size_t, Fixture> cache;
  auto it = cache.find(width);
  if (it != cache.end()) return it->second;
  SyntheticConfig sc = sep3_config();
  sc.patients = 32;
  Cohort c = generate_synthetic(sc);
  const NormalizationStats st = compute_normalization(c);
  c.norm = st;
  c = impute(c);
  normalize(c, st);
  ModelConfig mc;
  mc.features = c.features();
  mc.hidden = width;
  mc.latent = width;
  mc.memory_width = width;
  Fixture f{init_params(mc, 1), std::move(c), {}};
  auto& slot = cache[width] = std::move(f);
  slot.batch = pointers(slot.cohort.patients);
  return slot;
}

void BM_BatchGradientsSerial(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  TcemParams grads = f.params.gradient_buffer();
  for (auto _ : state) {
    grads.zero_grad();
    benchmark::DoNotOptimize(batch_gradients_serial(f.params, f.batch, {0.5, 3, true}, grads));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.batch.size()));
}

void BM_BatchGradientsParallel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  const int workers = static_cast<int>(state.range(1));
  TcemParams grads = f.params.gradient_buffer();
  for (auto _ : state) {
    grads.zero_grad();
    benchmark::DoNotOptimize(
        batch_gradients_parallel(f.params, f.batch, {0.5, 3, true}, grads, workers));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.batch.size()));
}

void BM_EncodeCohort(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  const int workers = static_cast<int>(state.range(1));
  for (auto _ : state)
    benchmark::DoNotOptimize(
        encode_cohort(f.params, f.cohort.patients, Representation::mu_and_memory, workers));
}

Matrix random_points(std::size_t n, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(n, w);
  for (double& x : m.flat()) x = nd(rng);
  return m;
}

void BM_AssignSerial(benchmark::State& state) {
  const Matrix p = random_points(static_cast<std::size_t>(state.range(0)), 256, 1);
  const Matrix c = random_points(3, 256, 2);
  std::vector<int> a(p.rows());
  std::vector<double> d(p.rows());
  for (auto _ : state) benchmark::DoNotOptimize(assign_points_serial(p, c, a, d));
}

void BM_AssignParallel(benchmark::State& state) {
  const Matrix p = random_points(static_cast<std::size_t>(state.range(0)), 256, 1);
  const Matrix c = random_points(3, 256, 2);
  std::vector<int> a(p.rows());
  std::vector<double> d(p.rows());
  const int workers = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(assign_points_parallel(p, c, a, d, workers));
}

}  // namespace

BENCHMARK(BM_BatchGradientsSerial)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradientsParallel)
    ->ArgsProduct({{32, 128}, {1, 2, 4}})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EncodeCohort)->ArgsProduct({{32, 128}, {1, 2, 4}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssignSerial)->Arg(4000)->Arg(40000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AssignParallel)->ArgsProduct({{4000, 40000}, {1, 2, 4}})->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
