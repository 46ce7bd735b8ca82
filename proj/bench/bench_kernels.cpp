// Serial reference implementations against their OpenMP counterparts.
#include <benchmark/benchmark.h>
#include <omp.h>

#include "photoshape/camera.hpp"
#include "photoshape/densecrf.hpp"
#include "photoshape/fixtures.hpp"
#include "photoshape/flowrefine.hpp"
#include "photoshape/hogindex.hpp"
#include "photoshape/pipeline.hpp"
#include "photoshape/raster.hpp"
#include "photoshape/rng.hpp"

using namespace photoshape;

namespace {

struct CrfInput {
  densecrf::Unary unary;
  RgbImage guide;
};

CrfInput crf_input(int size) {
  Rng rng(3);
  CrfInput in{{size, size, 4, std::vector<double>(static_cast<std::size_t>(size) * size * 4)}, RgbImage(size, size, 3)};
  for (auto& v : in.unary.values) v = 3.0 * rng.uniform();
  for (auto& v : in.guide.data) v = static_cast<std::uint8_t>(rng.index(256));
  return in;
}

void BM_CrfBruteForce(benchmark::State& state) {
  const auto in = crf_input(static_cast<int>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(densecrf::mean_field(in.unary, in.guide, {}, densecrf::Method::brute_force));
}
BENCHMARK(BM_CrfBruteForce)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_CrfAccelerated(benchmark::State& state) {
  const auto in = crf_input(static_cast<int>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(densecrf::mean_field(in.unary, in.guide, {}, densecrf::Method::accelerated));
}
BENCHMARK(BM_CrfAccelerated)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

std::vector<hogindex::Rendering> random_bank(std::size_t n, std::size_t dims) {
  Rng rng(5);
  std::vector<hogindex::Rendering> bank(n);
  for (std::size_t i = 0; i < n; ++i) {
    bank[i] = {"s" + std::to_string(i % 10), static_cast<int>(i / 10), {}, std::vector<float>(dims)};
    for (auto& v : bank[i].descriptor) v = static_cast<float>(rng.uniform());
  }
  return bank;
}

std::vector<hogindex::ExemplarQuery> queries_from(const std::vector<hogindex::Rendering>& bank, std::size_t n) {
  std::vector<hogindex::ExemplarQuery> q;
  for (std::size_t i = 0; i < n; ++i) q.push_back({"e" + std::to_string(i), bank[i * 7 % bank.size()].descriptor});
  return q;
}

void BM_ReverseIndexSerial(benchmark::State& state) {
  const auto bank = random_bank(4560, 1352);
  const auto q = queries_from(bank, 64);
  for (auto _ : state) benchmark::DoNotOptimize(hogindex::build_reverse_index_serial(q, bank, 5));
}
BENCHMARK(BM_ReverseIndexSerial)->Unit(benchmark::kMillisecond);

void BM_ReverseIndexParallel(benchmark::State& state) {
  const auto bank = random_bank(4560, 1352);
  const auto q = queries_from(bank, 64);
  for (auto _ : state) benchmark::DoNotOptimize(hogindex::build_reverse_index(q, bank, 5));
}
BENCHMARK(BM_ReverseIndexParallel)->Unit(benchmark::kMillisecond);

// Kernels without a separate serial entry point run with one thread and with
// the OpenMP default; the argument is the thread count (0 = default).
void set_threads(benchmark::State& state) {
  omp_set_num_threads(state.range(0) > 0 ? static_cast<int>(state.range(0)) : omp_get_num_procs());
}

void BM_RenderPartIds(benchmark::State& state) {
  set_threads(state);
  const auto mesh = pipeline::prepare_mesh(shapelib::load_obj(fixtures::asymmetric_shape(0, 1).obj));
  const auto grid = camera::build_viewpoint_grid(camera::grid_preset("coarse"));
  for (auto _ : state)
    for (const auto& pose : grid.poses) benchmark::DoNotOptimize(raster::render_part_ids(mesh, pose, 256));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid.poses.size()));
}
BENCHMARK(BM_RenderPartIds)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_Flow(benchmark::State& state) {
  set_threads(state);
  Mask a(64, 64), b(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      a.set(x, y, x > 16 && x < 44 && y > 20 && y < 50);
      b.set(x, y, x > 22 && x < 52 && y > 14 && y < 46);
    }
  const auto sa = flowrefine::encode_coordinate_silhouette(a), sb = flowrefine::encode_coordinate_silhouette(b);
  for (auto _ : state) benchmark::DoNotOptimize(flowrefine::compute_flow(sa, sb));
}
BENCHMARK(BM_Flow)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
