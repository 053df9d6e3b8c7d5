#include <benchmark/benchmark.h>

#include <vector>

#include "exmap/cluster.hpp"
#include "exmap/data.hpp"
#include "exmap/lrp.hpp"
#include "exmap/nn.hpp"
#include "exmap/retrain.hpp"
#include "exmap/rng.hpp"

using namespace exmap;

namespace {

data::DatasetSplits small_splits(std::size_t n) {
  data::SpuriousSpec spec;
  spec.train_size = n;
  spec.val_size = n;
  spec.test_size = 400;
  spec.correlation = 0.9;
  return data::generate(spec);
}

Matrix random_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Matrix m(n, dim);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    // Four loose clouds so the eigengap has something to find.
    const std::size_t c = i % 4;
    for (std::size_t j = 0; j < dim; ++j) m(i, j) = rng.normal() + (j % 4 == c ? 3.0 : 0.0);
  }
  return m;
}

void BM_GenerateData(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(small_splits(static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_GenerateData)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const auto splits = small_splits(64);
  const auto net = nn::make_desk_net(Shape{3, 28, 28}, 2, 1);
  for (auto _ : state) {
    const auto fwd = nn::forward(net, splits.train.images);
    const auto loss = nn::cross_entropy(fwd.logits, splits.train.class_labels);
    benchmark::DoNotOptimize(nn::backward(net, fwd.trace, loss.grad_logits));
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_HeatmapSet(benchmark::State& state) {
  const auto splits = small_splits(64);
  const auto net = nn::make_desk_net(Shape{3, 28, 28}, 2, 1);
  const lrp::LrpConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(lrp::heatmap_set(net, splits.val, cfg));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_HeatmapSet)->Unit(benchmark::kMillisecond);

void BM_Spectral(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto rows = random_rows(n, 196, 3);
  cluster::SpectralOptions opts;
  opts.solver = state.range(1) ? cluster::EigenSolver::kTridiagonal : cluster::EigenSolver::kJacobi;
  for (auto _ : state) benchmark::DoNotOptimize(cluster::spectral_cluster(rows, opts));
}
BENCHMARK(BM_Spectral)->Args({200, 0})->Args({200, 1})->Args({1000, 1})->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
  const auto rows = random_rows(1000, 196, 4);
  for (auto _ : state) benchmark::DoNotOptimize(cluster::kmeans(rows, 4, 7));
}
BENCHMARK(BM_KMeans)->Unit(benchmark::kMillisecond);

void BM_L1LogReg(benchmark::State& state) {
  const auto rows = random_rows(2000, 64, 5);
  std::vector<int> labels(2000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4 < 2);
  for (auto _ : state) benchmark::DoNotOptimize(retrain::fit_l1_logreg(rows, labels, 2, state.range(0) / 100.0));
}
BENCHMARK(BM_L1LogReg)->Arg(100)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
