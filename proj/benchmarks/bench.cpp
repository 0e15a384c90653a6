#include <benchmark/benchmark.h>

#include "perturbnet/learners.hpp"
#include "perturbnet/network.hpp"

using namespace perturbnet;

namespace {

Network bench_net() {
  return init_network(NetworkSpec{{3072, 1024, 512, 256, 10}}, RngStream(1));
}

void bm_forward_clean(benchmark::State& state) {
  const Network net = bench_net();
  const Eigen::Index batch = state.range(0);
  const Matrix x0 = RngStream(2).gaussian_matrix(3072, batch, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(net, x0).output());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void bm_forward_noisy(benchmark::State& state) {
  const Network net = bench_net();
  const Eigen::Index batch = state.range(0);
  const Matrix x0 = RngStream(2).gaussian_matrix(3072, batch, 1.0);
  const NoiseBundle noise = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(3), batch);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(net, x0, noise).output());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void bm_np_update(benchmark::State& state) {
  const Network net = bench_net();
  const Eigen::Index batch = state.range(0);
  const Matrix x0 = RngStream(2).gaussian_matrix(3072, batch, 1.0);
  const NoiseBundle noise = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(3), batch);
  Matrix targets = Matrix::Zero(10, batch);
  for (Eigen::Index c = 0; c < batch; ++c) {
    targets(c % 10, c) = 1.0;
  }
  const ForwardTrace clean = forward(net, x0);
  const ForwardTrace noisy = forward(net, x0, noise);
  const Vector diff = loss_columns(LossKind::Cce, noisy.output(), targets) -
                      loss_columns(LossKind::Cce, clean.output(), targets);
  for (auto _ : state) {
    benchmark::DoNotOptimize(np_update(clean, noisy, diff, 1e-6));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void bm_anp_update(benchmark::State& state) {
  const Network net = bench_net();
  const Eigen::Index batch = state.range(0);
  const Matrix x0 = RngStream(2).gaussian_matrix(3072, batch, 1.0);
  const NoiseBundle noise = sample_noise(net, NoiseMode::AllLayers, 1e-6, RngStream(3), batch);
  Matrix targets = Matrix::Zero(10, batch);
  for (Eigen::Index c = 0; c < batch; ++c) {
    targets(c % 10, c) = 1.0;
  }
  const ForwardTrace clean = forward(net, x0);
  const ForwardTrace noisy = forward(net, x0, noise);
  for (auto _ : state) {
    benchmark::DoNotOptimize(anp_update(clean, noisy, LossKind::Cce, targets));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void bm_bp_update(benchmark::State& state) {
  const Network net = bench_net();
  const Eigen::Index batch = state.range(0);
  const Matrix x0 = RngStream(2).gaussian_matrix(3072, batch, 1.0);
  Matrix targets = Matrix::Zero(10, batch);
  for (Eigen::Index c = 0; c < batch; ++c) {
    targets(c % 10, c) = 1.0;
  }
  const ForwardTrace clean = forward(net, x0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(bp_update(net, clean, targets, LossKind::Cce));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void bm_decorrelation_step(benchmark::State& state) {
  const Eigen::Index dim = state.range(0);
  const Matrix r = Matrix::Identity(dim, dim);
  const Matrix x = RngStream(4).gaussian_matrix(dim, 1000, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(decorrelation_step(r, x, 1e-3));
  }
}

BENCHMARK(bm_forward_clean)->Arg(1)->Arg(100)->Arg(1000);
BENCHMARK(bm_forward_noisy)->Arg(1)->Arg(100)->Arg(1000);
BENCHMARK(bm_np_update)->Arg(100)->Arg(1000);
BENCHMARK(bm_anp_update)->Arg(100)->Arg(1000);
BENCHMARK(bm_bp_update)->Arg(100)->Arg(1000);
BENCHMARK(bm_decorrelation_step)->Arg(256)->Arg(1024)->Arg(3072);

} // namespace

BENCHMARK_MAIN();
