#include <benchmark/benchmark.h>

#include "clisa/contrastive.hpp"
#include "clisa/features.hpp"
#include "clisa/model.hpp"
#include "clisa/rng.hpp"
#include "clisa/signal.hpp"

namespace {

clisa::Tensor<float> noise(std::vector<std::size_t> shape, std::uint64_t seed) {
  clisa::Rng rng(seed);
  clisa::Tensor<float> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.gaussian());
  return t;
}

void EncoderForward(benchmark::State& state) {
  clisa::Hyperparams hp;
  hp.k1 = 8;
  hp.k2 = 8;
  hp.p1 = 24;
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto params = clisa::init_params<float>(hp, m, 1);
  const auto x = noise({m, 200}, 2);
  for (auto _ : state) {
    auto h = clisa::encoder_forward(x, params.encoder);
    benchmark::DoNotOptimize(h.data.data());
  }
}
BENCHMARK(EncoderForward)->Arg(8)->Arg(20)->Arg(32);

void ContrastiveStep(benchmark::State& state) {
  clisa::Hyperparams hp;
  hp.k1 = 8;
  hp.k2 = 8;
  hp.p1 = 24;
  hp.pool = 10;
  hp.p2 = 4;
  const std::size_t m = 20;
  const auto n_trials = static_cast<std::size_t>(state.range(0));
  auto params = clisa::init_params<float>(hp, m, 3);
  clisa::Minibatch<float> mb;
  for (std::size_t i = 0; i < n_trials; ++i) {
    mb.samples_a.push_back(noise({m, 200}, 10 + i));
    mb.samples_b.push_back(noise({m, 200}, 100 + i));
    mb.segment_offsets.push_back(0);
    mb.labels.push_back(static_cast<int>(i % 2));
  }
  clisa::stratified_normalize(mb);
  for (auto _ : state) {
    clisa::Graph<float> g;
    const auto nodes = clisa::insert_params(g, params);
    const auto root = clisa::contrastive_loss_graph(g, mb, nodes, hp);
    g.backward(root);
    benchmark::DoNotOptimize(g.grad(nodes.spatial).data.data());
  }
}
BENCHMARK(ContrastiveStep)->Arg(6)->Arg(12);

void ZeroPhaseBandpass(benchmark::State& state) {
  const auto x = noise({20, static_cast<std::size_t>(state.range(0))}, 5);
  for (auto _ : state) {
    auto y = clisa::signal::bandpass(x, 4.0, 47.0, 100.0);
    benchmark::DoNotOptimize(y.data.data());
  }
}
BENCHMARK(ZeroPhaseBandpass)->Arg(2200)->Arg(8800);

void TrainedDeWindow(benchmark::State& state) {
  clisa::Hyperparams hp;
  hp.k1 = 8;
  hp.k2 = 8;
  hp.p1 = 24;
  const auto params = clisa::init_params<float>(hp, 20, 7);
  const auto x = noise({20, 100}, 8);
  for (auto _ : state) {
    auto de = clisa::trained_de(x, params.encoder);
    benchmark::DoNotOptimize(de.data.data());
  }
}
BENCHMARK(TrainedDeWindow);

}  // namespace

BENCHMARK_MAIN();
