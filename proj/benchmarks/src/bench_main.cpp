#include <benchmark/benchmark.h>

#include <uat/graph.hpp>
#include <uat/rng.hpp>

namespace {

uat::Tensor32 random_tensor(uat::Shape shape, uat::Rng& rng) {
  auto t = uat::Tensor32::uninitialized(std::move(shape));
  for (auto& v : t) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void bench_matmul_fc1(benchmark::State& state) {
  uat::Rng rng(1);
  auto a = random_tensor({1280, 1568}, rng);
  auto b = random_tensor({1568, 128}, rng);
  uat::Graph<float> g;
  for (auto _ : state) {
    g.reset();
    const int r = g.matmul(g.leaf(a), g.leaf(b));
    benchmark::DoNotOptimize(g.value(r).data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(bench_matmul_fc1);

void bench_conv_forward(benchmark::State& state) {
  const int64_t batch = state.range(0);
  uat::Rng rng(2);
  auto x = random_tensor({batch, 16, 14, 14}, rng);
  auto w = random_tensor({32, 16, 3, 3}, rng);
  auto b = random_tensor({32}, rng);
  uat::Graph<float> g;
  for (auto _ : state) {
    g.reset();
    const int r = g.conv2d(g.leaf(x), g.leaf(w), g.leaf(b), 1);
    benchmark::DoNotOptimize(g.value(r).data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(bench_conv_forward)->Arg(32)->Arg(128);

void bench_conv_train_step(benchmark::State& state) {
  const int64_t batch = state.range(0);
  uat::Rng rng(3);
  auto x = random_tensor({batch, 16, 14, 14}, rng);
  auto w = random_tensor({32, 16, 3, 3}, rng);
  auto b = random_tensor({32}, rng);
  uat::Graph<float> g;
  for (auto _ : state) {
    g.reset();
    const int xi = g.leaf(x, true);
    const int r = g.conv2d(xi, g.leaf(w, true), g.leaf(b, true), 1);
    const int loss = g.mean(r);
    g.backward(loss);
    benchmark::DoNotOptimize(g.grad(xi).data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(bench_conv_train_step)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
