#include <benchmark/benchmark.h>

#include "ctxbert/metrics.hpp"
#include "ctxbert/ops.hpp"

using namespace ctxbert;
using namespace ctxbert::autograd;

namespace {

Tensor<float> random(Shape shape, std::uint64_t seed) {
  Rng rng(seed, fnv1a64("bench"));
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor<float>::from_data(std::move(shape), std::move(v));
}

}  // namespace

// Rows x 32 -> 32, the shape of every projection in a desk block.
static void Linear(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  auto x = random({rows, 32}, 1), w = random({32, 32}, 2), b = random({32}, 3);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(linear(x, w, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(Linear)->RangeMultiplier(4)->Range(16, 1024);

static void LinearBackward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  auto x = random({rows, 32}, 1), w = random({32, 32}, 2);
  w.set_requires_grad(true);
  for (auto _ : state) {
    backward(sum(linear(x, w)));
    w.zero_grad();
  }
}
BENCHMARK(LinearBackward)->RangeMultiplier(4)->Range(16, 1024);

// A batch of length-5 sets, 4 heads of width 8.
static void Attention(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const std::size_t rows = batch * 5;
  auto q = random({rows, 32}, 4), k = random({rows, 32}, 5), v = random({rows, 32}, 6);
  std::vector<std::size_t> begins(batch), lengths(batch, 5);
  for (std::size_t b = 0; b < batch; ++b) begins[b] = 5 * b;
  const auto layout = self_attention_layout(begins, lengths);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(scaled_dot_product_attention(q, k, v, layout, 4).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(Attention)->RangeMultiplier(4)->Range(8, 512);

static void RecallAtR(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto scores = random({n + 2}, 7);
  const std::span<const float> view = scores.data();
  std::size_t target = 2;
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::recall_at_r<float>(view, target, 50));
    target = 2 + (target * 7 + 1) % n;
  }
}
BENCHMARK(RecallAtR)->Arg(500)->Arg(30000);
