// Parallel kernels against the serial reference on layer shapes from a
// width-0.25 ResNet-18 over 28x28 inputs, plus a full training step.
//
//   ./odn_bench --benchmark_filter=Conv

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>
#include <vector>

#include "odn/kernels.hpp"
#include "odn/network.hpp"
#include "odn/ops.hpp"
#include "odn/reference_kernels.hpp"

namespace {

using namespace odn;

std::vector<float> random_buffer(std::int64_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist;
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = dist(rng);
  return v;
}

Conv2dGeometry conv_shape(const benchmark::State& state) {
  Conv2dGeometry g;
  g.batch = 64;
  g.in_channels = state.range(0);
  g.out_channels = state.range(0);
  g.height = g.width = state.range(1);
  g.kernel = 3;
  g.padding = 1;
  return g;
}

void set_conv_counters(benchmark::State& state, const Conv2dGeometry& g) {
  const double flops = 2.0 * static_cast<double>(g.weight_size()) * static_cast<double>(g.batch * g.out_height() * g.out_width());
  state.counters["GFLOP/s"] = benchmark::Counter(flops * static_cast<double>(state.iterations()) / 1e9,
                                                 benchmark::Counter::kIsRate);
}

template <bool Parallel>
void ConvForward(benchmark::State& state) {
  const auto g = conv_shape(state);
  const auto x = random_buffer(g.input_size(), 1), w = random_buffer(g.weight_size(), 2);
  std::vector<float> y(static_cast<std::size_t>(g.output_size()));
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::conv2d_forward(g, x, w, y);
    } else {
      reference::conv2d_forward(g, x, w, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  set_conv_counters(state, g);
}

template <bool Parallel>
void ConvBackwardInput(benchmark::State& state) {
  const auto g = conv_shape(state);
  const auto gy = random_buffer(g.output_size(), 1), w = random_buffer(g.weight_size(), 2);
  std::vector<float> gx(static_cast<std::size_t>(g.input_size()));
  for (auto _ : state) {
    std::fill(gx.begin(), gx.end(), 0.0f);
    if constexpr (Parallel) {
      kernels::conv2d_backward_input(g, gy, w, gx);
    } else {
      reference::conv2d_backward_input(g, gy, w, gx);
    }
    benchmark::DoNotOptimize(gx.data());
  }
  set_conv_counters(state, g);
}

template <bool Parallel>
void ConvBackwardWeight(benchmark::State& state) {
  const auto g = conv_shape(state);
  const auto x = random_buffer(g.input_size(), 1), gy = random_buffer(g.output_size(), 2);
  std::vector<float> gw(static_cast<std::size_t>(g.weight_size()));
  for (auto _ : state) {
    std::fill(gw.begin(), gw.end(), 0.0f);
    if constexpr (Parallel) {
      kernels::conv2d_backward_weight(g, x, gy, gw);
    } else {
      reference::conv2d_backward_weight(g, x, gy, gw);
    }
    benchmark::DoNotOptimize(gw.data());
  }
  set_conv_counters(state, g);
}

template <bool Parallel>
void BatchNormTrain(benchmark::State& state) {
  BatchNormGeometry g{64, state.range(0), state.range(1) * state.range(1)};
  const auto x = random_buffer(g.size(), 1), gy = random_buffer(g.size(), 2);
  const auto c = static_cast<std::size_t>(g.channels);
  std::vector<float> mean(c), var(c), inv(c, 1.0f), gamma(c, 1.0f), beta(c, 0.0f), y(x.size()), gx(x.size()), gg(c),
      gb(c);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::batch_norm_statistics(g, x, mean, var);
      kernels::batch_norm_apply(g, x, mean, inv, gamma, beta, y);
      kernels::batch_norm_backward_train(g, x, mean, inv, gamma, gy, gx, gg, gb);
    } else {
      reference::batch_norm_statistics(g, x, mean, var);
      reference::batch_norm_apply(g, x, mean, inv, gamma, beta, y);
      reference::batch_norm_backward_train(g, x, mean, inv, gamma, gy, gx, gg, gb);
    }
    benchmark::DoNotOptimize(gx.data());
  }
}

// channels, spatial side: the four stages of the width-0.25 network.
void ConvArgs(benchmark::internal::Benchmark* b) {
  b->Args({16, 28})->Args({32, 14})->Args({64, 7})->Args({128, 4})->Unit(benchmark::kMillisecond);
}

BENCHMARK(ConvForward<false>)->Name("ConvForward/reference")->Apply(ConvArgs);
BENCHMARK(ConvForward<true>)->Name("ConvForward/parallel")->Apply(ConvArgs);
BENCHMARK(ConvBackwardInput<false>)->Name("ConvBackwardInput/reference")->Apply(ConvArgs);
BENCHMARK(ConvBackwardInput<true>)->Name("ConvBackwardInput/parallel")->Apply(ConvArgs);
BENCHMARK(ConvBackwardWeight<false>)->Name("ConvBackwardWeight/reference")->Apply(ConvArgs);
BENCHMARK(ConvBackwardWeight<true>)->Name("ConvBackwardWeight/parallel")->Apply(ConvArgs);
BENCHMARK(BatchNormTrain<false>)->Name("BatchNormTrain/reference")->Apply(ConvArgs);
BENCHMARK(BatchNormTrain<true>)->Name("BatchNormTrain/parallel")->Apply(ConvArgs);

// One SGD-free forward+backward of a 64-sample batch at depth d.
void TrainStep(benchmark::State& state) {
  NetworkSpec spec;
  spec.in_channels = 1;
  spec.width_multiplier = 0.25;
  DepthPartitionedNetwork net(spec, 0);
  const int depth = static_cast<int>(state.range(0));
  const auto x = Tensor::from({64, 1, 28, 28}, random_buffer(64 * 28 * 28, 3));
  std::vector<std::int32_t> y(64);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::int32_t>(i % 10);
  net.activate_depth(depth);
  for (auto _ : state) {
    const auto loss = cross_entropy(net.forward_at_depth(x, depth, Mode::kTrain), y);
    loss.backward();
    for (auto* p : net.trainable_parameters()) p->value.clear_grad();
  }
  state.counters["threads"] = omp_get_max_threads();
}
BENCHMARK(TrainStep)->DenseRange(1, 8, 1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
