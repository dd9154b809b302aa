// Serial reference kernels against their OpenMP counterparts.
// Thread count follows OMP_NUM_THREADS.
#include <benchmark/benchmark.h>

#include <random>

#include "rqpipe/cnn.hpp"
#include "rqpipe/metrics.hpp"
#include "rqpipe/mock_codec.hpp"
#include "rqpipe/resample.hpp"

using namespace rqpipe;

namespace {

Plane noise_plane(int w, int h, std::uint64_t seed) {
  Plane p(w, h, 10);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, 1023);
  for (auto& s : p.samples) s = static_cast<std::uint16_t>(d(rng));
  return p;
}

cnn::Tensor noise_tensor(int c, int h, int w) {
  cnn::Tensor t(c, h, w);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  for (auto& v : t.values) v = d(rng);
  return t;
}

cnn::ConvWeights noise_conv(int out_ch, int in_ch, int k) {
  cnn::ConvWeights w{out_ch, in_ch, k, {}, {}};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> d(-0.1f, 0.1f);
  w.weights.resize(static_cast<std::size_t>(out_ch) * in_ch * k * k);
  for (auto& v : w.weights) v = d(rng);
  w.bias.assign(out_ch, 0.01f);
  return w;
}

const Plane& frame_1080p() {
  static const Plane p = noise_plane(1920, 1080, 1);
  return p;
}

}  // namespace

static void BM_DownsampleSerial(benchmark::State& st) {
  for (auto _ : st) {
    benchmark::DoNotOptimize(
        reference::resample_plane_serial(frame_1080p(), ScaleFactor(1, 2), ResampleFilter::lanczos(3)));
  }
}
static void BM_DownsampleOmp(benchmark::State& st) {
  for (auto _ : st) {
    benchmark::DoNotOptimize(downsample_plane(frame_1080p(), ScaleFactor(1, 2), ResampleFilter::lanczos(3)));
  }
}

static void BM_MseSerial(benchmark::State& st) {
  static const Plane other = noise_plane(1920, 1080, 2);
  for (auto _ : st) benchmark::DoNotOptimize(reference::mse_plane_serial(frame_1080p(), other));
}
static void BM_MseOmp(benchmark::State& st) {
  static const Plane other = noise_plane(1920, 1080, 2);
  for (auto _ : st) benchmark::DoNotOptimize(mse_plane(frame_1080p(), other));
}

static void BM_Conv2dSerial(benchmark::State& st) {
  const auto x = noise_tensor(32, 128, 128);
  const auto w = noise_conv(16, 32, 3);
  for (auto _ : st) benchmark::DoNotOptimize(cnn::reference::conv2d_serial(x, w, 1, 1));
}
static void BM_Conv2dOmp(benchmark::State& st) {
  const auto x = noise_tensor(32, 128, 128);
  const auto w = noise_conv(16, 32, 3);
  for (auto _ : st) benchmark::DoNotOptimize(cnn::conv2d(x, w, 1, 1));
}

static void BM_MockCodecSerial(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(mock::reference::code_plane_serial(frame_1080p(), 32));
}
static void BM_MockCodecOmp(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(mock::decode_plane(mock::encode_plane(frame_1080p(), 32)));
}

BENCHMARK(BM_DownsampleSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DownsampleOmp)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MseSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MseOmp)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Conv2dSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dOmp)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MockCodecSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MockCodecOmp)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
