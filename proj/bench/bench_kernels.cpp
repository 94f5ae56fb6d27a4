#include <benchmark/benchmark.h>

#include <vector>

#include "mangares/image.hpp"
#include "mangares/nn/kernels.hpp"
#include "mangares/util/rng.hpp"

namespace {

using mr::Rng;

std::vector<float> random_vec(size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

// 3x3 convolution, 32->32 channels on a 64x64 map — the restorer's hot loop.
constexpr int kN = 1, kC = 32, kH = 64, kW = 64, kK = 3;

void conv2d_serial(benchmark::State& state) {
    const auto x = random_vec(static_cast<size_t>(kN) * kC * kH * kW, 1);
    const auto w = random_vec(static_cast<size_t>(kC) * kC * kK * kK, 2);
    const auto b = random_vec(kC, 3);
    std::vector<float> out(static_cast<size_t>(kN) * kC * kH * kW);
    for (auto _ : state) {
        mr::nn::kern::conv2d_fwd_serial(x.data(), w.data(), b.data(), out.data(), kN, kC, kH,
                                        kW, kC, kK, 1, 1, kH, kW);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(conv2d_serial);

void conv2d_omp(benchmark::State& state) {
    const auto x = random_vec(static_cast<size_t>(kN) * kC * kH * kW, 1);
    const auto w = random_vec(static_cast<size_t>(kC) * kC * kK * kK, 2);
    const auto b = random_vec(kC, 3);
    std::vector<float> out(static_cast<size_t>(kN) * kC * kH * kW);
    for (auto _ : state) {
        mr::nn::kern::conv2d_fwd_omp(x.data(), w.data(), b.data(), out.data(), kN, kC, kH, kW,
                                     kC, kK, 1, 1, kH, kW);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(conv2d_omp);

void convex_up_serial(benchmark::State& state) {
    const auto feat = random_vec(static_cast<size_t>(kN) * kC * kH * kW, 4);
    const auto logits = random_vec(static_cast<size_t>(kN) * 9 * kH * kW, 5);
    std::vector<float> out(static_cast<size_t>(kN) * kC * kH * kW * 4);
    for (auto _ : state) {
        mr::nn::kern::convex_up_fwd_serial(feat.data(), logits.data(), out.data(), kN, kC, kH,
                                           kW, kH * 2, kW * 2);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(convex_up_serial);

void convex_up_omp(benchmark::State& state) {
    const auto feat = random_vec(static_cast<size_t>(kN) * kC * kH * kW, 4);
    const auto logits = random_vec(static_cast<size_t>(kN) * 9 * kH * kW, 5);
    std::vector<float> out(static_cast<size_t>(kN) * kC * kH * kW * 4);
    for (auto _ : state) {
        mr::nn::kern::convex_up_fwd_omp(feat.data(), logits.data(), out.data(), kN, kC, kH, kW,
                                        kH * 2, kW * 2);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(convex_up_omp);

void blur_serial(benchmark::State& state) {
    Rng rng(7);
    mr::Image img(512, 512);
    for (auto& v : img.data) v = rng.uniform();
    std::vector<double> out(img.data.size());
    const double taps[3] = {0.25, 0.5, 0.25};
    for (auto _ : state) {
        mr::kern::gaussian_blur_serial(img.data.data(), out.data(), 512, 512, taps, 1);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(blur_serial);

void blur_omp(benchmark::State& state) {
    Rng rng(7);
    mr::Image img(512, 512);
    for (auto& v : img.data) v = rng.uniform();
    std::vector<double> out(img.data.size());
    const double taps[3] = {0.25, 0.5, 0.25};
    for (auto _ : state) {
        mr::kern::gaussian_blur_omp(img.data.data(), out.data(), 512, 512, taps, 1);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(blur_omp);

void area_resample_serial(benchmark::State& state) {
    Rng rng(9);
    mr::Image img(512, 512);
    for (auto& v : img.data) v = rng.uniform();
    std::vector<double> out(256 * 256);
    for (auto _ : state) {
        mr::kern::resample_area_serial(img.data.data(), out.data(), 512, 512, 256, 256);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(area_resample_serial);

void area_resample_omp(benchmark::State& state) {
    Rng rng(9);
    mr::Image img(512, 512);
    for (auto& v : img.data) v = rng.uniform();
    std::vector<double> out(256 * 256);
    for (auto _ : state) {
        mr::kern::resample_area_omp(img.data.data(), out.data(), 512, 512, 256, 256);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(area_resample_omp);

}  // namespace

BENCHMARK_MAIN();
