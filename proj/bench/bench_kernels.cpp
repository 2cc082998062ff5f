// Serial reference kernels vs the OpenMP ones on representative shapes.
// Both paths are bit-identical by construction; this target only compares
// speed. Run with GATED_CASCADE_THREADS=<n> to vary the thread budget.
#include <benchmark/benchmark.h>

#include <vector>

#include "tgre/kernels.hpp"
#include "tgre/rng.hpp"

using namespace tgre;

namespace {

std::vector<float> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

// one batch of landmark patches through the first desk conv: 40 patches
// (8 samples x 5 landmarks), 1->8 channels, 16x16, 3x3 stride 2
constexpr int CB = 40, CIN = 1, CH = 16, CW = 16, COUT = 8, CK = 3, CS = 2;

void bench_conv2d(benchmark::State& state, bool parallel) {
    const kernels::ConvDims d = kernels::conv_out(CH, CW, CK, CK, CS, kernels::Pad::Same);
    const auto x = random_vec(static_cast<size_t>(CB) * CIN * CH * CW, 1);
    const auto k = random_vec(static_cast<size_t>(COUT) * CIN * CK * CK, 2);
    std::vector<float> y(static_cast<size_t>(CB) * COUT * d.ho * d.wo);
    for (auto _ : state) {
        if (parallel)
            kernels::par::conv2d(y.data(), x.data(), k.data(), CB, CIN, CH, CW, COUT, CK, CK, CS,
                                 d.pad_top, d.pad_left, d.ho, d.wo);
        else
            kernels::serial::conv2d(y.data(), x.data(), k.data(), CB, CIN, CH, CW, COUT, CK, CK, CS,
                                    d.pad_top, d.pad_left, d.ho, d.wo);
        benchmark::DoNotOptimize(y.data());
    }
}

void bench_conv2d_dk(benchmark::State& state, bool parallel) {
    const kernels::ConvDims d = kernels::conv_out(CH, CW, CK, CK, CS, kernels::Pad::Same);
    const auto x = random_vec(static_cast<size_t>(CB) * CIN * CH * CW, 3);
    const auto dy = random_vec(static_cast<size_t>(CB) * COUT * d.ho * d.wo, 4);
    std::vector<float> dk(static_cast<size_t>(COUT) * CIN * CK * CK);
    for (auto _ : state) {
        std::fill(dk.begin(), dk.end(), 0.0f);
        if (parallel)
            kernels::par::conv2d_dk(dk.data(), x.data(), dy.data(), CB, CIN, CH, CW, COUT, CK, CK,
                                    CS, d.pad_top, d.pad_left, d.ho, d.wo);
        else
            kernels::serial::conv2d_dk(dk.data(), x.data(), dy.data(), CB, CIN, CH, CW, COUT, CK,
                                       CK, CS, d.pad_top, d.pad_left, d.ho, d.wo);
        benchmark::DoNotOptimize(dk.data());
    }
}

// the desk concat -> fc projection for a batch of 8
void bench_affine(benchmark::State& state, bool parallel) {
    const int B = 8, In = 640, Out = 128;
    const auto x = random_vec(static_cast<size_t>(B) * In, 5);
    const auto w = random_vec(static_cast<size_t>(In) * Out, 6);
    const auto b = random_vec(Out, 7);
    std::vector<float> y(static_cast<size_t>(B) * Out);
    for (auto _ : state) {
        if (parallel)
            kernels::par::affine(y.data(), x.data(), w.data(), b.data(), B, In, Out);
        else
            kernels::serial::affine(y.data(), x.data(), w.data(), b.data(), B, In, Out);
        benchmark::DoNotOptimize(y.data());
    }
}

// full-scale tree gate: 256 samples through a depth-7 routing tree
void bench_tree_leaf(benchmark::State& state, bool parallel) {
    const int B = 256, depth = 7;
    const int nn = kernels::tree_nodes(depth);
    std::vector<float> d(static_cast<size_t>(B) * nn);
    Rng rng(8);
    for (float& v : d) v = static_cast<float>(rng.uniform(0.01, 0.99));
    std::vector<float> mu(static_cast<size_t>(B) * kernels::tree_leaves(depth));
    for (auto _ : state) {
        if (parallel)
            kernels::par::tree_leaf(mu.data(), d.data(), B, depth);
        else
            kernels::serial::tree_leaf(mu.data(), d.data(), B, depth);
        benchmark::DoNotOptimize(mu.data());
    }
}

void bench_tree_leaf_dd(benchmark::State& state, bool parallel) {
    const int B = 64, depth = 7;
    const int nn = kernels::tree_nodes(depth);
    const int nl = kernels::tree_leaves(depth);
    std::vector<float> d(static_cast<size_t>(B) * nn);
    Rng rng(9);
    for (float& v : d) v = static_cast<float>(rng.uniform(0.01, 0.99));
    const auto dmu = random_vec(static_cast<size_t>(B) * nl, 10);
    std::vector<float> dd(static_cast<size_t>(B) * nn);
    for (auto _ : state) {
        std::fill(dd.begin(), dd.end(), 0.0f);
        if (parallel)
            kernels::par::tree_leaf_dd(dd.data(), d.data(), dmu.data(), B, depth);
        else
            kernels::serial::tree_leaf_dd(dd.data(), d.data(), dmu.data(), B, depth);
        benchmark::DoNotOptimize(dd.data());
    }
}

// full-scale mixing: 8 samples, 128 regressor outputs of 136 coordinates
void bench_gate_combine(benchmark::State& state, bool parallel) {
    const int B = 8, L = 128, O = 136;
    const auto g = random_vec(static_cast<size_t>(B) * L, 11);
    const auto R = random_vec(static_cast<size_t>(B) * L * O, 12);
    std::vector<float> y(static_cast<size_t>(B) * O);
    for (auto _ : state) {
        if (parallel)
            kernels::par::gate_combine(y.data(), g.data(), R.data(), B, L, O);
        else
            kernels::serial::gate_combine(y.data(), g.data(), R.data(), B, L, O);
        benchmark::DoNotOptimize(y.data());
    }
}

BENCHMARK_CAPTURE(bench_conv2d, serial, false);
BENCHMARK_CAPTURE(bench_conv2d, parallel, true);
BENCHMARK_CAPTURE(bench_conv2d_dk, serial, false);
BENCHMARK_CAPTURE(bench_conv2d_dk, parallel, true);
BENCHMARK_CAPTURE(bench_affine, serial, false);
BENCHMARK_CAPTURE(bench_affine, parallel, true);
BENCHMARK_CAPTURE(bench_tree_leaf, serial, false);
BENCHMARK_CAPTURE(bench_tree_leaf, parallel, true);
BENCHMARK_CAPTURE(bench_tree_leaf_dd, serial, false);
BENCHMARK_CAPTURE(bench_tree_leaf_dd, parallel, true);
BENCHMARK_CAPTURE(bench_gate_combine, serial, false);
BENCHMARK_CAPTURE(bench_gate_combine, parallel, true);

}  // namespace

BENCHMARK_MAIN();
