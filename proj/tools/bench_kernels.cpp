// Benchmark of the hot kernels: serial reference vs OpenMP variants, plus
// throughput of the samplers and batched net passes built on them.

#include <chrono>
#include <cstdio>
#include <functional>

#include "fsde/graph.hpp"
#include "fsde/kernels.hpp"
#include "fsde/mlp.hpp"
#include "fsde/stable.hpp"

using namespace fsde;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn(); // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms, double work,
            const char* unit) {
    std::printf("%-28s serial %9.3f ms   openmp %9.3f ms   speedup %5.2fx   %8.1f %s\n",
                name, serial_ms, parallel_ms, serial_ms / parallel_ms,
                work / (parallel_ms * 1e-3), unit);
}

} // namespace

int main() {
    std::printf("threads available: %d\n\n", kernels::threads());

    // gemm shapes typical of training batches
    for (const auto [n, k, m] : {std::tuple{1024, 129, 128}, {1024, 128, 128},
                                 {4096, 64, 64}}) {
        Rng rng(1, 0);
        Mat A(n, k), B(k, m), C(n, m);
        for (auto& v : A.a) v = rng.gauss();
        for (auto& v : B.a) v = rng.gauss();
        auto run = [&] {
            kernels::gemm(false, false, n, m, k, A.a.data(), k, B.a.data(), m,
                          C.a.data(), m);
        };
        kernels::set_mode(kernels::Mode::Serial);
        const double ts = time_ms(run, 20);
        kernels::set_mode(kernels::Mode::Parallel);
        const double tp = time_ms(run, 20);
        char name[64];
        std::snprintf(name, sizeof name, "gemm %dx%dx%d", n, k, m);
        report(name, ts, tp, 2.0 * n * k * m * 1e-9, "GFLOP/s");
    }

    // stable sampling
    {
        const StableLaw law(1.95, 1.0);
        auto run = [&] { (void)sample_isotropic_stable(law, 10, 100000, 7); };
        kernels::set_mode(kernels::Mode::Serial);
        const double ts = time_ms(run, 3);
        kernels::set_mode(kernels::Mode::Parallel);
        const double tp = time_ms(run, 3);
        report("stable sampler 1e5 x d10", ts, tp, 1e5, "rows/s");
    }

    // batched mlp forward + parameter backward through the graph
    {
        const Mlp net = make_mlp({11, 128, 128, 128, 10}, 3);
        Rng rng(5, 0);
        Mat X(1024, 11);
        for (auto& v : X.a) v = rng.gauss();
        Mat target(1024, 10);
        for (auto& v : target.a) v = rng.gauss();
        auto run = [&] {
            Graph g;
            const int x = g.leaf(X, false);
            const auto p = mlp_params(g, net, true);
            const int y = mlp_emit(g, net, p, x);
            const int loss = g.smooth_l1_mean(g.sub(y, g.constant(target)), 1.0);
            (void)mlp_backward(g, p, loss);
        };
        kernels::set_mode(kernels::Mode::Serial);
        const double ts = time_ms(run, 5);
        kernels::set_mode(kernels::Mode::Parallel);
        const double tp = time_ms(run, 5);
        report("mlp fwd+bwd batch 1024", ts, tp, 1024.0, "pts/s");
    }

    return 0;
}
