// Times the OpenMP kernels against their serial references and checks that
// both produce identical output.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "microseg/dzone.hpp"
#include "microseg/layers.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double seconds(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
}

template <typename F>
double time_best_of(int reps, F&& f) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = Clock::now();
        f();
        best = std::min(best, seconds(t0, Clock::now()));
    }
    return best;
}

void bench_conv() {
    const int cin = 32, cout = 64, h = 128, w = 128, k = 3;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);

    std::vector<double> in(static_cast<size_t>(cin) * h * w);
    std::vector<double> weight(static_cast<size_t>(cout) * cin * k * k);
    std::vector<double> bias(cout);
    for (double& v : in) v = u(rng);
    for (double& v : weight) v = u(rng);
    for (double& v : bias) v = u(rng);

    std::vector<double> out_p(static_cast<size_t>(cout) * h * w);
    std::vector<double> out_s(out_p.size());

    const double tp = time_best_of(3, [&] {
        microseg::kernels::conv2d_forward(in.data(), cin, h, w, weight.data(),
                                          bias.data(), cout, k, out_p.data());
    });
    const double ts = time_best_of(3, [&] {
        microseg::kernels::serial::conv2d_forward(in.data(), cin, h, w, weight.data(),
                                                  bias.data(), cout, k, out_s.data());
    });

    bool identical = out_p == out_s;
    std::printf("conv2d %dx%dx%d -> %d ch, k=%d: serial %.3fs, parallel %.3fs, "
                "speedup %.2fx, bitwise %s\n",
                cin, h, w, cout, k, ts, tp, ts / tp,
                identical ? "identical" : "DIFFERENT");
}

void bench_edt() {
    const int n = 512;
    std::mt19937_64 rng(11);
    std::bernoulli_distribution b(0.01);
    microseg::Mask mask(n, n);
    for (auto& v : mask.on) v = b(rng) ? 1 : 0;
    mask.on[0] = 1;  // never empty

    microseg::DistanceMap dp, ds;
    const double tp = time_best_of(3, [&] { dp = microseg::distance_transform(mask); });
    const double ts =
        time_best_of(1, [&] { ds = microseg::serial::distance_transform(mask); });

    double max_err = 0;
    for (size_t i = 0; i < dp.d.size(); ++i)
        max_err = std::max(max_err, std::abs(dp.d[i] - ds.d[i]));
    std::printf("edt %dx%d: serial %.3fs, parallel %.3fs, speedup %.2fx, "
                "max |diff| %.2e\n",
                n, n, ts, tp, ts / tp, max_err);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without openmp\n");
#endif
    bench_conv();
    bench_edt();
    return 0;
}
