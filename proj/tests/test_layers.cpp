#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "microseg/layers.hpp"

using namespace microseg::kernels;

namespace {

std::vector<double> random_vec(size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

}  // namespace

TEST_CASE("3x3 conv with a centered delta kernel shifts by the bias") {
    const std::vector<double> in{1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<double> weight(9, 0.0);
    weight[4] = 1.0;  // center tap
    const std::vector<double> bias{0.5};
    std::vector<double> out(9);

    conv2d_forward(in.data(), 1, 3, 3, weight.data(), bias.data(), 1, 3, out.data());
    for (int i = 0; i < 9; ++i) CHECK(out[i] == doctest::Approx(in[i] + 0.5));
}

TEST_CASE("3x3 box kernel sums the neighborhood with zero padding") {
    const std::vector<double> in{1, 2, 3, 4, 5, 6, 7, 8, 9};
    const std::vector<double> weight(9, 1.0);
    const std::vector<double> bias{0.0};
    std::vector<double> out(9);

    conv2d_forward(in.data(), 1, 3, 3, weight.data(), bias.data(), 1, 3, out.data());
    CHECK(out[4] == doctest::Approx(45.0));   // full neighborhood
    CHECK(out[0] == doctest::Approx(12.0));   // corner: 1+2+4+5
    CHECK(out[1] == doctest::Approx(21.0));   // edge: 1+2+3+4+5+6
}

TEST_CASE("multi-channel conv sums over input channels") {
    // two input channels, kernel picks the center of each with weights 1 and 10
    const std::vector<double> in{1, 2, 3, 4,   10, 20, 30, 40};
    std::vector<double> weight(2 * 9, 0.0);
    weight[4] = 1.0;
    weight[9 + 4] = 10.0;
    const std::vector<double> bias{0.0};
    std::vector<double> out(4);

    conv2d_forward(in.data(), 2, 2, 2, weight.data(), bias.data(), 1, 3, out.data());
    CHECK(out[0] == doctest::Approx(101.0));
    CHECK(out[3] == doctest::Approx(404.0));
}

TEST_CASE("parallel conv matches the serial reference bitwise") {
    std::mt19937_64 rng(17);
    const int cin = 3, cout = 5, h = 11, w = 13, k = 3;
    auto in = random_vec(static_cast<size_t>(cin) * h * w, rng);
    auto weight = random_vec(static_cast<size_t>(cout) * cin * k * k, rng);
    auto bias = random_vec(cout, rng);

    std::vector<double> out_p(static_cast<size_t>(cout) * h * w);
    std::vector<double> out_s(out_p.size());
    conv2d_forward(in.data(), cin, h, w, weight.data(), bias.data(), cout, k,
                   out_p.data());
    serial::conv2d_forward(in.data(), cin, h, w, weight.data(), bias.data(), cout, k,
                           out_s.data());
    CHECK(out_p == out_s);
}

TEST_CASE("conv backward matches central finite differences") {
    std::mt19937_64 rng(23);
    const int cin = 2, cout = 2, h = 5, w = 4, k = 3;
    auto in = random_vec(static_cast<size_t>(cin) * h * w, rng);
    auto weight = random_vec(static_cast<size_t>(cout) * cin * k * k, rng);
    auto bias = random_vec(cout, rng);
    auto d_out = random_vec(static_cast<size_t>(cout) * h * w, rng);

    // scalar objective: sum(out * d_out)
    auto objective = [&]() {
        std::vector<double> out(static_cast<size_t>(cout) * h * w);
        conv2d_forward(in.data(), cin, h, w, weight.data(), bias.data(), cout, k,
                       out.data());
        double s = 0;
        for (size_t i = 0; i < out.size(); ++i) s += out[i] * d_out[i];
        return s;
    };

    std::vector<double> d_in(in.size());
    std::vector<double> d_weight(weight.size(), 0.0);
    std::vector<double> d_bias(bias.size(), 0.0);
    conv2d_backward(d_out.data(), in.data(), weight.data(), cin, h, w, cout, k,
                    d_in.data(), d_weight.data(), d_bias.data());

    const double eps = 1e-6;
    auto check_fd = [&](std::vector<double>& theta, const std::vector<double>& grad) {
        for (size_t i = 0; i < theta.size(); i += 7) {  // spot-check a stride
            const double saved = theta[i];
            theta[i] = saved + eps;
            const double up = objective();
            theta[i] = saved - eps;
            const double down = objective();
            theta[i] = saved;
            const double fd = (up - down) / (2 * eps);
            CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
        }
    };
    check_fd(in, d_in);
    check_fd(weight, d_weight);
    check_fd(bias, d_bias);
}

TEST_CASE("relu forward and backward") {
    const std::vector<double> pre{-2, -0.5, 0, 0.5, 2};
    std::vector<double> out(5);
    relu_forward(pre.data(), 5, out.data());
    CHECK(out == std::vector<double>{0, 0, 0, 0.5, 2});

    const std::vector<double> d_out{1, 1, 1, 1, 1};
    std::vector<double> d_in(5);
    relu_backward(d_out.data(), pre.data(), 5, d_in.data());
    CHECK(d_in == std::vector<double>{0, 0, 0, 1, 1});
}

TEST_CASE("2x2 max pool records the winning index and routes gradient there") {
    // one channel, 4x4
    const std::vector<double> in{1, 5, 2, 0,  //
                                 3, 4, 1, 6,  //
                                 0, 1, 9, 2,  //
                                 8, 2, 3, 4};
    std::vector<double> out(4);
    std::vector<int32_t> argmax(4);
    maxpool2x2_forward(in.data(), 1, 4, 4, out.data(), argmax.data());
    CHECK(out == std::vector<double>{5, 6, 8, 9});
    CHECK(argmax == std::vector<int32_t>{1, 7, 12, 10});

    const std::vector<double> d_out{1, 2, 3, 4};
    std::vector<double> d_in(16, 0.0);
    maxpool2x2_backward(d_out.data(), argmax.data(), 1, 4, 4, d_in.data());
    CHECK(d_in[1] == 1.0);
    CHECK(d_in[7] == 2.0);
    CHECK(d_in[12] == 3.0);
    CHECK(d_in[10] == 4.0);
    double total = 0;
    for (double v : d_in) total += v;
    CHECK(total == 10.0);
}

TEST_CASE("odd trailing row and column are dropped by the pool") {
    std::mt19937_64 rng(29);
    auto in = random_vec(5 * 5, rng);
    std::vector<double> out(4);
    std::vector<int32_t> argmax(4);
    maxpool2x2_forward(in.data(), 1, 5, 5, out.data(), argmax.data());
    for (int i = 0; i < 4; ++i) {
        CHECK(argmax[i] / 5 < 4);  // never reads row 4
        CHECK(argmax[i] % 5 < 4);  // never reads col 4
        CHECK(out[i] == in[argmax[i]]);
    }
}
