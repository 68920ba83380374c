#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace microseg {

// Dense row-major array with an explicit shape. All network math is 64-bit.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
        data.assign(numel(shape), fill);
    }

    static size_t numel(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        return n;
    }
    size_t size() const { return data.size(); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

}  // namespace microseg
