#pragma once

#include <cstdint>
#include <vector>

#include "microseg/image.hpp"
#include "microseg/tensor.hpp"

namespace microseg {

struct LossParams {
    enum class Kind { CrossEntropy, Focal };
    Kind kind = Kind::Focal;
    double gamma = 2.0;
    std::vector<double> alpha;  // per-class weights; empty means all ones
};

struct LossResult {
    double loss = 0.0;
    Tensor d_logits;  // P x K, gradient of the mean loss
};

// Mean over pixels of -alpha_y * log softmax(logits)_y, analytic gradient.
LossResult cross_entropy(const Tensor& logits, const std::vector<uint8_t>& labels,
                         const std::vector<double>& alpha);

// Mean over pixels of -alpha_y * (1 - p_y)^gamma * log p_y; the modulating
// factor applies to the true-class softmax probability.
LossResult focal_loss(const Tensor& logits, const std::vector<uint8_t>& labels,
                      double gamma, const std::vector<double>& alpha);

LossResult evaluate_loss(const Tensor& logits, const std::vector<uint8_t>& labels,
                         const LossParams& params);

// alpha_c = (1/f_c) / sum_k (1/f_k), f_c = pixel frequency over the maps.
// A class absent from the labels is an error unless floor_frequency > 0, in
// which case its frequency is floored there.
std::vector<double> class_weights_inverse_frequency(
    const std::vector<const LabelMap*>& maps, double floor_frequency = 0.0);

}  // namespace microseg
