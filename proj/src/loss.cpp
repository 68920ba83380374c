#include "microseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace microseg {
namespace {

// softmax row with max subtraction; returns log-sum-exp
double softmax_row(const double* z, int k, double* p) {
    double zmax = z[0];
    for (int c = 1; c < k; ++c) zmax = std::max(zmax, z[c]);
    double denom = 0.0;
    for (int c = 0; c < k; ++c) denom += std::exp(z[c] - zmax);
    for (int c = 0; c < k; ++c) p[c] = std::exp(z[c] - zmax) / denom;
    return zmax + std::log(denom);
}

double alpha_of(const std::vector<double>& alpha, uint8_t y) {
    return alpha.empty() ? 1.0 : alpha[y];
}

}  // namespace

LossResult cross_entropy(const Tensor& logits, const std::vector<uint8_t>& labels,
                         const std::vector<double>& alpha) {
    const int p = logits.shape[0], k = logits.shape[1];
    if (static_cast<size_t>(p) != labels.size())
        throw ImageError("cross_entropy: label count mismatch");

    LossResult res;
    res.d_logits = Tensor({p, k});
    std::vector<double> prob(k);
    double total = 0.0;
    for (int i = 0; i < p; ++i) {
        const double* z = logits.ptr() + static_cast<size_t>(i) * k;
        const uint8_t y = labels[i];
        if (y >= k) throw ImageError("cross_entropy: label out of range");
        const double lse = softmax_row(z, k, prob.data());
        const double a = alpha_of(alpha, y);
        total += -a * (z[y] - lse);
        double* g = res.d_logits.ptr() + static_cast<size_t>(i) * k;
        for (int c = 0; c < k; ++c) g[c] = a * (prob[c] - (c == y ? 1.0 : 0.0)) / p;
    }
    res.loss = total / p;
    return res;
}

LossResult focal_loss(const Tensor& logits, const std::vector<uint8_t>& labels,
                      double gamma, const std::vector<double>& alpha) {
    if (gamma < 0.0) throw ImageError("focal_loss: gamma must be >= 0");
    const int p = logits.shape[0], k = logits.shape[1];
    if (static_cast<size_t>(p) != labels.size())
        throw ImageError("focal_loss: label count mismatch");

    LossResult res;
    res.d_logits = Tensor({p, k});
    std::vector<double> prob(k);
    double total = 0.0;
    for (int i = 0; i < p; ++i) {
        const double* z = logits.ptr() + static_cast<size_t>(i) * k;
        const uint8_t y = labels[i];
        if (y >= k) throw ImageError("focal_loss: label out of range");
        const double lse = softmax_row(z, k, prob.data());
        const double a = alpha_of(alpha, y);
        const double pt = prob[y];
        const double log_pt = z[y] - lse;
        const double q = 1.0 - pt;
        const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
        total += -a * mod * log_pt;

        // dL/d(pt), then the softmax Jacobian row
        double dl_dpt = -a * mod / pt;
        if (gamma > 0.0 && q > 0.0)
            dl_dpt += a * gamma * std::pow(q, gamma - 1.0) * log_pt;
        double* g = res.d_logits.ptr() + static_cast<size_t>(i) * k;
        for (int c = 0; c < k; ++c) {
            const double dpt_dz = pt * ((c == y ? 1.0 : 0.0) - prob[c]);
            g[c] = dl_dpt * dpt_dz / p;
        }
    }
    res.loss = total / p;
    return res;
}

LossResult evaluate_loss(const Tensor& logits, const std::vector<uint8_t>& labels,
                         const LossParams& params) {
    if (params.kind == LossParams::Kind::CrossEntropy)
        return cross_entropy(logits, labels, params.alpha);
    return focal_loss(logits, labels, params.gamma, params.alpha);
}

std::vector<double> class_weights_inverse_frequency(
    const std::vector<const LabelMap*>& maps, double floor_frequency) {
    if (maps.empty()) throw ImageError("class weights need at least one label map");
    const int k = maps[0]->num_classes;
    std::vector<long> counts(k, 0);
    long total = 0;
    for (const LabelMap* m : maps) {
        if (m->num_classes != k) throw ImageError("class weights: K mismatch");
        for (uint8_t v : m->labels) counts[v]++;
        total += static_cast<long>(m->size());
    }

    std::vector<double> inv(k);
    for (int c = 0; c < k; ++c) {
        double f = static_cast<double>(counts[c]) / total;
        if (f == 0.0) {
            if (floor_frequency <= 0.0)
                throw ImageError("class " + std::to_string(c) +
                                 " absent from training labels; pass a floor "
                                 "frequency (e.g. 1e-4) to proceed");
            f = floor_frequency;
        }
        inv[c] = 1.0 / f;
    }
    const double norm = std::accumulate(inv.begin(), inv.end(), 0.0);
    for (double& v : inv) v /= norm;
    return inv;
}

}  // namespace microseg
