#pragma once

#include "microseg/model.hpp"

namespace microseg {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0005;
};

struct OptState {
    std::vector<Tensor> m, v;  // per parameter, shapes mirror the model
    long t = 0;
};

OptState init_opt_state(const Model& model);

// One bias-corrected Adam update on a raw array with decoupled decay:
//   theta <- theta - lr*mhat/(sqrt(vhat)+eps) - lr*weight_decay*theta
// Throws on a non-finite gradient.
void adamw_update(double* theta, const double* grad, double* m, double* v, size_t n,
                  long t, double lr, const AdamWConfig& cfg);

// Steps every trainable parameter from its accumulated gradient. Parameters
// flagged backbone are skipped (moments untouched) when skip_backbone is set.
// lr = 0 leaves parameters unchanged but still advances the moments.
void adamw_step(Model& model, OptState& state, double lr, const AdamWConfig& cfg,
                bool skip_backbone = false);

}  // namespace microseg
