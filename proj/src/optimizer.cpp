#include "microseg/optimizer.hpp"

#include <cmath>

namespace microseg {

OptState init_opt_state(const Model& model) {
    OptState s;
    for (const auto& p : model.params) {
        s.m.emplace_back(p.value.shape);
        s.v.emplace_back(p.value.shape);
    }
    return s;
}

void adamw_update(double* theta, const double* grad, double* m, double* v, size_t n,
                  long t, double lr, const AdamWConfig& cfg) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t i = 0; i < n; ++i) {
        const double g = grad[i];
        if (!std::isfinite(g))
            throw ImageError("adamw: non-finite gradient, aborting training");
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps) +
                    lr * cfg.weight_decay * theta[i];
    }
}

void adamw_step(Model& model, OptState& state, double lr, const AdamWConfig& cfg,
                bool skip_backbone) {
    state.t++;
    for (size_t i = 0; i < model.params.size(); ++i) {
        Param& p = model.params[i];
        if (skip_backbone && p.backbone) continue;
        adamw_update(p.value.ptr(), p.grad.ptr(), state.m[i].ptr(), state.v[i].ptr(),
                     p.value.size(), state.t, lr, cfg);
    }
}

}  // namespace microseg
