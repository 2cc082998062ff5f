// Bias-corrected Adam.
#pragma once

#include <cmath>

#include "tgre/tensor.hpp"

namespace tgre {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Moment estimates for one parameter tensor. The step counter lives here so
// independent parameters can be stepped independently in tests; the trainer
// steps all of a stage's states in lockstep.
template <typename T>
struct AdamState {
    Tensor<T> m, v;
    long long t = 0;

    explicit AdamState(const std::vector<int>& shape) : m(shape), v(shape) {}

    void step(Tensor<T>& param, const Tensor<T>& grad, const AdamConfig& cfg) {
        require_same_shape(param, grad, "adam_step");
        require_same_shape(param, m, "adam_step");
        ++t;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (size_t i = 0; i < param.numel(); ++i) {
            const double g = static_cast<double>(grad[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / c1;
            const double vhat = vi / c2;
            param[i] = static_cast<T>(static_cast<double>(param[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
        }
    }
};

}  // namespace tgre
