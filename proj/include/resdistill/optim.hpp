#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "resdistill/common.hpp"
#include "resdistill/tensor.hpp"

namespace resdistill {

struct AdamConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("AdamConfig: learning_rate must be > 0");
        if (beta1 <= 0.0 || beta1 >= 1.0) throw std::invalid_argument("AdamConfig: beta1 must be in (0,1)");
        if (beta2 <= 0.0 || beta2 >= 1.0) throw std::invalid_argument("AdamConfig: beta2 must be in (0,1)");
        if (epsilon <= 0.0) throw std::invalid_argument("AdamConfig: epsilon must be > 0");
    }
};

// A named trainable tensor plus its optimizer state. The tensor's grad buffer
// is the gradient accumulator: backward() adds into it (scaled by 1/k for
// k-sample accumulation) until adam_step consumes and clears it.
template <typename T>
struct Parameter {
    std::string name;
    TensorPtr<T> value;
    std::vector<T> adam_m;
    std::vector<T> adam_v;
    long step_count = 0;

    Parameter() = default;
    Parameter(std::string n, TensorPtr<T> v) : name(std::move(n)), value(std::move(v)) {
        value->requires_grad = true;
        value->ensure_grad();
        adam_m.assign(value->numel(), T(0));
        adam_v.assign(value->numel(), T(0));
    }

    std::vector<T>& accumulated_grad() { return value->grad; }
    void clear_grad() { value->clear_grad(); }
    bool trainable() const { return value->requires_grad; }
};

// Bias-corrected Adam over the accumulated gradients. Frozen parameters
// (requires_grad false) are skipped entirely; their state does not advance.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamConfig& cfg) {
    cfg.validate();
    for (Parameter<T>* p : params) {
        if (!p->trainable()) continue;
        p->value->ensure_grad();
        p->step_count += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, double(p->step_count));
        const double bc2 = 1.0 - std::pow(cfg.beta2, double(p->step_count));
        T* v = p->value->data.data();
        T* g = p->value->grad.data();
        for (std::size_t i = 0; i < p->value->numel(); ++i) {
            double gi = double(g[i]);
            double m = cfg.beta1 * double(p->adam_m[i]) + (1.0 - cfg.beta1) * gi;
            double var = cfg.beta2 * double(p->adam_v[i]) + (1.0 - cfg.beta2) * gi * gi;
            p->adam_m[i] = T(m);
            p->adam_v[i] = T(var);
            double mhat = m / bc1;
            double vhat = var / bc2;
            v[i] = T(double(v[i]) - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
        }
        p->clear_grad();
    }
}

// Kaiming-normal init: normal(0, sqrt(2/fan_in)). Deterministic per seed.
template <typename T>
TensorPtr<T> he_init(const std::vector<int>& shape, int fan_in, std::uint64_t seed) {
    if (fan_in <= 0) throw std::invalid_argument("he_init: fan_in must be > 0");
    auto t = make_tensor<T>(shape);
    Rng rng(seed);
    const double stddev = std::sqrt(2.0 / double(fan_in));
    for (auto& v : t->data) v = T(rng.normal(0.0, stddev));
    return t;
}

} // namespace resdistill
