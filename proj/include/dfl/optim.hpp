#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dfl/errors.hpp"
#include "dfl/model.hpp"

namespace dfl {

enum class OptimizerKind { SGD, Adam, Adagrad, Adadelta, RMSprop };

inline const char* to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::SGD: return "sgd";
        case OptimizerKind::Adam: return "adam";
        case OptimizerKind::Adagrad: return "adagrad";
        case OptimizerKind::Adadelta: return "adadelta";
        case OptimizerKind::RMSprop: return "rmsprop";
    }
    return "?";
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::SGD;
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "adagrad") return OptimizerKind::Adagrad;
    if (s == "adadelta") return OptimizerKind::Adadelta;
    if (s == "rmsprop") return OptimizerKind::RMSprop;
    throw ConfigError("unknown optimizer '" + s + "'");
}

// Standard update rules with the usual defaults:
//   Adam(beta1=0.9, beta2=0.999, eps=1e-8), RMSprop(alpha=0.99, eps=1e-8),
//   Adagrad(eps=1e-10), Adadelta(rho=0.9, eps=1e-6).
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::SGD;
    double learning_rate = 0.01;
    long long step = 0;
    ModelParams acc1;  // Adam m / Adagrad,RMSprop squared-grad / Adadelta squared-grad
    ModelParams acc2;  // Adam v / Adadelta squared-delta

    static OptimizerState create(OptimizerKind kind, double lr, const ModelParams& shape) {
        if (lr <= 0.0) throw ConfigError("learning rate must be positive");
        OptimizerState st;
        st.kind = kind;
        st.learning_rate = lr;
        auto zeros_like = [&shape]() {
            ModelParams z;
            z.layers.resize(shape.layers.size());
            for (std::size_t i = 0; i < shape.layers.size(); ++i) {
                z.layers[i].weights = Tensor(shape.layers[i].weights.dims());
                z.layers[i].bias.assign(shape.layers[i].bias.size(), 0.0);
            }
            return z;
        };
        if (kind != OptimizerKind::SGD) st.acc1 = zeros_like();
        if (kind == OptimizerKind::Adam || kind == OptimizerKind::Adadelta) st.acc2 = zeros_like();
        return st;
    }
};

namespace detail {

template <typename F>
void for_each_param(ModelParams& params, const ModelParams& grads, OptimizerState& st, F&& update) {
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        auto& lw = params.layers[li];
        const auto& lg = grads.layers[li];
        const std::size_t n = lw.param_count();
        auto* a1 = st.acc1.layers.empty() ? nullptr : &st.acc1.layers[li];
        auto* a2 = st.acc2.layers.empty() ? nullptr : &st.acc2.layers[li];
        for (std::size_t e = 0; e < n; ++e) {
            update(lw.entry(e), lg.entry(e), a1 ? &a1->entry(e) : nullptr, a2 ? &a2->entry(e) : nullptr);
        }
    }
}

}  // namespace detail

inline void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& st) {
    if (st.learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
    if (!params.same_shape(grads)) throw ShapeError("gradient shape mismatch");
    st.step += 1;
    const double lr = st.learning_rate;
    switch (st.kind) {
        case OptimizerKind::SGD:
            detail::for_each_param(params, grads, st, [lr](double& w, double g, double*, double*) { w -= lr * g; });
            break;
        case OptimizerKind::Adam: {
            const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
            const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
            detail::for_each_param(params, grads, st, [=](double& w, double g, double* m, double* v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                w -= lr * (*m / bc1) / (std::sqrt(*v / bc2) + eps);
            });
            break;
        }
        case OptimizerKind::Adagrad: {
            const double eps = 1e-10;
            detail::for_each_param(params, grads, st, [=](double& w, double g, double* acc, double*) {
                *acc += g * g;
                w -= lr * g / (std::sqrt(*acc) + eps);
            });
            break;
        }
        case OptimizerKind::Adadelta: {
            const double rho = 0.9, eps = 1e-6;
            detail::for_each_param(params, grads, st, [=](double& w, double g, double* acc, double* dacc) {
                *acc = rho * *acc + (1.0 - rho) * g * g;
                const double dx = g * std::sqrt(*dacc + eps) / std::sqrt(*acc + eps);
                *dacc = rho * *dacc + (1.0 - rho) * dx * dx;
                w -= lr * dx;
            });
            break;
        }
        case OptimizerKind::RMSprop: {
            const double alpha = 0.99, eps = 1e-8;
            detail::for_each_param(params, grads, st, [=](double& w, double g, double* acc, double*) {
                *acc = alpha * *acc + (1.0 - alpha) * g * g;
                w -= lr * g / (std::sqrt(*acc) + eps);
            });
            break;
        }
    }
}

}  // namespace dfl
