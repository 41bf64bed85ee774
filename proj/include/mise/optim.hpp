#pragma once

#include <cmath>
#include <cstdint>

#include "mise/rng.hpp"
#include "mise/tensor.hpp"

namespace mise {

enum class OptimizerMode { plain, adaptive };

struct OptimizerState {
    OptimizerMode mode = OptimizerMode::plain;
    double learning_rate = 1e-2;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    ParamSet first_moment;  // adaptive mode only
    ParamSet second_moment; // adaptive mode only

    static OptimizerState plain(double lr) {
        OptimizerState s;
        s.mode = OptimizerMode::plain;
        s.learning_rate = lr;
        return s;
    }

    static OptimizerState adaptive(double lr, double weight_decay = 0.01) {
        OptimizerState s;
        s.mode = OptimizerMode::adaptive;
        s.learning_rate = lr;
        s.weight_decay = weight_decay;
        return s;
    }
};

/// Plain mode: theta -= lr * g.
/// Adaptive mode: Adam moments with bias correction and decoupled weight decay
/// (theta *= 1 - lr * wd before the moment step).
inline void optimizer_step(OptimizerState& state, ParamSet& params, const ParamSet& grads) {
    if (!params.same_layout(grads)) throw UsageError("optimizer_step: gradient keys/shapes do not match parameters");
    for (const auto& [name, g] : grads)
        if (!g.all_finite()) throw NumericError("optimizer_step: non-finite gradient for '" + name + "'");

    ++state.step;
    const double lr = state.learning_rate;

    if (state.mode == OptimizerMode::plain) {
        auto gi = grads.begin();
        for (auto pi = params.begin(); pi != params.end(); ++pi, ++gi) {
            auto p = pi->second.values();
            auto g = gi->second.values();
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
        }
        return;
    }

    if (state.first_moment.empty()) {
        state.first_moment = params.zeros_like();
        state.second_moment = params.zeros_like();
    } else if (!state.first_moment.same_layout(params)) {
        throw UsageError("optimizer_step: moment shapes do not match parameters");
    }

    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    auto gi = grads.begin();
    auto mi = state.first_moment.begin();
    auto vi = state.second_moment.begin();
    for (auto pi = params.begin(); pi != params.end(); ++pi, ++gi, ++mi, ++vi) {
        auto p = pi->second.values();
        auto g = gi->second.values();
        auto m = mi->second.values();
        auto v = vi->second.values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] *= 1.0 - lr * state.weight_decay;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

/// Inverted-dropout mask: 0 with probability `rate`, else 1 / (1 - rate).
inline Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1)");
    Tensor mask(shape, 1.0);
    if (rate == 0.0) return mask;
    const double keep = 1.0 / (1.0 - rate);
    for (double& v : mask.values()) v = rng.uniform() < rate ? 0.0 : keep;
    return mask;
}

} // namespace mise
