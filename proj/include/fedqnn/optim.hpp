#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedqnn/errors.hpp"

namespace fedqnn {

enum class OptimizerKind { GD, Nesterov, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 0.01;
    double momentum = 0.9; // Nesterov only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // false reproduces the published update rule: no bias correction and
    // epsilon inside the square root. true switches to standard Adam
    // (bias-corrected moments, epsilon outside the root).
    bool bias_correction = false;

    bool operator==(const OptimizerConfig &) const = default;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
            throw Error("learning_rate must be a positive finite real");
        }
        if (momentum < 0.0 || momentum >= 1.0) {
            throw Error("momentum must lie in [0, 1)");
        }
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
            throw Error("beta1 and beta2 must lie in [0, 1)");
        }
        if (!(epsilon > 0.0)) {
            throw Error("epsilon must be positive");
        }
    }
};

/// Per-parameter optimizer memory over the flattened parameter vector
/// (angles followed by bias; every parameter, bias included, owns its own
/// moment entries).
struct OptimizerState {
    std::uint64_t step_count = 0;
    std::vector<double> first_moment;  // Adam moving average / Nesterov velocity
    std::vector<double> second_moment; // Adam only

    static OptimizerState zeros(std::size_t parameter_count) {
        OptimizerState s;
        s.first_moment.assign(parameter_count, 0.0);
        s.second_moment.assign(parameter_count, 0.0);
        return s;
    }
};

/// The gradient-evaluation point for Nesterov momentum: p + mu * v. The
/// training loop evaluates its gradient here and passes it to step().
inline std::vector<double> lookahead_point(const OptimizerConfig &config,
                                           const OptimizerState &state,
                                           std::span<const double> params) {
    if (config.kind != OptimizerKind::Nesterov) {
        throw WrongOptimizerKind("lookahead_point is defined for Nesterov only");
    }
    if (state.first_moment.size() != params.size()) {
        throw DimensionMismatch("optimizer state sized for " +
                                std::to_string(state.first_moment.size()) + " parameters, got " +
                                std::to_string(params.size()));
    }
    std::vector<double> point(params.begin(), params.end());
    for (std::size_t i = 0; i < point.size(); ++i) {
        point[i] += config.momentum * state.first_moment[i];
    }
    return point;
}

/// One optimizer step over the flattened parameter vector.
///
///   GD:       p' = p - alpha * g
///   Nesterov: v' = mu * v - alpha * g   (g evaluated at the lookahead point)
///             p' = p + v'
///   Adam:     v' = b1 v + (1-b1) g
///             s' = b2 s + (1-b2) g^2
///             p' = p - alpha * v' / sqrt(s' + eps)
///
/// With bias_correction the Adam update uses vhat = v'/(1-b1^t),
/// shat = s'/(1-b2^t) and p' = p - alpha * vhat / (sqrt(shat) + eps).
inline std::pair<std::vector<double>, OptimizerState> step(const OptimizerConfig &config,
                                                           const OptimizerState &state,
                                                           std::span<const double> params,
                                                           std::span<const double> grads) {
    config.validate();
    if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size()) {
        throw DimensionMismatch("params, grads and optimizer state must share one length");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            throw NonFiniteGradient("gradient contains a non-finite component");
        }
    }

    std::vector<double> next(params.begin(), params.end());
    OptimizerState out = state;
    out.step_count = state.step_count + 1;
    const double alpha = config.learning_rate;

    switch (config.kind) {
    case OptimizerKind::GD:
        for (std::size_t i = 0; i < next.size(); ++i) {
            next[i] = next[i] - alpha * grads[i];
        }
        break;
    case OptimizerKind::Nesterov:
        for (std::size_t i = 0; i < next.size(); ++i) {
            out.first_moment[i] = config.momentum * state.first_moment[i] - alpha * grads[i];
            next[i] = next[i] + out.first_moment[i];
        }
        break;
    case OptimizerKind::Adam: {
        const double t = static_cast<double>(out.step_count);
        const double v_corr = 1.0 - std::pow(config.beta1, t);
        const double s_corr = 1.0 - std::pow(config.beta2, t);
        for (std::size_t i = 0; i < next.size(); ++i) {
            const double g = grads[i];
            const double v = config.beta1 * state.first_moment[i] + (1.0 - config.beta1) * g;
            const double s = config.beta2 * state.second_moment[i] + (1.0 - config.beta2) * g * g;
            out.first_moment[i] = v;
            out.second_moment[i] = s;
            if (config.bias_correction) {
                next[i] = next[i] - alpha * (v / v_corr) / (std::sqrt(s / s_corr) + config.epsilon);
            } else {
                next[i] = next[i] - alpha * v / std::sqrt(s + config.epsilon);
            }
        }
        break;
    }
    }
    return {std::move(next), std::move(out)};
}

} // namespace fedqnn
