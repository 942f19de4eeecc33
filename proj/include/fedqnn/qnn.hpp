#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "fedqnn/errors.hpp"
#include "fedqnn/metrics.hpp"
#include "fedqnn/qstate.hpp"

namespace fedqnn {

enum class Entanglement {
    Linear,   // chain q0->q1->...->q(n-1)
    Circular, // chain plus the closing CNot q(n-1)->q0
    Full,     // CNot for every ordered pair (i, j), i < j, control i
};

/// Shape of the alternating Ry / CNot ansatz. Defaults give the 7-qubit,
/// 2-layer, linear-entanglement circuit with 14 rotation angles.
struct CircuitSpec {
    std::size_t n_qubits = 7;
    std::size_t layers = 2;
    Entanglement entanglement = Entanglement::Linear;

    bool operator==(const CircuitSpec &) const = default;

    std::size_t angle_count() const { return layers * n_qubits; }

    void validate() const {
        if (n_qubits == 0) {
            throw Error("circuit needs at least one qubit");
        }
        if (layers == 0) {
            throw Error("circuit needs at least one layer");
        }
    }
};

/// The learnable parameters: one Ry angle per (layer, qubit) plus a classical
/// bias added after measurement. angles[layer * n_qubits + qubit] is the
/// rotation of `qubit` in `layer`.
struct ModelParams {
    std::vector<double> angles;
    double bias = 0.0;

    static ModelParams zeros(const CircuitSpec &spec) {
        return ModelParams{std::vector<double>(spec.angle_count(), 0.0), 0.0};
    }

    std::size_t parameter_count() const { return angles.size() + 1; }

    /// Flattened layout used by the optimizer and the aggregator: angles
    /// first, bias last.
    std::vector<double> flatten() const {
        std::vector<double> flat = angles;
        flat.push_back(bias);
        return flat;
    }

    static ModelParams unflatten(const CircuitSpec &spec, std::span<const double> flat) {
        if (flat.size() != spec.angle_count() + 1) {
            throw ParamCountMismatch("expected " + std::to_string(spec.angle_count() + 1) +
                                     " flattened parameters, got " + std::to_string(flat.size()));
        }
        ModelParams p;
        p.angles.assign(flat.begin(), flat.end() - 1);
        p.bias = flat.back();
        return p;
    }
};

/// One labeled input: 126 pixel intensities in [0, 1] and a class label,
/// +1 = affected, -1 = healthy.
struct LabeledExample {
    std::vector<double> features;
    int label = 1;
};

struct AppliedGate {
    GateKind kind;
    std::vector<QubitIndex> targets;
};

/// Emits the ansatz as an ordered gate list: per layer, Ry on every qubit in
/// ascending order, then the entanglement CNots in ascending control order.
/// There is no trailing rotation layer.
inline std::vector<AppliedGate> build_circuit(const CircuitSpec &spec, const ModelParams &params) {
    spec.validate();
    if (params.angles.size() != spec.angle_count()) {
        throw ParamCountMismatch("circuit wants " + std::to_string(spec.angle_count()) +
                                 " angles, params carry " + std::to_string(params.angles.size()));
    }
    const std::size_t n = spec.n_qubits;
    std::vector<AppliedGate> gates;
    for (std::size_t layer = 0; layer < spec.layers; ++layer) {
        for (std::size_t q = 0; q < n; ++q) {
            gates.push_back({GateKind::ry(params.angles[layer * n + q]), {q}});
        }
        if (n < 2) {
            continue; // no pairs to entangle
        }
        switch (spec.entanglement) {
        case Entanglement::Linear:
            for (std::size_t q = 0; q + 1 < n; ++q) {
                gates.push_back({GateKind::cnot(), {q, q + 1}});
            }
            break;
        case Entanglement::Circular:
            for (std::size_t q = 0; q + 1 < n; ++q) {
                gates.push_back({GateKind::cnot(), {q, q + 1}});
            }
            gates.push_back({GateKind::cnot(), {n - 1, 0}});
            break;
        case Entanglement::Full:
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    gates.push_back({GateKind::cnot(), {i, j}});
                }
            }
            break;
        }
    }
    return gates;
}

/// Bias-free readout: runs the ansatz on an already encoded state and
/// measures <Z> on the last qubit.
inline double circuit_expectation(const CircuitSpec &spec, const ModelParams &params,
                                  const StateVector &encoded) {
    StateVector state = encoded;
    for (const AppliedGate &g : build_circuit(spec, params)) {
        state = apply_gate(state, g.kind, std::span<const QubitIndex>(g.targets));
    }
    return expectation_z(state, spec.n_qubits - 1);
}

struct ForwardTrace {
    double score = 0.0;
    int predicted_label = 1; // +1 iff score >= 0
    StateVector final_state;
};

/// Classifier forward pass: score = <Z_(n-1)> after the ansatz on the
/// amplitude-encoded input, plus the bias.
inline ForwardTrace forward(const CircuitSpec &spec, const ModelParams &params,
                            std::span<const double> features) {
    spec.validate();
    if (params.angles.size() != spec.angle_count()) {
        throw ParamCountMismatch("circuit wants " + std::to_string(spec.angle_count()) +
                                 " angles, params carry " + std::to_string(params.angles.size()));
    }
    StateVector state = amplitude_encode(features, spec.n_qubits);
    for (const AppliedGate &g : build_circuit(spec, params)) {
        state = apply_gate(state, g.kind, std::span<const QubitIndex>(g.targets));
    }
    const double score = expectation_z(state, spec.n_qubits - 1) + params.bias;
    return ForwardTrace{score, score >= 0.0 ? +1 : -1, std::move(state)};
}

/// Mean squared error of scores against labels in {-1, +1}.
inline double loss(const CircuitSpec &spec, const ModelParams &params,
                   std::span<const LabeledExample> dataset) {
    if (dataset.empty()) {
        throw EmptyDataset("loss over an empty dataset");
    }
    double acc = 0.0;
    for (const LabeledExample &ex : dataset) {
        const double diff = forward(spec, params, ex.features).score - ex.label;
        acc += diff * diff;
    }
    return acc / static_cast<double>(dataset.size());
}

struct Gradient {
    std::vector<double> angle_grads;
    double bias_grad = 0.0;
};

/// Exact gradient of the mean squared error.
///
/// Angle components use the parameter-shift rule, dE/dtheta_k =
/// (E(theta + pi/2 e_k) - E(theta - pi/2 e_k)) / 2, which is exact for Ry
/// generators; the bias component is the plain residual mean. Each example is
/// encoded once and the encoded state reused across all shifted evaluations.
/// Accumulation runs in example-index order so results are bitwise
/// reproducible.
inline Gradient gradient(const CircuitSpec &spec, const ModelParams &params,
                         std::span<const LabeledExample> dataset) {
    if (dataset.empty()) {
        throw EmptyDataset("gradient over an empty dataset");
    }
    const std::size_t count = dataset.size();
    const double inv_n = 1.0 / static_cast<double>(count);

    std::vector<StateVector> encoded;
    encoded.reserve(count);
    for (const LabeledExample &ex : dataset) {
        encoded.push_back(amplitude_encode(ex.features, spec.n_qubits));
    }

    // residuals r_i = 2 (s_i - y_i)
    std::vector<double> residual(count, 0.0);
    double bias_acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double score = circuit_expectation(spec, params, encoded[i]) + params.bias;
        residual[i] = 2.0 * (score - dataset[i].label);
        bias_acc += residual[i];
    }

    constexpr double shift = std::numbers::pi / 2.0;
    Gradient grad;
    grad.angle_grads.assign(spec.angle_count(), 0.0);
    grad.bias_grad = bias_acc * inv_n;
    ModelParams shifted = params;
    for (std::size_t k = 0; k < spec.angle_count(); ++k) {
        const double original = shifted.angles[k];
        double acc = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            shifted.angles[k] = original + shift;
            const double plus = circuit_expectation(spec, shifted, encoded[i]);
            shifted.angles[k] = original - shift;
            const double minus = circuit_expectation(spec, shifted, encoded[i]);
            acc += residual[i] * 0.5 * (plus - minus);
        }
        shifted.angles[k] = original;
        grad.angle_grads[k] = acc * inv_n;
    }
    return grad;
}

/// Tallies predictions over a dataset; affected (+1) is the positive class.
inline ConfusionMatrix evaluate(const CircuitSpec &spec, const ModelParams &params,
                                std::span<const LabeledExample> dataset) {
    if (dataset.empty()) {
        throw EmptyDataset("evaluate over an empty dataset");
    }
    ConfusionMatrix cm;
    for (const LabeledExample &ex : dataset) {
        const int predicted = forward(spec, params, ex.features).predicted_label;
        cm.count(ex.label > 0, predicted > 0);
    }
    return cm;
}

inline double accuracy_of(const CircuitSpec &spec, const ModelParams &params,
                          std::span<const LabeledExample> dataset) {
    const ConfusionMatrix cm = evaluate(spec, params, dataset);
    return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

} // namespace fedqnn
