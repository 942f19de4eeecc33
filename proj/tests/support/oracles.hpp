#pragma once

// Independent reference implementations the tests compare against. These
// favor the obvious O(4^n) construction over speed on purpose: the library
// must agree with the brute-force linear algebra, not the other way round.

#include <complex>
#include <cstddef>
#include <vector>

#include <fedqnn/qnn.hpp>
#include <fedqnn/qstate.hpp>

namespace oracle {

using fedqnn::Amplitude;
using Dense = std::vector<std::vector<Amplitude>>;

/// Embeds a k-qubit gate into the full 2^n x 2^n matrix. The first listed
/// target supplies the most significant bit of the gate's local index,
/// matching the strided implementation's convention.
inline Dense embed_gate(const fedqnn::GateMatrix &u, const std::vector<fedqnn::QubitIndex> &targets,
                        std::size_t n_qubits) {
    const std::size_t dim = std::size_t{1} << n_qubits;
    const std::size_t arity = targets.size();
    Dense full(dim, std::vector<Amplitude>(dim, Amplitude{0.0, 0.0}));
    std::vector<std::size_t> masks(arity);
    for (std::size_t j = 0; j < arity; ++j) {
        masks[j] = std::size_t{1} << (n_qubits - 1 - targets[j]);
    }
    for (std::size_t row = 0; row < dim; ++row) {
        std::size_t local_row = 0;
        std::size_t rest = row;
        for (std::size_t j = 0; j < arity; ++j) {
            local_row = (local_row << 1) | ((row & masks[j]) != 0 ? 1 : 0);
            rest &= ~masks[j];
        }
        for (std::size_t local_col = 0; local_col < (std::size_t{1} << arity); ++local_col) {
            std::size_t col = rest;
            for (std::size_t j = 0; j < arity; ++j) {
                if ((local_col >> (arity - 1 - j)) & 1) {
                    col |= masks[j];
                }
            }
            full[row][col] = u[local_row][local_col];
        }
    }
    return full;
}

inline std::vector<Amplitude> matvec(const Dense &m, const std::vector<Amplitude> &v) {
    std::vector<Amplitude> out(m.size(), Amplitude{0.0, 0.0});
    for (std::size_t r = 0; r < m.size(); ++r) {
        for (std::size_t c = 0; c < v.size(); ++c) {
            out[r] += m[r][c] * v[c];
        }
    }
    return out;
}

/// Runs a gate sequence by full matrix products on the amplitude vector.
inline std::vector<Amplitude> dense_apply(const std::vector<fedqnn::AppliedGate> &gates,
                                          std::vector<Amplitude> amps, std::size_t n_qubits) {
    for (const fedqnn::AppliedGate &g : gates) {
        amps = matvec(embed_gate(fedqnn::gate_matrix(g.kind), g.targets, n_qubits), amps);
    }
    return amps;
}

inline double dense_expectation_z(const std::vector<Amplitude> &amps, std::size_t n_qubits,
                                  std::size_t qubit) {
    const std::size_t bit = std::size_t{1} << (n_qubits - 1 - qubit);
    double z = 0.0;
    for (std::size_t i = 0; i < amps.size(); ++i) {
        z += ((i & bit) == 0 ? 1.0 : -1.0) * std::norm(amps[i]);
    }
    return z;
}

/// Classifier score recomputed through the dense pipeline.
inline double dense_score(const fedqnn::CircuitSpec &spec, const fedqnn::ModelParams &params,
                          const std::vector<double> &features) {
    const fedqnn::StateVector encoded = fedqnn::amplitude_encode(features, spec.n_qubits);
    const auto amps = dense_apply(fedqnn::build_circuit(spec, params), encoded.amplitudes(),
                                  spec.n_qubits);
    return dense_expectation_z(amps, spec.n_qubits, spec.n_qubits - 1) + params.bias;
}

/// Central finite differences on the mean squared error.
inline fedqnn::Gradient finite_difference(const fedqnn::CircuitSpec &spec,
                                          const fedqnn::ModelParams &params,
                                          const std::vector<fedqnn::LabeledExample> &dataset,
                                          double h = 1e-5) {
    fedqnn::Gradient grad;
    grad.angle_grads.resize(params.angles.size());
    fedqnn::ModelParams probe = params;
    for (std::size_t k = 0; k < params.angles.size(); ++k) {
        probe.angles[k] = params.angles[k] + h;
        const double plus = fedqnn::loss(spec, probe, dataset);
        probe.angles[k] = params.angles[k] - h;
        const double minus = fedqnn::loss(spec, probe, dataset);
        probe.angles[k] = params.angles[k];
        grad.angle_grads[k] = (plus - minus) / (2.0 * h);
    }
    probe.bias = params.bias + h;
    const double plus = fedqnn::loss(spec, probe, dataset);
    probe.bias = params.bias - h;
    const double minus = fedqnn::loss(spec, probe, dataset);
    grad.bias_grad = (plus - minus) / (2.0 * h);
    return grad;
}

} // namespace oracle
