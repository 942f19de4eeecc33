#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedqnn/errors.hpp"

namespace fedqnn {

using Amplitude = std::complex<double>;

/// Square complex matrix in row-major nested-vector form. Gate matrices are
/// 2x2, 4x4 or 8x8; test oracles build larger ones.
using GateMatrix = std::vector<std::vector<Amplitude>>;

using QubitIndex = std::size_t;

enum class GateOp {
    PauliX,
    PauliY,
    PauliZ,
    Rx,
    Ry,
    Rz,
    CNot,
    Swap,
    Toffoli,
};

/// A gate kind together with its rotation angle (radians, meaningful for
/// Rx/Ry/Rz only). Angles are used as given; no range reduction.
struct GateKind {
    GateOp op = GateOp::PauliX;
    double theta = 0.0;

    static constexpr GateKind pauli_x() { return {GateOp::PauliX, 0.0}; }
    static constexpr GateKind pauli_y() { return {GateOp::PauliY, 0.0}; }
    static constexpr GateKind pauli_z() { return {GateOp::PauliZ, 0.0}; }
    static constexpr GateKind rx(double theta) { return {GateOp::Rx, theta}; }
    static constexpr GateKind ry(double theta) { return {GateOp::Ry, theta}; }
    static constexpr GateKind rz(double theta) { return {GateOp::Rz, theta}; }
    static constexpr GateKind cnot() { return {GateOp::CNot, 0.0}; }
    static constexpr GateKind swap_gate() { return {GateOp::Swap, 0.0}; }
    static constexpr GateKind toffoli() { return {GateOp::Toffoli, 0.0}; }
};

/// Number of qubits the gate acts on.
constexpr std::size_t gate_arity(GateOp op) {
    switch (op) {
    case GateOp::CNot:
    case GateOp::Swap:
        return 2;
    case GateOp::Toffoli:
        return 3;
    default:
        return 1;
    }
}

/// Unitary matrix of a gate.
///
/// Basis convention for multi-qubit gates: the first listed qubit is the most
/// significant bit of the row/column index, so CNot rows are ordered
/// |control target> = |00>, |01>, |10>, |11> and Toffoli rows
/// |c1 c2 t> = |000> ... |111>.
inline GateMatrix gate_matrix(const GateKind &kind) {
    using namespace std::complex_literals;
    switch (kind.op) {
    case GateOp::PauliX:
        return {{0, 1}, {1, 0}};
    case GateOp::PauliY:
        return {{0, -1i}, {1i, 0}};
    case GateOp::PauliZ:
        return {{1, 0}, {0, -1}};
    case GateOp::Rx: {
        if (!std::isfinite(kind.theta)) {
            throw Error("rotation angle must be finite");
        }
        const double c = std::cos(kind.theta / 2.0);
        const double s = std::sin(kind.theta / 2.0);
        return {{c, -1i * s}, {-1i * s, c}};
    }
    case GateOp::Ry: {
        if (!std::isfinite(kind.theta)) {
            throw Error("rotation angle must be finite");
        }
        const double c = std::cos(kind.theta / 2.0);
        const double s = std::sin(kind.theta / 2.0);
        return {{c, -s}, {s, c}};
    }
    case GateOp::Rz: {
        if (!std::isfinite(kind.theta)) {
            throw Error("rotation angle must be finite");
        }
        const Amplitude lo = std::exp(-0.5i * kind.theta);
        const Amplitude hi = std::exp(0.5i * kind.theta);
        return {{lo, 0}, {0, hi}};
    }
    case GateOp::CNot:
        return {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 0, 1}, {0, 0, 1, 0}};
    case GateOp::Swap:
        return {{1, 0, 0, 0}, {0, 0, 1, 0}, {0, 1, 0, 0}, {0, 0, 0, 1}};
    case GateOp::Toffoli: {
        GateMatrix u(8, std::vector<Amplitude>(8, 0));
        for (std::size_t i = 0; i < 6; ++i) {
            u[i][i] = 1;
        }
        // target flips when both controls are set
        u[6][7] = 1;
        u[7][6] = 1;
        return u;
    }
    }
    throw Error("unknown gate kind");
}

/// Full statevector of an n-qubit register.
///
/// Index convention: qubit 0 is the most significant bit of a basis index,
/// i.e. index = sum over q of bit(q) * 2^(n-1-q). Construction checks the
/// unit-norm invariant, so any StateVector in hand holds normalized, finite
/// amplitudes.
class StateVector {
  public:
    static StateVector zero_state(std::size_t n_qubits) {
        check_qubit_count(n_qubits);
        std::vector<Amplitude> amps(std::size_t{1} << n_qubits, Amplitude{0.0, 0.0});
        amps[0] = Amplitude{1.0, 0.0};
        return StateVector(n_qubits, std::move(amps));
    }

    static StateVector from_amplitudes(std::size_t n_qubits, std::vector<Amplitude> amps) {
        check_qubit_count(n_qubits);
        if (amps.size() != (std::size_t{1} << n_qubits)) {
            throw Error("amplitude count must be 2^n_qubits");
        }
        double norm_sq = 0.0;
        for (const Amplitude &a : amps) {
            if (!std::isfinite(a.real()) || !std::isfinite(a.imag())) {
                throw Error("amplitudes must be finite");
            }
            norm_sq += std::norm(a);
        }
        if (std::abs(norm_sq - 1.0) > 1e-10) {
            throw Error("statevector norm deviates from 1 by more than 1e-10");
        }
        return StateVector(n_qubits, std::move(amps));
    }

    std::size_t n_qubits() const { return n_qubits_; }
    std::size_t dimension() const { return amps_.size(); }
    const std::vector<Amplitude> &amplitudes() const { return amps_; }
    const Amplitude &operator[](std::size_t basis_index) const { return amps_[basis_index]; }

    double norm_squared() const {
        double s = 0.0;
        for (const Amplitude &a : amps_) {
            s += std::norm(a);
        }
        return s;
    }

  private:
    StateVector(std::size_t n_qubits, std::vector<Amplitude> amps)
        : n_qubits_(n_qubits), amps_(std::move(amps)) {}

    static void check_qubit_count(std::size_t n_qubits) {
        if (n_qubits == 0 || n_qubits >= 8 * sizeof(std::size_t) - 1) {
            throw Error("qubit count must be a small positive integer");
        }
    }

    std::size_t n_qubits_;
    std::vector<Amplitude> amps_;
};

/// Applies a gate to the addressed qubits, identity elsewhere. Targets are
/// given in gate order: (control, target) for CNot, (a, b) for Swap,
/// (control1, control2, target) for Toffoli.
inline StateVector apply_gate(const StateVector &state, const GateKind &kind,
                              std::span<const QubitIndex> targets) {
    const std::size_t n = state.n_qubits();
    const std::size_t arity = gate_arity(kind.op);
    if (targets.size() != arity) {
        throw ArityMismatch("gate expects " + std::to_string(arity) + " target(s), got " +
                            std::to_string(targets.size()));
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] >= n) {
            throw IndexOutOfRange("qubit index " + std::to_string(targets[i]) +
                                  " out of range for " + std::to_string(n) + " qubits");
        }
        for (std::size_t j = i + 1; j < targets.size(); ++j) {
            if (targets[i] == targets[j]) {
                throw DuplicateTarget("duplicate qubit index " + std::to_string(targets[i]));
            }
        }
    }

    const GateMatrix u = gate_matrix(kind);
    const std::size_t local_dim = std::size_t{1} << arity;

    // Bit mask of each addressed qubit within a basis index (qubit 0 = MSB).
    std::array<std::size_t, 3> masks{};
    std::size_t all_mask = 0;
    for (std::size_t j = 0; j < arity; ++j) {
        masks[j] = std::size_t{1} << (n - 1 - targets[j]);
        all_mask |= masks[j];
    }

    std::vector<Amplitude> out = state.amplitudes();
    std::array<std::size_t, 8> idx{};
    std::array<Amplitude, 8> local{};
    for (std::size_t base = 0; base < out.size(); ++base) {
        if ((base & all_mask) != 0) {
            continue;
        }
        for (std::size_t row = 0; row < local_dim; ++row) {
            std::size_t full = base;
            for (std::size_t j = 0; j < arity; ++j) {
                if ((row >> (arity - 1 - j)) & 1U) {
                    full |= masks[j];
                }
            }
            idx[row] = full;
            local[row] = out[full];
        }
        for (std::size_t row = 0; row < local_dim; ++row) {
            Amplitude acc{0.0, 0.0};
            for (std::size_t col = 0; col < local_dim; ++col) {
                acc += u[row][col] * local[col];
            }
            out[idx[row]] = acc;
        }
    }
    return StateVector::from_amplitudes(n, std::move(out));
}

inline StateVector apply_gate(const StateVector &state, const GateKind &kind,
                              std::initializer_list<QubitIndex> targets) {
    return apply_gate(state, kind, std::span<const QubitIndex>(targets.begin(), targets.size()));
}

/// Embeds a classical feature vector as statevector amplitudes: zero-pads at
/// the tail to 2^n_qubits, then L2-normalizes, so feature i lands on basis
/// index i.
inline StateVector amplitude_encode(std::span<const double> features, std::size_t n_qubits) {
    const std::size_t dim = std::size_t{1} << n_qubits;
    if (features.size() > dim) {
        throw TooLong("feature vector of length " + std::to_string(features.size()) +
                      " exceeds 2^" + std::to_string(n_qubits));
    }
    double norm_sq = 0.0;
    for (double f : features) {
        if (!std::isfinite(f)) {
            throw Error("features must be finite");
        }
        norm_sq += f * f;
    }
    if (norm_sq == 0.0) {
        throw ZeroVector("cannot encode an all-zero feature vector");
    }
    const double inv_norm = 1.0 / std::sqrt(norm_sq);
    std::vector<Amplitude> amps(dim, Amplitude{0.0, 0.0});
    for (std::size_t i = 0; i < features.size(); ++i) {
        amps[i] = Amplitude{features[i] * inv_norm, 0.0};
    }
    return StateVector::from_amplitudes(n_qubits, std::move(amps));
}

/// Expectation of Pauli-Z on one qubit: P(bit = 0) - P(bit = 1).
inline double expectation_z(const StateVector &state, QubitIndex qubit) {
    const std::size_t n = state.n_qubits();
    if (qubit >= n) {
        throw IndexOutOfRange("qubit index " + std::to_string(qubit) + " out of range for " +
                              std::to_string(n) + " qubits");
    }
    const std::size_t mask = std::size_t{1} << (n - 1 - qubit);
    double acc = 0.0;
    for (std::size_t i = 0; i < state.dimension(); ++i) {
        const double p = std::norm(state[i]);
        acc += (i & mask) ? -p : p;
    }
    return acc;
}

} // namespace fedqnn
