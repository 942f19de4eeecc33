#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fedqnn/errors.hpp"
#include "fedqnn/fed.hpp"
#include "fedqnn/qnn.hpp"
#include "fedqnn/serde.hpp"

namespace fedqnn {

inline constexpr int wire_protocol_version = 1;
inline constexpr std::size_t wire_max_line = 1 << 20; // 1 MiB including the newline

struct HelloMessage {
    int protocol_version = wire_protocol_version;
    std::string client_id;
    bool operator==(const HelloMessage &) const = default;
};

struct WelcomeMessage {
    int protocol_version = wire_protocol_version;
    std::size_t round_total = 0;
    CircuitSpec circuit;
    TrainingConfig training;
    bool operator==(const WelcomeMessage &) const = default;
};

struct GlobalMessage {
    std::size_t round = 0;
    std::vector<double> params;
    bool operator==(const GlobalMessage &) const = default;
};

struct UpdateMessage {
    std::size_t round = 0;
    std::string client_id;
    std::vector<double> params;
    double weight = 1.0;
    double val_accuracy = 0.0;
    std::size_t epochs_run = 0;
    bool operator==(const UpdateMessage &) const = default;
};

struct DoneMessage {
    std::string reason;
    bool operator==(const DoneMessage &) const = default;
};

struct ErrorMessage {
    std::string code;
    std::string detail;
    bool operator==(const ErrorMessage &) const = default;
};

using Message =
    std::variant<HelloMessage, WelcomeMessage, GlobalMessage, UpdateMessage, DoneMessage, ErrorMessage>;

namespace detail {

// Encoding keeps insertion order so the emitted lines read type-first;
// decoding looks fields up by name and accepts any order.
using WireJson = nlohmann::ordered_json;

inline void require_finite(const std::vector<double> &values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw MalformedMessage("params must be finite");
        }
    }
}

inline void require_finite(double v, const char *what) {
    if (!std::isfinite(v)) {
        throw MalformedMessage(std::string(what) + " must be finite");
    }
}

inline WireJson wire_circuit(const CircuitSpec &spec) {
    WireJson j;
    j["n_qubits"] = spec.n_qubits;
    j["layers"] = spec.layers;
    j["entanglement"] = entanglement_name(spec.entanglement);
    return j;
}

inline WireJson wire_training(const TrainingConfig &training) {
    WireJson optimizer;
    optimizer["kind"] = optimizer_name(training.optimizer.kind);
    optimizer["learning_rate"] = training.optimizer.learning_rate;
    optimizer["momentum"] = training.optimizer.momentum;
    optimizer["beta1"] = training.optimizer.beta1;
    optimizer["beta2"] = training.optimizer.beta2;
    optimizer["epsilon"] = training.optimizer.epsilon;
    optimizer["bias_correction"] = training.optimizer.bias_correction;
    WireJson j;
    j["optimizer"] = std::move(optimizer);
    j["max_epochs"] = training.max_epochs;
    j["patience"] = training.patience;
    j["shuffle_each_epoch"] = training.shuffle_each_epoch;
    return j;
}

inline std::size_t non_negative_count(const Json &doc, const char *key) {
    if (!doc.contains(key) || !doc.at(key).is_number_integer()) {
        throw MalformedMessage(std::string("missing or non-integer field '") + key + "'");
    }
    const auto value = doc.at(key).get<std::int64_t>();
    if (value < 0) {
        throw MalformedMessage(std::string("field '") + key + "' must be non-negative");
    }
    return static_cast<std::size_t>(value);
}

template <typename T>
T wire_field(const Json &doc, const char *key) {
    if (!doc.contains(key)) {
        throw MalformedMessage(std::string("missing field '") + key + "'");
    }
    try {
        return doc.at(key).get<T>();
    } catch (const Json::exception &) {
        throw MalformedMessage(std::string("field '") + key + "' has the wrong type");
    }
}

} // namespace detail

/// One newline-terminated UTF-8 line per message; numbers carry full
/// round-trip precision, so decode(encode(m)) reproduces doubles bitwise.
inline std::string encode_message(const Message &message) {
    detail::WireJson j;
    std::visit(
        [&](const auto &m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, HelloMessage>) {
                j["type"] = "hello";
                j["protocol_version"] = m.protocol_version;
                j["client_id"] = m.client_id;
            } else if constexpr (std::is_same_v<M, WelcomeMessage>) {
                j["type"] = "welcome";
                j["protocol_version"] = m.protocol_version;
                j["round_total"] = m.round_total;
                j["circuit"] = detail::wire_circuit(m.circuit);
                j["training"] = detail::wire_training(m.training);
            } else if constexpr (std::is_same_v<M, GlobalMessage>) {
                detail::require_finite(m.params);
                j["type"] = "global";
                j["round"] = m.round;
                j["params"] = m.params;
            } else if constexpr (std::is_same_v<M, UpdateMessage>) {
                detail::require_finite(m.params);
                detail::require_finite(m.weight, "weight");
                detail::require_finite(m.val_accuracy, "val_accuracy");
                j["type"] = "update";
                j["round"] = m.round;
                j["client_id"] = m.client_id;
                j["params"] = m.params;
                j["weight"] = m.weight;
                j["val_accuracy"] = m.val_accuracy;
                j["epochs_run"] = m.epochs_run;
            } else if constexpr (std::is_same_v<M, DoneMessage>) {
                j["type"] = "done";
                j["reason"] = m.reason;
            } else {
                j["type"] = "error";
                j["code"] = m.code;
                j["detail"] = m.detail;
            }
        },
        message);
    std::string line = j.dump();
    line.push_back('\n');
    if (line.size() > wire_max_line) {
        throw OversizeLine("encoded message exceeds " + std::to_string(wire_max_line) + " bytes");
    }
    return line;
}

/// Inverse of encode_message over one complete line (the trailing newline is
/// optional).
inline Message decode_message(std::string_view line) {
    if (line.size() > wire_max_line) {
        throw OversizeLine("line exceeds " + std::to_string(wire_max_line) + " bytes");
    }
    Json doc;
    try {
        doc = Json::parse(line);
    } catch (const Json::exception &e) {
        throw MalformedMessage(std::string("bad message syntax: ") + e.what());
    }
    if (!doc.is_object()) {
        throw MalformedMessage("message must be an object");
    }
    const auto type = detail::wire_field<std::string>(doc, "type");

    if (type == "hello") {
        HelloMessage m;
        m.protocol_version = detail::wire_field<int>(doc, "protocol_version");
        if (m.protocol_version != wire_protocol_version) {
            throw VersionMismatch("peer speaks protocol version " +
                                  std::to_string(m.protocol_version));
        }
        m.client_id = detail::wire_field<std::string>(doc, "client_id");
        return m;
    }
    if (type == "welcome") {
        WelcomeMessage m;
        m.protocol_version = detail::wire_field<int>(doc, "protocol_version");
        if (m.protocol_version != wire_protocol_version) {
            throw VersionMismatch("peer speaks protocol version " +
                                  std::to_string(m.protocol_version));
        }
        m.round_total = detail::non_negative_count(doc, "round_total");
        try {
            m.circuit = circuit_from_json(detail::wire_field<Json>(doc, "circuit"));
            m.training = training_from_json(detail::wire_field<Json>(doc, "training"));
        } catch (const ConfigError &e) {
            throw MalformedMessage(std::string("bad welcome payload: ") + e.what());
        }
        return m;
    }
    if (type == "global") {
        GlobalMessage m;
        m.round = detail::non_negative_count(doc, "round");
        m.params = detail::wire_field<std::vector<double>>(doc, "params");
        detail::require_finite(m.params);
        return m;
    }
    if (type == "update") {
        UpdateMessage m;
        m.round = detail::non_negative_count(doc, "round");
        m.client_id = detail::wire_field<std::string>(doc, "client_id");
        m.params = detail::wire_field<std::vector<double>>(doc, "params");
        detail::require_finite(m.params);
        m.weight = detail::wire_field<double>(doc, "weight");
        detail::require_finite(m.weight, "weight");
        m.val_accuracy = detail::wire_field<double>(doc, "val_accuracy");
        detail::require_finite(m.val_accuracy, "val_accuracy");
        m.epochs_run = detail::non_negative_count(doc, "epochs_run");
        return m;
    }
    if (type == "done") {
        return DoneMessage{detail::wire_field<std::string>(doc, "reason")};
    }
    if (type == "error") {
        return ErrorMessage{detail::wire_field<std::string>(doc, "code"),
                            detail::wire_field<std::string>(doc, "detail")};
    }
    throw MalformedMessage("unknown message type '" + type + "'");
}

inline const char *message_type_name(const Message &message) {
    return std::visit(
        [](const auto &m) {
            using M = std::decay_t<std::remove_cvref_t<decltype(m)>>;
            if constexpr (std::is_same_v<M, HelloMessage>) return "hello";
            else if constexpr (std::is_same_v<M, WelcomeMessage>) return "welcome";
            else if constexpr (std::is_same_v<M, GlobalMessage>) return "global";
            else if constexpr (std::is_same_v<M, UpdateMessage>) return "update";
            else if constexpr (std::is_same_v<M, DoneMessage>) return "done";
            else return "error";
        },
        message);
}

} // namespace fedqnn
