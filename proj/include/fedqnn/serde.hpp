#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedqnn/errors.hpp"
#include "fedqnn/fed.hpp"
#include "fedqnn/metrics.hpp"
#include "fedqnn/optim.hpp"
#include "fedqnn/qnn.hpp"

namespace fedqnn {

// nlohmann::json with default (sorted-key) object ordering; together with
// its exact shortest-round-trip number printing this makes every document
// we emit byte-deterministic.
using Json = nlohmann::json;

inline constexpr int model_format_version = 1;

inline std::string entanglement_name(Entanglement e) {
    switch (e) {
    case Entanglement::Linear:
        return "linear";
    case Entanglement::Circular:
        return "circular";
    case Entanglement::Full:
        return "full";
    }
    throw Error("unreachable entanglement value");
}

inline Entanglement entanglement_from_name(const std::string &name) {
    if (name == "linear") return Entanglement::Linear;
    if (name == "circular") return Entanglement::Circular;
    if (name == "full") return Entanglement::Full;
    throw ConfigError("unknown entanglement '" + name + "' (linear|circular|full)");
}

inline std::string optimizer_name(OptimizerKind kind) {
    switch (kind) {
    case OptimizerKind::GD:
        return "gd";
    case OptimizerKind::Nesterov:
        return "nesterov";
    case OptimizerKind::Adam:
        return "adam";
    }
    throw Error("unreachable optimizer kind");
}

inline OptimizerKind optimizer_from_name(const std::string &name) {
    if (name == "gd") return OptimizerKind::GD;
    if (name == "nesterov") return OptimizerKind::Nesterov;
    if (name == "adam") return OptimizerKind::Adam;
    throw ConfigError("unknown optimizer '" + name + "' (gd|nesterov|adam)");
}

inline Json circuit_to_json(const CircuitSpec &spec) {
    return Json{{"n_qubits", spec.n_qubits},
                {"layers", spec.layers},
                {"entanglement", entanglement_name(spec.entanglement)}};
}

inline Json optimizer_to_json(const OptimizerConfig &config) {
    return Json{{"kind", optimizer_name(config.kind)},
                {"learning_rate", config.learning_rate},
                {"momentum", config.momentum},
                {"beta1", config.beta1},
                {"beta2", config.beta2},
                {"epsilon", config.epsilon},
                {"bias_correction", config.bias_correction}};
}

inline Json training_to_json(const TrainingConfig &config) {
    return Json{{"optimizer", optimizer_to_json(config.optimizer)},
                {"max_epochs", config.max_epochs},
                {"patience", config.patience},
                {"shuffle_each_epoch", config.shuffle_each_epoch}};
}

namespace detail {

/// Field accessor that rewrites lookup and type failures into ConfigError
/// with the offending path.
template <typename T>
T json_field(const Json &doc, const std::string &key) {
    if (!doc.is_object() || !doc.contains(key)) {
        throw ConfigError("missing field '" + key + "'");
    }
    try {
        return doc.at(key).get<T>();
    } catch (const Json::exception &) {
        throw ConfigError("field '" + key + "' has the wrong type");
    }
}

template <typename T>
T json_field_or(const Json &doc, const std::string &key, T fallback) {
    if (!doc.is_object() || !doc.contains(key)) {
        return fallback;
    }
    return json_field<T>(doc, key);
}

} // namespace detail

inline CircuitSpec circuit_from_json(const Json &doc) {
    CircuitSpec defaults;
    CircuitSpec spec;
    spec.n_qubits = detail::json_field_or<std::size_t>(doc, "n_qubits", defaults.n_qubits);
    spec.layers = detail::json_field_or<std::size_t>(doc, "layers", defaults.layers);
    spec.entanglement = entanglement_from_name(detail::json_field_or<std::string>(
        doc, "entanglement", entanglement_name(defaults.entanglement)));
    spec.validate();
    return spec;
}

inline OptimizerConfig optimizer_from_json(const Json &doc) {
    OptimizerConfig defaults;
    OptimizerConfig config;
    config.kind =
        optimizer_from_name(detail::json_field_or<std::string>(doc, "kind", optimizer_name(defaults.kind)));
    config.learning_rate = detail::json_field_or<double>(doc, "learning_rate", defaults.learning_rate);
    config.momentum = detail::json_field_or<double>(doc, "momentum", defaults.momentum);
    config.beta1 = detail::json_field_or<double>(doc, "beta1", defaults.beta1);
    config.beta2 = detail::json_field_or<double>(doc, "beta2", defaults.beta2);
    config.epsilon = detail::json_field_or<double>(doc, "epsilon", defaults.epsilon);
    config.bias_correction =
        detail::json_field_or<bool>(doc, "bias_correction", defaults.bias_correction);
    try {
        config.validate();
    } catch (const Error &e) {
        throw ConfigError(std::string("optimizer: ") + e.what());
    }
    return config;
}

inline TrainingConfig training_from_json(const Json &doc) {
    TrainingConfig defaults;
    TrainingConfig config;
    if (doc.is_object() && doc.contains("optimizer")) {
        config.optimizer = optimizer_from_json(doc.at("optimizer"));
    }
    config.max_epochs = detail::json_field_or<std::size_t>(doc, "max_epochs", defaults.max_epochs);
    config.patience = detail::json_field_or<std::size_t>(doc, "patience", defaults.patience);
    config.shuffle_each_epoch =
        detail::json_field_or<bool>(doc, "shuffle_each_epoch", defaults.shuffle_each_epoch);
    try {
        config.validate();
    } catch (const Error &e) {
        throw ConfigError(std::string("training: ") + e.what());
    }
    return config;
}

// --- model files ---

inline Json model_to_json(const CircuitSpec &spec, const ModelParams &params) {
    if (params.angles.size() != spec.angle_count()) {
        throw ParamCountMismatch("model params do not match the circuit");
    }
    Json doc = circuit_to_json(spec);
    doc["format_version"] = model_format_version;
    doc["angles"] = params.angles;
    doc["bias"] = params.bias;
    return doc;
}

inline std::pair<CircuitSpec, ModelParams> model_from_json(const Json &doc) {
    const int version = detail::json_field<int>(doc, "format_version");
    if (version != model_format_version) {
        throw ConfigError("unsupported model format_version " + std::to_string(version));
    }
    const CircuitSpec spec = circuit_from_json(doc);
    ModelParams params;
    params.angles = detail::json_field<std::vector<double>>(doc, "angles");
    params.bias = detail::json_field<double>(doc, "bias");
    if (params.angles.size() != spec.angle_count()) {
        throw ConfigError("model carries " + std::to_string(params.angles.size()) +
                          " angles but the circuit wants " + std::to_string(spec.angle_count()));
    }
    return {spec, params};
}

inline void save_model(const std::filesystem::path &path, const CircuitSpec &spec,
                       const ModelParams &params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write model " + path.string());
    }
    out << model_to_json(spec, params).dump(2) << '\n';
    if (!out) {
        throw Error("write failed for " + path.string());
    }
}

inline std::pair<CircuitSpec, ModelParams> load_model(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open model " + path.string());
    }
    Json doc;
    try {
        in >> doc;
    } catch (const Json::exception &e) {
        throw ConfigError("model " + path.string() + " is not valid JSON: " + e.what());
    }
    return model_from_json(doc);
}

// --- metrics and round reports ---

/// Reports store fractions with 6 decimal places; undefined metrics
/// serialize as null.
inline Json metrics_to_json(const MetricsReport &report, const ConfusionMatrix &cm) {
    auto rounded = [](const std::optional<double> &v) -> Json {
        if (!v) {
            return nullptr;
        }
        return std::round(*v * 1e6) / 1e6;
    };
    return Json{{"accuracy", rounded(report.accuracy)},
                {"precision", rounded(report.precision)},
                {"recall", rounded(report.recall)},
                {"f1", rounded(report.f1)},
                {"specificity", rounded(report.specificity)},
                {"confusion", Json{{"tp", cm.tp}, {"tn", cm.tn}, {"fp", cm.fp}, {"fn", cm.fn}}}};
}

inline Json round_record_to_json(const RoundRecord &record) {
    Json clients = Json::array();
    for (const ClientRoundRecord &cr : record.clients) {
        clients.push_back(Json{{"client_id", cr.client_id},
                               {"best_validation_accuracy", cr.best_validation_accuracy},
                               {"epochs_run", cr.epochs_run},
                               {"best_params",
                                Json{{"angles", cr.best_params.angles}, {"bias", cr.best_params.bias}}},
                               {"global_metrics", metrics_to_json(cr.global_metrics, cr.global_confusion)}});
    }
    return Json{{"round", record.round_index},
                {"global_params",
                 Json{{"angles", record.global_params.angles}, {"bias", record.global_params.bias}}},
                {"clients", std::move(clients)}};
}

} // namespace fedqnn
