#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedqnn/data.hpp"
#include "fedqnn/errors.hpp"
#include "fedqnn/fed.hpp"
#include "fedqnn/net.hpp"
#include "fedqnn/serde.hpp"

namespace fedqnn {

enum class RunMode { TrainLocal, Federate, Serve, Client, Evaluate, ExtractPatches, Split };

inline std::string mode_name(RunMode mode) {
    switch (mode) {
    case RunMode::TrainLocal:
        return "train-local";
    case RunMode::Federate:
        return "federate";
    case RunMode::Serve:
        return "serve";
    case RunMode::Client:
        return "client";
    case RunMode::Evaluate:
        return "evaluate";
    case RunMode::ExtractPatches:
        return "extract-patches";
    case RunMode::Split:
        return "split";
    }
    throw Error("unreachable mode");
}

inline RunMode mode_from_name(const std::string &name) {
    if (name == "train-local") return RunMode::TrainLocal;
    if (name == "federate") return RunMode::Federate;
    if (name == "serve") return RunMode::Serve;
    if (name == "client") return RunMode::Client;
    if (name == "evaluate") return RunMode::Evaluate;
    if (name == "extract-patches") return RunMode::ExtractPatches;
    if (name == "split") return RunMode::Split;
    throw ConfigError("unknown mode '" + name + "'");
}

/// "5:5:4" -> {5,5,4}; every component must be a positive finite number.
inline std::vector<double> parse_weights(const std::string &text) {
    std::vector<double> weights;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t stop = std::min(text.find(':', start), text.size());
        const std::string part = text.substr(start, stop - start);
        if (part.empty()) {
            throw ConfigError("weights: empty component in '" + text + "'");
        }
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
        if (ec != std::errc{} || ptr != part.data() + part.size()) {
            throw ConfigError("weights: bad component '" + part + "'");
        }
        if (!(value > 0.0) || !std::isfinite(value)) {
            throw ConfigError("weights: component must be positive, got '" + part + "'");
        }
        weights.push_back(value);
        if (stop == text.size()) {
            break;
        }
        start = stop + 1;
    }
    return weights;
}

/// Plot-ready per-epoch curve: epoch,loss,train_accuracy,validation_accuracy.
inline std::string emit_curves(const std::vector<EpochRecord> &history) {
    if (history.empty()) {
        throw EmptyHistory("no epochs to emit");
    }
    std::string csv = "epoch,loss,train_accuracy,validation_accuracy\n";
    char buf[32];
    auto append_double = [&](double v) {
        auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
        csv.append(buf, end);
    };
    for (const EpochRecord &rec : history) {
        csv += std::to_string(rec.epoch);
        csv.push_back(',');
        append_double(rec.loss);
        csv.push_back(',');
        append_double(rec.train_accuracy);
        csv.push_back(',');
        append_double(rec.validation_accuracy);
        csv.push_back('\n');
    }
    return csv;
}

/// Every seed the pipeline uses is derived from the base seed through named
/// stages, so one --seed pins the whole run and a networked client can
/// recompute its own stream.
inline constexpr std::uint64_t seed_stage_partition = 0;
inline constexpr std::uint64_t seed_stage_split = 1;
inline constexpr std::uint64_t seed_stage_client = 2;

inline std::uint64_t stage_seed(std::uint64_t base, std::uint64_t stage, std::uint64_t index) {
    return derive_seed(derive_seed(base, stage), index);
}

struct ClientSource {
    std::string id;
    std::filesystem::path train;
    std::filesystem::path validation;
    std::optional<double> weight;
    std::optional<std::uint64_t> seed;
};

struct RunConfig {
    RunMode mode = RunMode::Evaluate;
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    CircuitSpec circuit;
    TrainingConfig training;

    // federation shape
    std::size_t rounds_max = 5;
    std::optional<double> target_accuracy;
    std::vector<double> weights; // empty = every client weighs 1
    bool parallel_clients = false;
    std::vector<ClientSource> clients;
    std::filesystem::path pool;
    std::size_t num_clients = 3;
    double train_fraction = 0.75;

    // mode-specific inputs
    std::filesystem::path train_path;
    std::filesystem::path validation_path;
    std::filesystem::path data_path;
    std::filesystem::path model_path;
    std::filesystem::path image_path;
    std::filesystem::path mask_path;
    std::size_t per_class = 1;
    std::string client_id;
    double client_weight = 1.0;
    std::string listen_address;
    std::string connect_address;
    std::chrono::milliseconds round_timeout{300'000};
};

/// Config file: one JSON object mirroring the CLI flags. Unknown keys are
/// rejected so typos cannot silently fall back to defaults.
inline void apply_config_file(RunConfig &config, const Json &doc) {
    if (!doc.is_object()) {
        throw ConfigError("config file must hold a JSON object");
    }
    static const std::vector<std::string> known{
        "mode",        "out",          "seed",          "circuit",     "training",
        "rounds_max",  "target_accuracy", "weights",    "parallel_clients", "clients",
        "pool",        "num_clients",  "train_fraction", "train",      "validation",
        "data",        "model",        "image",         "mask",        "per_class",
        "client_id",   "weight",       "listen",        "connect",     "timeout_seconds"};
    for (const auto &[key, value] : doc.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    if (doc.contains("mode")) {
        config.mode = mode_from_name(detail::json_field<std::string>(doc, "mode"));
    }
    if (doc.contains("out")) {
        config.out_dir = detail::json_field<std::string>(doc, "out");
    }
    config.seed = detail::json_field_or<std::uint64_t>(doc, "seed", config.seed);
    if (doc.contains("circuit")) {
        config.circuit = circuit_from_json(doc.at("circuit"));
    }
    if (doc.contains("training")) {
        config.training = training_from_json(doc.at("training"));
    }
    config.rounds_max = detail::json_field_or<std::size_t>(doc, "rounds_max", config.rounds_max);
    if (doc.contains("target_accuracy") && !doc.at("target_accuracy").is_null()) {
        config.target_accuracy = detail::json_field<double>(doc, "target_accuracy");
    }
    if (doc.contains("weights")) {
        if (doc.at("weights").is_string()) {
            config.weights = parse_weights(doc.at("weights").get<std::string>());
        } else {
            config.weights = detail::json_field<std::vector<double>>(doc, "weights");
            for (double w : config.weights) {
                if (!(w > 0.0) || !std::isfinite(w)) {
                    throw ConfigError("weights: components must be positive");
                }
            }
        }
    }
    config.parallel_clients =
        detail::json_field_or<bool>(doc, "parallel_clients", config.parallel_clients);
    if (doc.contains("clients")) {
        if (!doc.at("clients").is_array()) {
            throw ConfigError("clients must be an array");
        }
        config.clients.clear();
        std::size_t index = 0;
        for (const Json &entry : doc.at("clients")) {
            ClientSource source;
            source.id = detail::json_field_or<std::string>(entry, "id", "");
            source.train = std::filesystem::path(detail::json_field<std::string>(entry, "train"));
            source.validation =
                std::filesystem::path(detail::json_field<std::string>(entry, "validation"));
            if (entry.contains("weight")) {
                source.weight = detail::json_field<double>(entry, "weight");
            }
            if (entry.contains("seed")) {
                source.seed = detail::json_field<std::uint64_t>(entry, "seed");
            }
            config.clients.push_back(std::move(source));
            ++index;
        }
    }
    if (doc.contains("pool")) {
        config.pool = detail::json_field<std::string>(doc, "pool");
    }
    config.num_clients = detail::json_field_or<std::size_t>(doc, "num_clients", config.num_clients);
    config.train_fraction =
        detail::json_field_or<double>(doc, "train_fraction", config.train_fraction);
    if (doc.contains("train")) {
        config.train_path = detail::json_field<std::string>(doc, "train");
    }
    if (doc.contains("validation")) {
        config.validation_path = detail::json_field<std::string>(doc, "validation");
    }
    if (doc.contains("data")) {
        config.data_path = detail::json_field<std::string>(doc, "data");
    }
    if (doc.contains("model")) {
        config.model_path = detail::json_field<std::string>(doc, "model");
    }
    if (doc.contains("image")) {
        config.image_path = detail::json_field<std::string>(doc, "image");
    }
    if (doc.contains("mask")) {
        config.mask_path = detail::json_field<std::string>(doc, "mask");
    }
    config.per_class = detail::json_field_or<std::size_t>(doc, "per_class", config.per_class);
    config.client_id = detail::json_field_or<std::string>(doc, "client_id", config.client_id);
    config.client_weight = detail::json_field_or<double>(doc, "weight", config.client_weight);
    config.listen_address = detail::json_field_or<std::string>(doc, "listen", config.listen_address);
    config.connect_address =
        detail::json_field_or<std::string>(doc, "connect", config.connect_address);
    if (doc.contains("timeout_seconds")) {
        const double seconds = detail::json_field<double>(doc, "timeout_seconds");
        if (!(seconds > 0.0) || !std::isfinite(seconds)) {
            throw ConfigError("timeout_seconds must be positive");
        }
        config.round_timeout = std::chrono::milliseconds(static_cast<std::int64_t>(seconds * 1000.0));
    }
}

inline Json config_snapshot(const RunConfig &config) {
    Json clients = Json::array();
    for (const ClientSource &src : config.clients) {
        clients.push_back(Json{{"id", src.id},
                               {"train", src.train.string()},
                               {"validation", src.validation.string()},
                               {"weight", src.weight ? Json(*src.weight) : Json(nullptr)},
                               {"seed", src.seed ? Json(*src.seed) : Json(nullptr)}});
    }
    return Json{
        {"mode", mode_name(config.mode)},
        {"out", config.out_dir.string()},
        {"seed", config.seed},
        {"circuit", circuit_to_json(config.circuit)},
        {"training", training_to_json(config.training)},
        {"rounds_max", config.rounds_max},
        {"target_accuracy", config.target_accuracy ? Json(*config.target_accuracy) : Json(nullptr)},
        {"weights", config.weights},
        {"parallel_clients", config.parallel_clients},
        {"clients", std::move(clients)},
        {"pool", config.pool.string()},
        {"num_clients", config.num_clients},
        {"train_fraction", config.train_fraction},
        {"train", config.train_path.string()},
        {"validation", config.validation_path.string()},
        {"data", config.data_path.string()},
        {"model", config.model_path.string()},
        {"image", config.image_path.string()},
        {"mask", config.mask_path.string()},
        {"per_class", config.per_class},
        {"client_id", config.client_id},
        {"weight", config.client_weight},
        {"listen", config.listen_address},
        {"connect", config.connect_address},
        {"timeout_seconds", static_cast<double>(config.round_timeout.count()) / 1000.0}};
}

namespace detail {

inline void write_text(const std::filesystem::path &path, std::string_view content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw Error("write failed for " + path.string());
    }
}

inline void write_json(const std::filesystem::path &path, const Json &doc) {
    write_text(path, doc.dump(2) + "\n");
}

inline void require_path(const std::filesystem::path &path, const char *field) {
    if (path.empty()) {
        throw ConfigError(std::string(field) + " is required for this mode");
    }
}

inline PatchDataset load_patches(const std::filesystem::path &path, const char *field) {
    require_path(path, field);
    return read_patch_file(path);
}

} // namespace detail

/// Resolves datasets, weights and per-client seeds into a runnable plan.
/// Clients come either from an explicit list or from one pool that is
/// partitioned and split per client; all derived seeds flow from the base
/// seed through fixed stages.
inline FederationPlan build_plan(const RunConfig &config) {
    FederationPlan plan;
    plan.circuit = config.circuit;
    plan.training = config.training;
    plan.rounds_max = config.rounds_max;
    plan.target_accuracy = config.target_accuracy;
    plan.parallel_clients = config.parallel_clients;

    auto weight_at = [&](std::size_t i, std::size_t count) {
        if (config.weights.empty()) {
            return 1.0;
        }
        if (config.weights.size() != count) {
            throw ConfigError("weights list has " + std::to_string(config.weights.size()) +
                              " entries for " + std::to_string(count) + " clients");
        }
        return config.weights[i];
    };

    if (!config.clients.empty()) {
        for (std::size_t i = 0; i < config.clients.size(); ++i) {
            const ClientSource &src = config.clients[i];
            ClientConfig client;
            client.client_id = src.id.empty() ? "c" + std::to_string(i + 1) : src.id;
            client.train_set = detail::load_patches(src.train, "clients[].train");
            client.validation_set = detail::load_patches(src.validation, "clients[].validation");
            client.aggregation_weight =
                src.weight ? *src.weight : weight_at(i, config.clients.size());
            client.rng_seed =
                src.seed ? *src.seed : stage_seed(config.seed, seed_stage_client, i);
            plan.clients.push_back(std::move(client));
        }
    } else if (!config.pool.empty()) {
        const PatchDataset pool = read_patch_file(config.pool);
        const auto shares = partition_clients(pool, config.num_clients,
                                              stage_seed(config.seed, seed_stage_partition, 0));
        for (std::size_t i = 0; i < shares.size(); ++i) {
            auto [train, validation] =
                split(shares[i], config.train_fraction, stage_seed(config.seed, seed_stage_split, i));
            ClientConfig client;
            client.client_id = "c" + std::to_string(i + 1);
            client.train_set = std::move(train);
            client.validation_set = std::move(validation);
            client.aggregation_weight = weight_at(i, shares.size());
            client.rng_seed = stage_seed(config.seed, seed_stage_client, i);
            plan.clients.push_back(std::move(client));
        }
    } else {
        throw ConfigError("federation needs 'clients' or 'pool'");
    }
    plan.validate();
    return plan;
}

namespace detail {

inline void write_round_artifacts(const std::filesystem::path &out_dir, const CircuitSpec &circuit,
                                  const std::vector<RoundRecord> &records) {
    for (const RoundRecord &record : records) {
        const auto round_dir = out_dir / ("round_" + std::to_string(record.round_index));
        std::filesystem::create_directories(round_dir);
        write_json(round_dir / "record.json", round_record_to_json(record));
        save_model(round_dir / "global_model.json", circuit, record.global_params);
        for (const ClientRoundRecord &cr : record.clients) {
            save_model(round_dir / (cr.client_id + "_best.json"), circuit, cr.best_params);
            if (!cr.history.empty()) {
                write_text(round_dir / (cr.client_id + "_curves.csv"), emit_curves(cr.history));
            }
        }
    }
    if (!records.empty()) {
        const RoundRecord &last = records.back();
        save_model(out_dir / "final_model.json", circuit, last.global_params);
        Json final_metrics = Json::array();
        for (const ClientRoundRecord &cr : last.clients) {
            final_metrics.push_back(Json{
                {"client_id", cr.client_id},
                {"metrics", metrics_to_json(cr.global_metrics, cr.global_confusion)}});
        }
        write_json(out_dir / "final_metrics.json",
                   Json{{"round", last.round_index}, {"clients", std::move(final_metrics)}});
    }
}

inline void print_round_summaries(const std::vector<RoundRecord> &records) {
    for (const RoundRecord &record : records) {
        std::cout << "round " << record.round_index << ":";
        for (const ClientRoundRecord &cr : record.clients) {
            std::cout << ' ' << cr.client_id << "=" << *cr.global_metrics.accuracy;
        }
        std::cout << '\n';
    }
}

inline Transcript transcript_to(std::ofstream &out) {
    return [&out](std::string_view peer, char direction, std::string_view line) {
        out << direction << ' ' << peer << ' ' << line << '\n';
        out.flush();
    };
}

} // namespace detail

/// Executes the selected mode and fills the run directory; throws on any
/// failure. run() below maps outcomes onto process exit codes.
inline void execute(const RunConfig &config) {
    detail::require_path(config.out_dir, "--out");
    std::filesystem::create_directories(config.out_dir);
    detail::write_json(config.out_dir / "config.snapshot", config_snapshot(config));

    switch (config.mode) {
    case RunMode::TrainLocal: {
        ClientConfig client;
        client.client_id = config.client_id.empty() ? "local" : config.client_id;
        client.train_set = detail::load_patches(config.train_path, "--train");
        client.validation_set = detail::load_patches(config.validation_path, "--validation");
        client.rng_seed = config.seed;
        const LocalTrainResult result =
            local_train(client, config.circuit, ModelParams::zeros(config.circuit), config.training);
        save_model(config.out_dir / "model.json", config.circuit, result.best_params);
        detail::write_text(config.out_dir / "curves.csv", emit_curves(result.history));
        const ConfusionMatrix cm =
            evaluate(config.circuit, result.best_params, to_examples(client.validation_set));
        detail::write_json(config.out_dir / "metrics.json", metrics_to_json(compute_metrics(cm), cm));
        std::cout << "best epoch " << result.best_epoch << ", validation accuracy "
                  << result.best_validation_accuracy << '\n';
        break;
    }
    case RunMode::Federate: {
        const FederationPlan plan = build_plan(config);
        const std::vector<RoundRecord> records = run_federation(plan);
        detail::write_round_artifacts(config.out_dir, plan.circuit, records);
        detail::print_round_summaries(records);
        break;
    }
    case RunMode::Serve: {
        const FederationPlan plan = build_plan(config);
        if (config.listen_address.empty()) {
            throw ConfigError("--listen is required for serve");
        }
        const Endpoint requested = parse_endpoint(config.listen_address);
        TcpListener listener = TcpListener::bind(requested);
        // The resolved endpoint lands in the run directory so callers that
        // asked for port 0 can discover where to point the clients.
        detail::write_text(config.out_dir / "endpoint.txt",
                           requested.host + ":" + std::to_string(listener.port()) + "\n");
        std::ofstream transcript(config.out_dir / "transcript.txt", std::ios::binary);
        if (!transcript) {
            throw Error("cannot write transcript");
        }
        const std::vector<RoundRecord> records =
            serve(listener, plan, config.round_timeout, detail::transcript_to(transcript));
        detail::write_round_artifacts(config.out_dir, plan.circuit, records);
        detail::print_round_summaries(records);
        break;
    }
    case RunMode::Client: {
        if (config.connect_address.empty()) {
            throw ConfigError("--connect is required for client");
        }
        if (config.client_id.empty()) {
            throw ConfigError("--client-id is required for client");
        }
        ClientConfig client;
        client.client_id = config.client_id;
        client.aggregation_weight = config.client_weight;
        client.train_set = detail::load_patches(config.train_path, "--train");
        client.validation_set = detail::load_patches(config.validation_path, "--validation");
        client.rng_seed = config.seed;
        std::ofstream transcript(config.out_dir / "transcript.txt", std::ios::binary);
        if (!transcript) {
            throw Error("cannot write transcript");
        }
        const ClientRunResult result = client_run(parse_endpoint(config.connect_address), client,
                                                  detail::transcript_to(transcript));
        Json rounds = Json::array();
        for (const auto &[round, local] : result.rounds) {
            const std::string stem = "round_" + std::to_string(round);
            detail::write_text(config.out_dir / (stem + "_curves.csv"), emit_curves(local.history));
            save_model(config.out_dir / (stem + "_best_model.json"), result.circuit,
                       local.best_params);
            rounds.push_back(Json{{"round", round},
                                  {"best_validation_accuracy", local.best_validation_accuracy},
                                  {"best_epoch", local.best_epoch},
                                  {"epochs_run", local.epochs_run()}});
        }
        detail::write_json(config.out_dir / "summary.json",
                           Json{{"client_id", client.client_id},
                                {"done_reason", result.done_reason},
                                {"rounds", std::move(rounds)}});
        std::cout << "client " << client.client_id << " finished: " << result.done_reason << '\n';
        break;
    }
    case RunMode::Evaluate: {
        detail::require_path(config.model_path, "--model");
        const auto [circuit, params] = load_model(config.model_path);
        const PatchDataset dataset = detail::load_patches(config.data_path, "--data");
        const ConfusionMatrix cm = evaluate(circuit, params, to_examples(dataset));
        const Json report = metrics_to_json(compute_metrics(cm), cm);
        detail::write_json(config.out_dir / "metrics.json", report);
        std::cout << report.dump(2) << '\n';
        break;
    }
    case RunMode::ExtractPatches: {
        detail::require_path(config.image_path, "--image");
        detail::require_path(config.mask_path, "--mask");
        const RasterImage image = read_image_p6(config.image_path);
        const LesionMask mask = read_mask_p5(config.mask_path);
        const PatchDataset dataset = extract_patches(image, mask, config.per_class, config.seed,
                                                     config.image_path.stem().string());
        write_patch_file(config.out_dir / "patches.csv", dataset);
        std::cout << "wrote " << dataset.size() << " patches\n";
        break;
    }
    case RunMode::Split: {
        const PatchDataset dataset = detail::load_patches(config.data_path, "--data");
        const auto [train, test] = split(dataset, config.train_fraction, config.seed);
        write_patch_file(config.out_dir / "train.csv", train);
        write_patch_file(config.out_dir / "test.csv", test);
        std::cout << "split " << dataset.size() << " patches into " << train.size() << " train / "
                  << test.size() << " test\n";
        break;
    }
    }
}

/// Exit codes: 0 success, 1 configuration error, 2 runtime error,
/// 3 protocol or transport error.
inline int run(const RunConfig &config) noexcept {
    try {
        execute(config);
        return 0;
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const MalformedMessage &e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return 3;
    } catch (const VersionMismatch &e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return 3;
    } catch (const OversizeLine &e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return 3;
    } catch (const Timeout &e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return 3;
    } catch (const DuplicateClient &e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return 3;
    } catch (const ConnectionLost &e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return 3;
    } catch (const ProtocolViolation &e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}

} // namespace fedqnn
