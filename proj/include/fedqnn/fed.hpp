#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedqnn/data.hpp"
#include "fedqnn/errors.hpp"
#include "fedqnn/metrics.hpp"
#include "fedqnn/optim.hpp"
#include "fedqnn/qnn.hpp"
#include "fedqnn/rng.hpp"

namespace fedqnn {

struct ClientConfig {
    std::string client_id;
    double aggregation_weight = 1.0;
    PatchDataset train_set;
    PatchDataset validation_set;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (client_id.empty()) {
            throw Error("client_id must be nonempty");
        }
        if (!(aggregation_weight > 0.0) || !std::isfinite(aggregation_weight)) {
            throw NonPositiveWeight("client " + client_id + " needs a positive finite weight");
        }
        if (train_set.empty() || validation_set.empty()) {
            throw EmptyDataset("client " + client_id + " has an empty dataset");
        }
    }
};

struct TrainingConfig {
    OptimizerConfig optimizer;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    bool shuffle_each_epoch = true;

    bool operator==(const TrainingConfig &) const = default;

    void validate() const {
        optimizer.validate();
        if (max_epochs == 0) {
            throw Error("max_epochs must be positive");
        }
        if (patience == 0 || patience > max_epochs) {
            throw Error("patience must lie in [1, max_epochs]");
        }
    }
};

struct FederationPlan {
    std::vector<ClientConfig> clients;
    std::size_t rounds_max = 5;
    std::optional<double> target_accuracy;
    CircuitSpec circuit;
    TrainingConfig training;
    bool parallel_clients = false;

    void validate() const {
        if (clients.empty()) {
            throw Error("plan needs at least one client");
        }
        for (const ClientConfig &c : clients) {
            c.validate();
        }
        std::vector<std::string> ids;
        for (const ClientConfig &c : clients) {
            ids.push_back(c.client_id);
        }
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
            throw Error("client ids must be unique");
        }
        if (rounds_max == 0) {
            throw Error("rounds_max must be positive");
        }
        if (target_accuracy && !(*target_accuracy > 0.0 && *target_accuracy <= 1.0)) {
            throw Error("target_accuracy must lie in (0,1]");
        }
        circuit.validate();
        training.validate();
    }
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double loss = 0.0;
    double train_accuracy = 0.0;
    double validation_accuracy = 0.0;
};

struct LocalTrainResult {
    ModelParams best_params;
    double best_validation_accuracy = 0.0;
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> history;

    std::size_t epochs_run() const { return history.size(); }
};

struct WeightedUpdate {
    std::vector<double> params;
    double weight = 1.0;
};

/// Weighted average (sum w_i p_i) / (sum w_i), accumulated in the order the
/// updates are given; callers fix that order (sorted client_id) so runs
/// reproduce bitwise.
inline std::vector<double> aggregate(std::span<const WeightedUpdate> updates) {
    if (updates.empty()) {
        throw EmptyUpdateSet("aggregate needs at least one update");
    }
    const std::size_t dim = updates.front().params.size();
    double weight_sum = 0.0;
    for (const WeightedUpdate &u : updates) {
        if (u.params.size() != dim) {
            throw LengthMismatch("update with " + std::to_string(u.params.size()) +
                                 " parameters, expected " + std::to_string(dim));
        }
        if (!(u.weight > 0.0) || !std::isfinite(u.weight)) {
            throw NonPositiveWeight("aggregation weights must be positive and finite");
        }
        weight_sum += u.weight;
    }
    std::vector<double> out(dim, 0.0);
    for (const WeightedUpdate &u : updates) {
        for (std::size_t i = 0; i < dim; ++i) {
            out[i] += u.weight * u.params[i];
        }
    }
    for (double &v : out) {
        v /= weight_sum;
    }
    return out;
}

/// Full-batch local training with early stopping.
///
/// Per epoch: one gradient step (gradient over the epoch's order, shuffled
/// when configured), then loss and accuracies on the canonical dataset
/// order. Patience counts epochs without strict improvement over the best
/// validation accuracy seen so far, where the incoming params set the
/// starting bar; the returned checkpoint is the best epoch end, ties going
/// to the earliest epoch.
inline LocalTrainResult local_train(const ClientConfig &client, const CircuitSpec &circuit,
                                    const ModelParams &init, const TrainingConfig &training) {
    client.validate();
    circuit.validate();
    training.validate();
    if (init.angles.size() != circuit.angle_count()) {
        throw ParamCountMismatch("init params do not match the circuit");
    }

    const std::vector<LabeledExample> train = to_examples(client.train_set);
    const std::vector<LabeledExample> validation = to_examples(client.validation_set);

    std::mt19937_64 rng(client.rng_seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<LabeledExample> shuffled;

    std::vector<double> flat = init.flatten();
    OptimizerState state = OptimizerState::zeros(flat.size());
    ModelParams current = init;

    double incumbent = accuracy_of(circuit, init, validation);
    LocalTrainResult result;
    double best_val = -1.0;
    std::size_t stall = 0;

    for (std::size_t epoch = 1; epoch <= training.max_epochs; ++epoch) {
        std::span<const LabeledExample> batch(train);
        if (training.shuffle_each_epoch) {
            deterministic_shuffle(order, rng);
            shuffled.clear();
            for (std::size_t idx : order) {
                shuffled.push_back(train[idx]);
            }
            batch = shuffled;
        }

        Gradient grad;
        if (training.optimizer.kind == OptimizerKind::Nesterov) {
            const std::vector<double> look = lookahead_point(training.optimizer, state, flat);
            grad = gradient(circuit, ModelParams::unflatten(circuit, look), batch);
        } else {
            grad = gradient(circuit, current, batch);
        }
        std::vector<double> flat_grad = std::move(grad.angle_grads);
        flat_grad.push_back(grad.bias_grad);

        auto [next, next_state] = step(training.optimizer, state, flat, flat_grad);
        flat = std::move(next);
        state = std::move(next_state);
        current = ModelParams::unflatten(circuit, flat);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss(circuit, current, train);
        rec.train_accuracy = accuracy_of(circuit, current, train);
        rec.validation_accuracy = accuracy_of(circuit, current, validation);
        result.history.push_back(rec);

        if (rec.validation_accuracy > best_val) {
            best_val = rec.validation_accuracy;
            result.best_params = current;
            result.best_epoch = epoch;
        }
        if (rec.validation_accuracy > incumbent) {
            incumbent = rec.validation_accuracy;
            stall = 0;
        } else if (++stall >= training.patience) {
            break;
        }
    }
    result.best_validation_accuracy = best_val;
    return result;
}

struct ClientRoundRecord {
    std::string client_id;
    ModelParams best_params;
    double best_validation_accuracy = 0.0;
    std::size_t epochs_run = 0;
    std::vector<EpochRecord> history;
    ConfusionMatrix global_confusion; // this client's validation set under the global params
    MetricsReport global_metrics;
};

struct RoundRecord {
    std::size_t round_index = 0; // 1-based
    ModelParams global_params;
    std::vector<ClientRoundRecord> clients; // sorted by client_id
};

/// Per-round seed for a client: local_train shuffles must differ across
/// rounds yet replay exactly, in process or over the wire.
inline std::uint64_t round_seed(std::uint64_t client_seed, std::size_t round_index) {
    return derive_seed(client_seed, round_index);
}

/// Synchronous federated averaging. The global model starts at zero; each
/// round every client trains from the current global params, the server
/// aggregates the best checkpoints under the plan weights, and the loop
/// ends when every client's validation accuracy on the global model reaches
/// target_accuracy (if set) or after rounds_max rounds.
inline std::vector<RoundRecord> run_federation(const FederationPlan &plan) {
    plan.validate();

    std::vector<std::size_t> order(plan.clients.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return plan.clients[a].client_id < plan.clients[b].client_id;
    });

    ModelParams global = ModelParams::zeros(plan.circuit);
    std::vector<RoundRecord> records;

    for (std::size_t round = 1; round <= plan.rounds_max; ++round) {
        std::vector<LocalTrainResult> results(order.size());
        std::vector<std::exception_ptr> failures(order.size());
        auto train_one = [&](std::size_t slot) {
            try {
                ClientConfig seeded = plan.clients[order[slot]];
                seeded.rng_seed = round_seed(seeded.rng_seed, round);
                results[slot] = local_train(seeded, plan.circuit, global, plan.training);
            } catch (...) {
                failures[slot] = std::current_exception();
            }
        };
        if (plan.parallel_clients) {
            std::vector<std::thread> workers;
            workers.reserve(order.size());
            for (std::size_t slot = 0; slot < order.size(); ++slot) {
                workers.emplace_back(train_one, slot);
            }
            for (std::thread &w : workers) {
                w.join();
            }
        } else {
            for (std::size_t slot = 0; slot < order.size(); ++slot) {
                train_one(slot);
            }
        }
        for (std::size_t slot = 0; slot < order.size(); ++slot) {
            if (!failures[slot]) {
                continue;
            }
            try {
                std::rethrow_exception(failures[slot]);
            } catch (const std::exception &e) {
                throw Error("client " + plan.clients[order[slot]].client_id +
                            " failed in round " + std::to_string(round) + ": " + e.what());
            }
        }

        std::vector<WeightedUpdate> updates;
        updates.reserve(order.size());
        for (std::size_t slot = 0; slot < order.size(); ++slot) {
            updates.push_back(
                {results[slot].best_params.flatten(), plan.clients[order[slot]].aggregation_weight});
        }
        global = ModelParams::unflatten(plan.circuit, aggregate(updates));

        RoundRecord record;
        record.round_index = round;
        record.global_params = global;
        bool target_met = plan.target_accuracy.has_value();
        for (std::size_t slot = 0; slot < order.size(); ++slot) {
            const ClientConfig &client = plan.clients[order[slot]];
            ClientRoundRecord cr;
            cr.client_id = client.client_id;
            cr.best_params = std::move(results[slot].best_params);
            cr.best_validation_accuracy = results[slot].best_validation_accuracy;
            cr.epochs_run = results[slot].history.size();
            cr.history = std::move(results[slot].history);
            cr.global_confusion = evaluate(plan.circuit, global, to_examples(client.validation_set));
            cr.global_metrics = compute_metrics(cr.global_confusion);
            if (target_met && !(*cr.global_metrics.accuracy >= *plan.target_accuracy)) {
                target_met = false;
            }
            record.clients.push_back(std::move(cr));
        }
        records.push_back(std::move(record));
        if (target_met) {
            break;
        }
    }
    return records;
}

} // namespace fedqnn
