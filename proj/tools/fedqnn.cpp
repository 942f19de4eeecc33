// Command-line front end: each subcommand maps onto one run mode, a JSON
// config file can preload any field, and explicitly passed flags override
// the file.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <fedqnn/run.hpp>
#include <fedqnn/serde.hpp>

namespace {

struct Flags {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    std::string optimizer;
    double lr = 0.0;
    std::size_t epochs = 0;
    std::size_t patience = 0;
    std::size_t rounds = 0;
    std::string weights;
    std::string entanglement;
    std::size_t layers = 0;
    std::size_t qubits = 0;
    double target_accuracy = 0.0;
    std::string listen;
    std::string connect;
    double timeout_seconds = 0.0;
    std::string train;
    std::string validation;
    std::string data;
    std::string model;
    std::string image;
    std::string mask;
    std::string pool;
    std::size_t per_class = 0;
    std::string client_id;
    double weight = 0.0;
    std::size_t num_clients = 0;
    double train_fraction = 0.0;
    bool parallel = false;
    bool no_shuffle = false;
    bool bias_correction = false;
};

void add_flags(CLI::App *cmd, Flags &f) {
    cmd->add_option("--config", f.config_path, "JSON config file; explicit flags override it");
    cmd->add_option("--seed", f.seed, "base RNG seed (default 0; never wall clock)");
    cmd->add_option("--out", f.out, "run directory for artifacts");
    cmd->add_option("--optimizer", f.optimizer, "gd|nesterov|adam");
    cmd->add_option("--lr", f.lr, "learning rate");
    cmd->add_option("--epochs", f.epochs, "max training epochs per round");
    cmd->add_option("--patience", f.patience, "epochs without validation improvement before stopping");
    cmd->add_option("--rounds", f.rounds, "max federation rounds");
    cmd->add_option("--weights", f.weights, "aggregation weights, e.g. 5:5:4");
    cmd->add_option("--entanglement", f.entanglement, "linear|circular|full");
    cmd->add_option("--layers", f.layers, "ansatz layers");
    cmd->add_option("--qubits", f.qubits, "qubit count");
    cmd->add_option("--target-accuracy", f.target_accuracy,
                    "stop once every client reaches this validation accuracy");
    cmd->add_option("--listen", f.listen, "serve address host:port (port 0 picks a free port)");
    cmd->add_option("--connect", f.connect, "server address host:port");
    cmd->add_option("--timeout", f.timeout_seconds, "round timeout in seconds (default 300)");
    cmd->add_option("--train", f.train, "training patch CSV");
    cmd->add_option("--validation", f.validation, "validation patch CSV");
    cmd->add_option("--data", f.data, "input patch CSV");
    cmd->add_option("--model", f.model, "model JSON file");
    cmd->add_option("--image", f.image, "P6 pixmap image");
    cmd->add_option("--mask", f.mask, "P5 graymap lesion mask");
    cmd->add_option("--pool", f.pool, "patch pool CSV to partition across clients");
    cmd->add_option("--per-class", f.per_class, "patches per class to extract");
    cmd->add_option("--client-id", f.client_id, "client identifier");
    cmd->add_option("--weight", f.weight, "this client's aggregation weight");
    cmd->add_option("--clients", f.num_clients, "client count when partitioning a pool");
    cmd->add_option("--train-fraction", f.train_fraction, "train share of each split (default 0.75)");
    cmd->add_flag("--parallel", f.parallel, "train clients concurrently");
    cmd->add_flag("--no-shuffle", f.no_shuffle, "keep the epoch order fixed");
    cmd->add_flag("--bias-correction", f.bias_correction,
                  "use standard bias-corrected Adam instead of the default variant");
}

int apply(const CLI::App *cmd, const Flags &f, fedqnn::RunConfig &config) {
    using fedqnn::ConfigError;
    if (cmd->count("--config") > 0) {
        std::ifstream in(f.config_path, std::ios::binary);
        if (!in) {
            throw ConfigError("cannot open config file " + f.config_path);
        }
        fedqnn::Json doc;
        try {
            in >> doc;
        } catch (const fedqnn::Json::exception &e) {
            throw ConfigError("config file " + f.config_path + " is not valid JSON: " + e.what());
        }
        const fedqnn::RunMode mode = config.mode; // the subcommand, not the file, picks the mode
        fedqnn::apply_config_file(config, doc);
        config.mode = mode;
    }
    if (cmd->count("--out") > 0) config.out_dir = f.out;
    if (cmd->count("--seed") > 0) config.seed = f.seed;
    if (cmd->count("--optimizer") > 0) {
        config.training.optimizer.kind = fedqnn::optimizer_from_name(f.optimizer);
    }
    if (cmd->count("--lr") > 0) config.training.optimizer.learning_rate = f.lr;
    if (cmd->count("--epochs") > 0) config.training.max_epochs = f.epochs;
    if (cmd->count("--patience") > 0) config.training.patience = f.patience;
    if (cmd->count("--rounds") > 0) config.rounds_max = f.rounds;
    if (cmd->count("--weights") > 0) config.weights = fedqnn::parse_weights(f.weights);
    if (cmd->count("--entanglement") > 0) {
        config.circuit.entanglement = fedqnn::entanglement_from_name(f.entanglement);
    }
    if (cmd->count("--layers") > 0) config.circuit.layers = f.layers;
    if (cmd->count("--qubits") > 0) config.circuit.n_qubits = f.qubits;
    if (cmd->count("--target-accuracy") > 0) config.target_accuracy = f.target_accuracy;
    if (cmd->count("--listen") > 0) config.listen_address = f.listen;
    if (cmd->count("--connect") > 0) config.connect_address = f.connect;
    if (cmd->count("--timeout") > 0) {
        if (!(f.timeout_seconds > 0.0)) {
            throw ConfigError("--timeout must be positive");
        }
        config.round_timeout =
            std::chrono::milliseconds(static_cast<std::int64_t>(f.timeout_seconds * 1000.0));
    }
    if (cmd->count("--train") > 0) config.train_path = f.train;
    if (cmd->count("--validation") > 0) config.validation_path = f.validation;
    if (cmd->count("--data") > 0) config.data_path = f.data;
    if (cmd->count("--model") > 0) config.model_path = f.model;
    if (cmd->count("--image") > 0) config.image_path = f.image;
    if (cmd->count("--mask") > 0) config.mask_path = f.mask;
    if (cmd->count("--pool") > 0) config.pool = f.pool;
    if (cmd->count("--per-class") > 0) config.per_class = f.per_class;
    if (cmd->count("--client-id") > 0) config.client_id = f.client_id;
    if (cmd->count("--weight") > 0) config.client_weight = f.weight;
    if (cmd->count("--clients") > 0) config.num_clients = f.num_clients;
    if (cmd->count("--train-fraction") > 0) config.train_fraction = f.train_fraction;
    if (cmd->count("--parallel") > 0) config.parallel_clients = f.parallel;
    if (cmd->count("--no-shuffle") > 0) config.training.shuffle_each_epoch = !f.no_shuffle;
    if (cmd->count("--bias-correction") > 0) {
        config.training.optimizer.bias_correction = f.bias_correction;
    }
    return fedqnn::run(config);
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"federated variational quantum classifier toolkit"};
    app.require_subcommand(1);
    Flags flags;

    const std::pair<const char *, const char *> commands[] = {
        {"train-local", "train one model on local patch files"},
        {"federate", "run a full federation in-process"},
        {"serve", "run the aggregation server over TCP"},
        {"client", "join a federation as one client over TCP"},
        {"evaluate", "score a saved model against a patch file"},
        {"extract-patches", "cut labeled patches from an image and its lesion mask"},
        {"split", "stratified train/test split of a patch file"},
    };
    for (const auto &[name, description] : commands) {
        add_flags(app.add_subcommand(name, description), flags);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    const CLI::App *cmd = app.get_subcommands().front();
    fedqnn::RunConfig config;
    try {
        config.mode = fedqnn::mode_from_name(cmd->get_name());
        return apply(cmd, flags, config);
    } catch (const fedqnn::ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    }
}
