// recbench: one binary driving the whole workflow — synthesize data, run the
// cleaning pipeline, build the co-occurrence graph, train the recommenders,
// evaluate them against the baselines, and render reports.
//
// Logs are line-oriented JSON on stderr; results go to files under --out and
// to stdout. Exit codes: 0 success, 2 usage error, 1 runtime error with a
// stage-tagged message.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "recbench/recbench.hpp"

namespace fs = std::filesystem;
using namespace recbench;

namespace {

// Parsed command line, resolved before any work happens.
struct CommandInvocation {
    std::string subcommand;
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::string format = "csv";
    bool verbose = false;
    std::optional<int> epochs;
    std::optional<double> lr;
    std::optional<int> batch;
    SyntheticConfig synth;
    std::string in_path;  // report: persisted JSON to re-render
};

void log_line(const nlohmann::json& j) { std::cerr << j.dump() << "\n"; }

void log_wrote(const fs::path& path) { log_line({{"event", "wrote"}, {"path", path.string()}}); }

std::string model_defaults_table() {
    using MK = models::ModelKind;
    std::string out = "Per-kind training defaults (overridable via --epochs/--lr/--batch):\n";
    char line[160];
    for (MK k : {MK::cnn, MK::rnn, MK::gnn, MK::autoencoder, MK::transformer, MK::ncf,
                 MK::siamese}) {
        const models::ModelConfig c = models::ModelConfig::defaults(k);
        std::snprintf(line, sizeof(line),
                      "  %-12s lr=%-7g batch=%-4d epochs=%-3d embed=%d hidden=%d", to_string(k),
                      c.lr, c.batch, c.epochs, c.embed_dim, c.hidden);
        out += line;
        switch (k) {
            case MK::cnn:
            case MK::rnn:
                std::snprintf(line, sizeof(line), " dropout=%g", c.dropout);
                break;
            case MK::gnn: std::snprintf(line, sizeof(line), " rounds=%d", c.gnn_rounds); break;
            case MK::autoencoder:
                std::snprintf(line, sizeof(line), " bottleneck=%d", c.bottleneck);
                break;
            case MK::transformer: std::snprintf(line, sizeof(line), " heads=%d", c.heads); break;
            case MK::ncf: std::snprintf(line, sizeof(line), " negatives=%d", c.neg_samples); break;
            case MK::siamese: std::snprintf(line, sizeof(line), " margin=%g", c.margin); break;
        }
        out += line;
        out += "\n";
    }
    return out;
}

// Config file (when given) -> struct, then command-line overrides on top.
bench::ExperimentConfig resolve_config(const CommandInvocation& inv) {
    bench::ExperimentConfig cfg;
    if (!inv.config_path.empty()) {
        std::ifstream in(inv.config_path);
        if (!in) throw IoError("cannot open config " + inv.config_path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw InvalidConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        cfg = bench::experiment_from_json(j);
    }
    cfg.out_dir = inv.out_dir;
    if (inv.seed) {
        // one switch drives everything seeded: the dataset, every model, and
        // the random baseline
        cfg.seed = *inv.seed;
        cfg.synthetic.seed = *inv.seed;
        for (models::ModelConfig& mc : cfg.model_configs) mc.seed = *inv.seed;
    }
    for (models::ModelConfig& mc : cfg.model_configs) {
        if (inv.epochs) mc.epochs = *inv.epochs;
        if (inv.lr) mc.lr = *inv.lr;
        if (inv.batch) mc.batch = *inv.batch;
    }
    return cfg;
}

// All seven kinds at their defaults, with the same overrides applied.
void force_all_kinds(bench::ExperimentConfig& cfg, const CommandInvocation& inv) {
    using MK = models::ModelKind;
    cfg.model_configs.clear();
    for (MK k : {MK::cnn, MK::rnn, MK::gnn, MK::autoencoder, MK::transformer, MK::ncf,
                 MK::siamese}) {
        models::ModelConfig mc = models::ModelConfig::defaults(k);
        mc.seed = inv.seed.value_or(cfg.seed);
        if (inv.epochs) mc.epochs = *inv.epochs;
        if (inv.lr) mc.lr = *inv.lr;
        if (inv.batch) mc.batch = *inv.batch;
        cfg.model_configs.push_back(mc);
    }
}

struct DatasetBundle {
    PreprocessedData data;
    PipelineReport report;
};

DatasetBundle load_dataset(const bench::ExperimentConfig& cfg) {
    DatasetBundle b;
    if (cfg.items_csv.empty()) {
        const SyntheticDataset synth = generate_synthetic(cfg.synthetic);
        b.data = preprocess_sessions(synth.sessions, synth.items, cfg.pipeline, b.report);
    } else {
        std::vector<ItemRecord> items = read_items_csv(cfg.items_csv);
        std::vector<Session> sessions = read_sessions_csv(cfg.sessions_csv);
        b.data = preprocess_sessions(std::move(sessions), std::move(items), cfg.pipeline,
                                     b.report);
    }
    return b;
}

// unique per-run model names, same rule the evaluation harness uses
std::vector<std::string> checkpoint_names(const std::vector<models::ModelConfig>& configs) {
    std::vector<std::string> names;
    for (const models::ModelConfig& mc : configs) {
        std::string name = models::to_string(mc.kind);
        int copy = 1;
        while (std::find(names.begin(), names.end(), name) != names.end())
            name = std::string(models::to_string(mc.kind)) + "_" + std::to_string(++copy);
        names.push_back(std::move(name));
    }
    return names;
}

int cmd_synth(const CommandInvocation& inv) {
    const SyntheticDataset ds = generate_synthetic(inv.synth);
    fs::create_directories(inv.out_dir);
    const fs::path items_path = fs::path(inv.out_dir) / "items.csv";
    const fs::path sessions_path = fs::path(inv.out_dir) / "sessions.csv";
    write_items_csv(items_path.string(), ds.items);
    write_sessions_csv(sessions_path.string(), ds.sessions);
    log_wrote(items_path);
    log_wrote(sessions_path);
    std::cout << nlohmann::json{{"items_csv", items_path.string()},
                                {"sessions_csv", sessions_path.string()},
                                {"n_items", ds.items.size()},
                                {"n_sessions", ds.sessions.size()}}
                     .dump()
              << "\n";
    return 0;
}

void log_config(const bench::ExperimentConfig& cfg) {
    log_line({{"event", "config"}, {"config", bench::experiment_to_json(cfg)}});
}

int cmd_prepare(const CommandInvocation& inv) {
    const bench::ExperimentConfig cfg = resolve_config(inv);
    log_config(cfg);
    const DatasetBundle b = load_dataset(cfg);
    fs::create_directories(inv.out_dir);
    const fs::path path = fs::path(inv.out_dir) / "pipeline_report.json";
    const nlohmann::json j = bench::pipeline_report_to_json(b.report);
    bench::detail::write_text_atomic(path, j.dump(2) + "\n");
    log_wrote(path);
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_graph(const CommandInvocation& inv) {
    const bench::ExperimentConfig cfg = resolve_config(inv);
    log_config(cfg);
    const DatasetBundle b = load_dataset(cfg);
    const IndexedSplit split =
        models::detail::split_indexed(b.data.sessions, cfg.pipeline.split_ratio);
    const ItemGraph g = build_graph(split.train, b.data.item_categories);
    fs::create_directories(inv.out_dir);
    const fs::path path = fs::path(inv.out_dir) / "graph.ndjson";
    save_graph(g, path.string());
    log_wrote(path);
    std::cout << nlohmann::json{{"graph", path.string()},
                                {"nodes", g.node_count()},
                                {"edges", g.edge_count()}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_train(const CommandInvocation& inv) {
    bench::ExperimentConfig cfg = resolve_config(inv);
    if (cfg.model_configs.empty()) force_all_kinds(cfg, inv);
    log_config(cfg);
    cfg.validate();
    const DatasetBundle b = load_dataset(cfg);
    const IndexedSplit split =
        models::detail::split_indexed(b.data.sessions, cfg.pipeline.split_ratio);
    const ItemGraph g = build_graph(split.train, b.data.item_categories);
    fs::create_directories(inv.out_dir);
    const std::vector<std::string> names = checkpoint_names(cfg.model_configs);
    nlohmann::json written = nlohmann::json::array();
    for (std::size_t i = 0; i < cfg.model_configs.size(); ++i) {
        const models::ModelConfig& mc = cfg.model_configs[i];
        if (inv.verbose) log_line({{"event", "fit"}, {"model", names[i]}});
        const bool wants_graph =
            mc.kind == models::ModelKind::gnn || mc.kind == models::ModelKind::siamese;
        const models::TrainedModel m = models::fit(mc, b.data, wants_graph ? &g : nullptr);
        const fs::path ckpt = fs::path(inv.out_dir) / (names[i] + ".ckpt");
        models::save_model(m, ckpt.string());
        log_wrote(ckpt);
        written.push_back(ckpt.string());
    }
    std::cout << nlohmann::json{{"checkpoints", written}}.dump() << "\n";
    return 0;
}

int run_and_emit(const bench::ExperimentConfig& cfg, const CommandInvocation& inv) {
    log_config(cfg);
    bench::RunArtifacts art;
    const bench::EvalReport rep = bench::run_experiment(cfg, &art);
    const fs::path out(inv.out_dir);
    const fs::path csv_path = bench::emit_report(rep, out, bench::ReportFormat::csv);
    const fs::path json_path = bench::emit_report(rep, out, bench::ReportFormat::json);
    const fs::path pipe_path = out / "pipeline_report.json";
    bench::detail::write_text_atomic(pipe_path,
                                     bench::pipeline_report_to_json(art.pipeline).dump(2) + "\n");
    log_wrote(csv_path);
    log_wrote(json_path);
    log_wrote(pipe_path);
    for (std::size_t i = 0; i < art.fitted_models.size(); ++i) {
        const fs::path ckpt = out / (art.model_names[i] + ".ckpt");
        models::save_model(art.fitted_models[i], ckpt.string());
        log_wrote(ckpt);
    }
    log_line({{"event", "done"},
              {"queries", rep.query_count},
              {"models", rep.results.size()},
              {"runtime_seconds", rep.runtime_seconds}});
    if (inv.format == "json")
        std::cout << bench::report_to_json(rep).dump(2) << "\n";
    else
        std::cout << bench::render_report_csv(rep);
    return 0;
}

int cmd_evaluate(const CommandInvocation& inv) {
    const bench::ExperimentConfig cfg = resolve_config(inv);
    return run_and_emit(cfg, inv);
}

int cmd_sweep(const CommandInvocation& inv) {
    bench::ExperimentConfig cfg = resolve_config(inv);
    force_all_kinds(cfg, inv);
    return run_and_emit(cfg, inv);
}

int cmd_report(const CommandInvocation& inv) {
    std::ifstream in(inv.in_path);
    if (!in) throw IoError("cannot open report " + inv.in_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfigError(std::string("report is not valid JSON: ") + e.what());
    }
    const bench::EvalReport rep = bench::report_from_json(j);
    const fs::path path = bench::emit_report(rep, inv.out_dir, bench::ReportFormat::csv);
    log_wrote(path);
    std::cout << bench::render_report_csv(rep);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CommandInvocation inv;
    CLI::App app{"recbench: session-based recommender benchmark"};
    app.require_subcommand(1);
    app.footer(model_defaults_table());

    const auto add_common = [&inv](CLI::App* sub, bool with_models) {
        sub->add_option("--config", inv.config_path, "experiment config JSON")
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", inv.seed, "master seed: dataset, models, random baseline");
        sub->add_option("--out", inv.out_dir, "output directory (default 'out')")
            ->envname("RECBENCH_OUT");
        sub->add_option("--jobs", inv.jobs,
                        "worker-count cap; execution is serialized for determinism")
            ->check(CLI::PositiveNumber);
        sub->add_flag("-v,--verbose", inv.verbose, "extra progress logs on stderr");
        if (with_models) {
            sub->add_option("--epochs", inv.epochs, "override epochs for every model");
            sub->add_option("--lr", inv.lr, "override learning rate for every model");
            sub->add_option("--batch", inv.batch, "override batch size for every model");
            sub->add_option("--format", inv.format, "what to print on stdout (default csv)")
                ->check(CLI::IsMember({"csv", "json"}));
            sub->footer(model_defaults_table());
        }
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
    synth->add_option("--items", inv.synth.n_items, "catalog size (default 200)");
    synth->add_option("--sessions", inv.synth.n_sessions, "session count (default 2000)");
    synth->add_option("--blocks", inv.synth.n_blocks, "planted item blocks (default 4)");
    synth->add_option("--noise", inv.synth.noise, "off-block probability (default 0.1)");
    synth->add_option("--features", inv.synth.n_features, "numeric features (default 4)");
    synth->add_option("--seed", inv.synth.seed, "dataset seed (default 1)");
    synth->add_option("--out", inv.out_dir, "output directory (default 'out')")
        ->envname("RECBENCH_OUT");
    synth->add_flag("-v,--verbose", inv.verbose, "extra progress logs on stderr");

    CLI::App* prepare =
        app.add_subcommand("prepare", "run the cleaning pipeline, write pipeline_report.json");
    add_common(prepare, false);
    CLI::App* graph =
        app.add_subcommand("graph", "build the train-split co-occurrence graph, write NDJSON");
    add_common(graph, false);
    CLI::App* train = app.add_subcommand("train", "fit the configured models, write checkpoints");
    add_common(train, true);
    CLI::App* evaluate = app.add_subcommand(
        "evaluate", "full experiment from a config: reports, pipeline report, checkpoints");
    add_common(evaluate, true);
    CLI::App* sweep = app.add_subcommand(
        "sweep", "evaluate all seven model kinds at their defaults on the configured data");
    add_common(sweep, true);
    CLI::App* report = app.add_subcommand("report", "re-render report.csv from a persisted JSON");
    report->add_option("--in", inv.in_path, "persisted report.json")
        ->required()
        ->check(CLI::ExistingFile);
    report->add_option("--out", inv.out_dir, "output directory (default 'out')")
        ->envname("RECBENCH_OUT");
    report->add_flag("-v,--verbose", inv.verbose, "extra progress logs on stderr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    inv.subcommand = app.get_subcommands().front()->get_name();
    log_line({{"event", "invocation"},
              {"subcommand", inv.subcommand},
              {"out", inv.out_dir},
              {"jobs", inv.jobs}});
    try {
        if (inv.subcommand == "synth") return cmd_synth(inv);
        if (inv.subcommand == "prepare") return cmd_prepare(inv);
        if (inv.subcommand == "graph") return cmd_graph(inv);
        if (inv.subcommand == "train") return cmd_train(inv);
        if (inv.subcommand == "evaluate") return cmd_evaluate(inv);
        if (inv.subcommand == "sweep") return cmd_sweep(inv);
        if (inv.subcommand == "report") return cmd_report(inv);
        std::cerr << "unknown subcommand\n";
        return 2;
    } catch (const Error& e) {
        log_line({{"level", "error"}, {"subcommand", inv.subcommand}, {"message", e.what()}});
        return 1;
    } catch (const std::exception& e) {
        log_line({{"level", "error"}, {"subcommand", inv.subcommand}, {"message", e.what()}});
        return 1;
    }
}
