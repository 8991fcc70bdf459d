#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "recbench/recbench.hpp"

using namespace recbench;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path case_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "recbench_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunResult run_cli(const std::string& args, const fs::path& workdir,
                  const std::string& env_prefix = "") {
    const fs::path out_file = workdir / "_stdout.txt";
    const fs::path err_file = workdir / "_stderr.txt";
    const std::string cmd = "cd '" + workdir.string() + "' && " + env_prefix + "'" +
                            RECBENCH_CLI + "' " + args + " > '" + out_file.string() + "' 2> '" +
                            err_file.string() + "'";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WEXITSTATUS(status);
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

void write_tiny_config(const fs::path& path, int k_max, nlohmann::json models) {
    nlohmann::json j{{"synthetic", {{"n_items", 20},
                                    {"n_sessions", 80},
                                    {"n_blocks", 2},
                                    {"noise", 0.1},
                                    {"seed", 3},
                                    {"n_features", 4}}},
                     {"k_max", k_max},
                     {"k_eval", k_max},
                     {"holdout_fraction", 0.4},
                     {"models", std::move(models)}};
    std::ofstream(path) << j.dump(2);
}

std::size_t line_count(const std::string& s) {
    std::size_t n = 0;
    for (char c : s)
        if (c == '\n') ++n;
    return n;
}

// last nonempty stderr line should be a JSON log record
nlohmann::json last_log(const std::string& err) {
    std::istringstream in(err);
    std::string line;
    std::string last;
    while (std::getline(in, line))
        if (!line.empty()) last = line;
    return nlohmann::json::parse(last);
}

}  // namespace

TEST_CASE("help exits 0 and documents every flag with defaults", "[cli]") {
    const fs::path dir = case_dir("help");
    const RunResult top = run_cli("--help", dir);
    REQUIRE(top.exit_code == 0);
    for (const char* sub : {"synth", "prepare", "graph", "train", "evaluate", "sweep", "report"})
        REQUIRE_THAT(top.out, ContainsSubstring(sub));
    // the per-kind defaults table rides along on the help text
    REQUIRE_THAT(top.out, ContainsSubstring("rnn") && ContainsSubstring("0.01") &&
                              ContainsSubstring("transformer") && ContainsSubstring("0.0001") &&
                              ContainsSubstring("margin=0.5") && ContainsSubstring("epochs"));

    const RunResult sweep_help = run_cli("sweep --help", dir);
    REQUIRE(sweep_help.exit_code == 0);
    for (const char* flag :
         {"--config", "--seed", "--out", "--jobs", "--format", "--epochs", "--lr", "--batch"})
        REQUIRE_THAT(sweep_help.out, ContainsSubstring(flag));
    REQUIRE_THAT(sweep_help.out, ContainsSubstring("bottleneck=16"));
}

TEST_CASE("usage errors exit 2 with usage text", "[cli]") {
    const fs::path dir = case_dir("usage");
    const RunResult missing = run_cli("evaluate --config does_not_exist.json", dir);
    REQUIRE(missing.exit_code == 2);
    REQUIRE_THAT(missing.err, ContainsSubstring("does_not_exist.json"));
    REQUIRE_THAT(missing.err, ContainsSubstring("Usage"));

    REQUIRE(run_cli("sweep --bogus-flag", dir).exit_code == 2);
    REQUIRE(run_cli("", dir).exit_code == 2);
    REQUIRE(run_cli("report", dir).exit_code == 2);  // --in is required
}

TEST_CASE("synth writes a seeded dataset into the output directory", "[cli]") {
    const fs::path dir = case_dir("synth");
    const RunResult r =
        run_cli("synth --items 30 --sessions 60 --blocks 2 --seed 5 --out syn", dir);
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(dir / "syn" / "items.csv"));
    REQUIRE(fs::exists(dir / "syn" / "sessions.csv"));
    REQUIRE(read_items_csv((dir / "syn" / "items.csv").string()).size() == 30);
    REQUIRE(read_sessions_csv((dir / "syn" / "sessions.csv").string()).size() == 60);
    const nlohmann::json out = nlohmann::json::parse(r.out);
    REQUIRE(out.at("n_items") == 30);
    REQUIRE(out.at("n_sessions") == 60);

    SECTION("the environment variable supplies the default output directory") {
        const RunResult env_run =
            run_cli("synth --items 12 --sessions 20 --blocks 2 --seed 5", dir,
                    "RECBENCH_OUT='envout' ");
        REQUIRE(env_run.exit_code == 0);
        REQUIRE(fs::exists(dir / "envout" / "items.csv"));
    }
}

TEST_CASE("sweep runs end to end, deterministically, and report re-renders it", "[cli]") {
    const fs::path dir = case_dir("sweep");
    write_tiny_config(dir / "c.json", 5, nlohmann::json::array());

    const RunResult a = run_cli("sweep --config c.json --epochs 2 --seed 7 --out runA", dir);
    REQUIRE(a.exit_code == 0);
    const std::string csv = slurp(dir / "runA" / "report.csv");
    REQUIRE(a.out == csv);
    // 7 learners + popularity + random, each with k_max rows, plus the header
    REQUIRE(line_count(csv) == 1 + 9 * 5);
    REQUIRE(csv.rfind("model,k,accuracy_pct,ild_pct\n", 0) == 0);

    const nlohmann::json rj = nlohmann::json::parse(slurp(dir / "runA" / "report.json"));
    REQUIRE(rj.at("models").size() == 9);
    REQUIRE(rj.at("models")[0].at("name") == "cnn");
    for (const auto& m : rj.at("models")) REQUIRE(m.at("rows").size() == 5);
    const nlohmann::json pj = nlohmann::json::parse(slurp(dir / "runA" / "pipeline_report.json"));
    REQUIRE(pj.at("n_items") == 20);
    for (const char* kind :
         {"cnn", "rnn", "gnn", "autoencoder", "transformer", "ncf", "siamese"}) {
        REQUIRE(fs::exists(dir / "runA" / (std::string(kind) + ".ckpt")));
        REQUIRE(fs::exists(dir / "runA" / (std::string(kind) + ".ckpt.json")));
    }
    // resolved config (with all seven kinds) is logged as one JSON line
    bool config_logged = false;
    std::istringstream err_in(a.err);
    std::string line;
    while (std::getline(err_in, line)) {
        if (line.empty()) continue;
        const nlohmann::json log = nlohmann::json::parse(line);
        if (log.value("event", "") == "config")
            config_logged = log.at("config").at("models").size() == 7;
    }
    REQUIRE(config_logged);

    const RunResult b = run_cli("sweep --config c.json --epochs 2 --seed 7 --out runB", dir);
    REQUIRE(b.exit_code == 0);
    REQUIRE(slurp(dir / "runB" / "report.csv") == csv);
    REQUIRE(slurp(dir / "runB" / "cnn.ckpt") == slurp(dir / "runA" / "cnn.ckpt"));
    REQUIRE(slurp(dir / "runB" / "siamese.ckpt.json") == slurp(dir / "runA" / "siamese.ckpt.json"));

    const RunResult re = run_cli("report --in runA/report.json --out runC", dir);
    REQUIRE(re.exit_code == 0);
    REQUIRE(slurp(dir / "runC" / "report.csv") == csv);
    REQUIRE(re.out == csv);
}

TEST_CASE("evaluate respects --format and fails with a stage tag", "[cli]") {
    const fs::path dir = case_dir("evaluate");
    nlohmann::json cnn = models::config_to_json(
        models::ModelConfig::defaults(models::ModelKind::cnn));
    cnn["epochs"] = 2;
    cnn["embed_dim"] = 8;
    cnn["hidden"] = 8;
    write_tiny_config(dir / "c.json", 4, nlohmann::json::array({cnn}));

    const RunResult r = run_cli("evaluate --config c.json --format json --out run", dir);
    REQUIRE(r.exit_code == 0);
    const nlohmann::json printed = nlohmann::json::parse(r.out);
    REQUIRE(printed.at("models").size() == 3);
    REQUIRE(printed.at("models")[0].at("name") == "cnn");
    REQUIRE(printed.at("models")[1].at("name") == "popularity");
    REQUIRE(printed.at("models")[2].at("name") == "random");
    REQUIRE(fs::exists(dir / "run" / "report.csv"));

    SECTION("runtime failures exit 1 and name the failing stage") {
        write_tiny_config(dir / "big.json", 50, nlohmann::json::array({cnn}));
        const RunResult bad = run_cli("evaluate --config big.json --out runbad", dir);
        REQUIRE(bad.exit_code == 1);
        const nlohmann::json log = last_log(bad.err);
        REQUIRE(log.at("level") == "error");
        REQUIRE_THAT(log.at("message").get<std::string>(),
                     ContainsSubstring("stage config"));
    }
}

TEST_CASE("train writes checkpoints and nothing else", "[cli]") {
    const fs::path dir = case_dir("train");
    nlohmann::json cnn =
        models::config_to_json(models::ModelConfig::defaults(models::ModelKind::cnn));
    cnn["epochs"] = 2;
    cnn["embed_dim"] = 8;
    cnn["hidden"] = 8;
    nlohmann::json gnn =
        models::config_to_json(models::ModelConfig::defaults(models::ModelKind::gnn));
    gnn["epochs"] = 2;
    gnn["embed_dim"] = 8;
    write_tiny_config(dir / "c.json", 5, nlohmann::json::array({cnn, gnn}));

    const RunResult r = run_cli("train --config c.json --out ck", dir);
    REQUIRE(r.exit_code == 0);
    REQUIRE(nlohmann::json::parse(r.out).at("checkpoints").size() == 2);
    REQUIRE(fs::exists(dir / "ck" / "cnn.ckpt"));
    REQUIRE(fs::exists(dir / "ck" / "gnn.ckpt"));
    REQUIRE_FALSE(fs::exists(dir / "ck" / "report.csv"));

    // the saved model is loadable through the library
    const models::TrainedModel m = models::load_model((dir / "ck" / "cnn.ckpt").string());
    REQUIRE(m.config.kind == models::ModelKind::cnn);
    REQUIRE(m.n_items == 20);
}

TEST_CASE("prepare and graph emit their artifacts", "[cli]") {
    const fs::path dir = case_dir("prepare_graph");
    write_tiny_config(dir / "c.json", 5, nlohmann::json::array());

    const RunResult prep = run_cli("prepare --config c.json --out art", dir);
    REQUIRE(prep.exit_code == 0);
    REQUIRE(fs::exists(dir / "art" / "pipeline_report.json"));
    REQUIRE(nlohmann::json::parse(prep.out).at("n_items") == 20);

    const RunResult graph = run_cli("graph --config c.json --out art", dir);
    REQUIRE(graph.exit_code == 0);
    const fs::path gpath = dir / "art" / "graph.ndjson";
    REQUIRE(fs::exists(gpath));
    const ItemGraph g = load_graph(gpath.string());
    REQUIRE(g.node_count() > 0);
    REQUIRE(g.node_count() <= 20);
    REQUIRE(g.edge_count() > 0);
    REQUIRE(nlohmann::json::parse(graph.out).at("edges") == g.edge_count());
}
