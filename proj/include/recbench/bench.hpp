#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "recbench/errors.hpp"
#include "recbench/graph.hpp"
#include "recbench/ingest.hpp"
#include "recbench/metrics.hpp"
#include "recbench/models/models.hpp"
#include "recbench/preprocess.hpp"
#include "recbench/rng.hpp"
#include "recbench/types.hpp"

namespace recbench::bench {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// One full experiment: a dataset (CSV pair or synthetic recipe), the models
// to compare, and the evaluation protocol.
struct ExperimentConfig {
    std::string items_csv;     // both empty: generate the synthetic dataset
    std::string sessions_csv;  // instead of reading files
    SyntheticConfig synthetic;
    PipelineConfig pipeline;
    std::vector<models::ModelConfig> model_configs;
    int k_max = 10;
    int k_eval = 10;               // rank cutoff for the confusion-matrix metrics
    double holdout_fraction = 0.3;  // tail share of each test session held out
    std::uint64_t seed = 1;         // drives the random baseline
    std::string out_dir;            // where emit_report and the CLI put artifacts
    // name of a fitted model whose embedding space measures ILD for every
    // model; empty: each model is measured in its own space
    std::string ild_reference;

    void validate() const {
        if (model_configs.empty())
            throw InvalidConfigError("experiment needs at least one model");
        for (const models::ModelConfig& mc : model_configs) mc.validate();
        if (k_max < 1) throw InvalidConfigError("k_max must be >= 1");
        if (k_eval < 1 || k_eval > k_max)
            throw InvalidConfigError("k_eval must be in [1, k_max]");
        if (!(holdout_fraction > 0.0) || holdout_fraction >= 1.0)
            throw InvalidConfigError("holdout_fraction must be in (0,1)");
        if (items_csv.empty() != sessions_csv.empty())
            throw InvalidConfigError("items_csv and sessions_csv must be given together");
    }
};

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
    nlohmann::json mj = nlohmann::json::array();
    for (const models::ModelConfig& mc : c.model_configs) mj.push_back(models::config_to_json(mc));
    return nlohmann::json{
        {"items_csv", c.items_csv},
        {"sessions_csv", c.sessions_csv},
        {"synthetic",
         {{"n_items", c.synthetic.n_items},
          {"n_sessions", c.synthetic.n_sessions},
          {"n_blocks", c.synthetic.n_blocks},
          {"noise", c.synthetic.noise},
          {"seed", c.synthetic.seed},
          {"n_features", c.synthetic.n_features}}},
        {"pipeline",
         {{"gap_seconds", c.pipeline.gap_seconds},
          {"split_ratio", c.pipeline.split_ratio},
          {"reduce_dim", c.pipeline.reduce_dim},
          {"one_hot_max_cardinality", c.pipeline.one_hot_max_cardinality}}},
        {"models", mj},
        {"k_max", c.k_max},
        {"k_eval", c.k_eval},
        {"holdout_fraction", c.holdout_fraction},
        {"seed", c.seed},
        {"out_dir", c.out_dir},
        {"ild_reference", c.ild_reference}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.items_csv = j.value("items_csv", c.items_csv);
    c.sessions_csv = j.value("sessions_csv", c.sessions_csv);
    if (j.contains("synthetic")) {
        const nlohmann::json& s = j.at("synthetic");
        c.synthetic.n_items = s.value("n_items", c.synthetic.n_items);
        c.synthetic.n_sessions = s.value("n_sessions", c.synthetic.n_sessions);
        c.synthetic.n_blocks = s.value("n_blocks", c.synthetic.n_blocks);
        c.synthetic.noise = s.value("noise", c.synthetic.noise);
        c.synthetic.seed = s.value("seed", c.synthetic.seed);
        c.synthetic.n_features = s.value("n_features", c.synthetic.n_features);
    }
    if (j.contains("pipeline")) {
        const nlohmann::json& p = j.at("pipeline");
        c.pipeline.gap_seconds = p.value("gap_seconds", c.pipeline.gap_seconds);
        c.pipeline.split_ratio = p.value("split_ratio", c.pipeline.split_ratio);
        c.pipeline.reduce_dim = p.value("reduce_dim", c.pipeline.reduce_dim);
        c.pipeline.one_hot_max_cardinality =
            p.value("one_hot_max_cardinality", c.pipeline.one_hot_max_cardinality);
    }
    if (j.contains("models"))
        for (const nlohmann::json& mj : j.at("models"))
            c.model_configs.push_back(models::config_from_json(mj));
    c.k_max = j.value("k_max", c.k_max);
    c.k_eval = j.value("k_eval", c.k_eval);
    c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.ild_reference = j.value("ild_reference", c.ild_reference);
    return c;
}

// ---------------------------------------------------------------------------
// Evaluation protocol: leave-tail-out queries
// ---------------------------------------------------------------------------

// One evaluation query: everything before the held-out tail is context, the
// distinct tail items are what a perfect recommender would retrieve.
struct Query {
    std::vector<int> context_items;  // oldest first
    std::vector<int> relevant;       // distinct, ascending
};

// The last max(1, ceil(fraction * |s|)) items of every session with at least
// two items become the relevant set (capped so one context item always
// remains); shorter sessions are skipped and counted.
inline std::vector<Query> make_queries(const std::vector<IndexedSession>& sessions,
                                       double holdout_fraction,
                                       std::size_t* skipped = nullptr) {
    if (!(holdout_fraction > 0.0) || holdout_fraction >= 1.0)
        throw InvalidConfigError("holdout_fraction must be in (0,1)");
    std::vector<Query> out;
    std::size_t dropped = 0;
    for (const IndexedSession& s : sessions) {
        if (s.items.size() < 2) {
            ++dropped;
            continue;
        }
        const auto n = s.items.size();
        auto h = static_cast<std::size_t>(
            std::ceil(holdout_fraction * static_cast<double>(n) - 1e-9));
        h = std::clamp<std::size_t>(h, 1, n - 1);
        Query q;
        q.context_items.assign(s.items.begin(), s.items.end() - static_cast<std::ptrdiff_t>(h));
        const std::set<int> rel(s.items.end() - static_cast<std::ptrdiff_t>(h), s.items.end());
        q.relevant.assign(rel.begin(), rel.end());
        out.push_back(std::move(q));
    }
    if (skipped != nullptr) *skipped = dropped;
    if (out.empty()) throw NoUsableQueriesError();
    return out;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct ModelResult {
    std::string name;
    std::vector<metrics::EvalRow> rows;  // k = 1..k_max, means over queries
    double accuracy_at_k_eval = 0.0;     // confusion-matrix metrics at k_eval
    double precision_at_k_eval = 0.0;
    double recall_at_k_eval = 0.0;
    double f1_at_k_eval = 0.0;
    double fit_seconds = 0.0;            // 0 for baselines
    std::vector<double> training_log;    // empty for baselines
};

struct EvalReport {
    std::vector<ModelResult> results;
    std::size_t query_count = 0;
    std::size_t skipped_sessions = 0;
    int k_max = 0;
    int k_eval = 0;
    std::uint64_t seed = 0;
    std::uint64_t config_fingerprint = 0;
    std::uint64_t data_fingerprint = 0;
    std::string aggregation = "macro-over-sessions";
    double runtime_seconds = 0.0;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Descending-score slate with the shared tie rule, excluded items dropped
// before the cutoff.
inline RankedList slate_from_scores(const std::vector<double>& scores,
                                    const std::vector<int>& excluded, int k) {
    std::vector<bool> drop(scores.size(), false);
    for (int i : excluded)
        if (i >= 0 && static_cast<std::size_t>(i) < scores.size()) drop[i] = true;
    std::vector<int> order;
    order.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (!drop[i]) order.push_back(static_cast<int>(i));
    std::sort(order.begin(), order.end(), [&scores](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    RankedList out;
    const std::size_t take = std::min<std::size_t>(order.size(), static_cast<std::size_t>(k));
    out.items.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    out.scores.reserve(take);
    for (int item : out.items) out.scores.push_back(scores[item]);
    return out;
}

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error("stage " + name + ": " + e.what());
    }
}

}  // namespace detail

// Run one scorer over all queries: k-sweep means of accuracy@k / ILD@k plus
// confusion-matrix metrics at k_eval. `window` limits how much (most recent)
// context is excluded from the slate, mirroring the scorer's own context
// window; window <= 0 excludes the whole context. This is the single
// evaluation path shared by trained models, baselines, and test oracles.
template <typename ScoreFn>
ModelResult evaluate_scorer(std::string name, const std::vector<Query>& queries, int n_items,
                            int k_max, int k_eval, int window, const Matrix& ild_embeddings,
                            ScoreFn&& score_fn) {
    if (queries.empty()) throw NoUsableQueriesError();
    if (k_max < 1 || k_max > n_items) throw InvalidConfigError("k_max must be in [1, n_items]");
    if (k_eval < 1 || k_eval > k_max) throw InvalidConfigError("k_eval must be in [1, k_max]");
    ModelResult res;
    res.name = std::move(name);
    res.rows.resize(static_cast<std::size_t>(k_max));
    for (int k = 1; k <= k_max; ++k) res.rows[static_cast<std::size_t>(k - 1)].k = k;

    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        const Query& q = queries[qi];
        std::vector<int> excluded = q.context_items;
        if (window > 0 && excluded.size() > static_cast<std::size_t>(window))
            excluded.erase(excluded.begin(),
                           excluded.end() - static_cast<std::ptrdiff_t>(window));
        const std::vector<double> scores = score_fn(qi, q);
        if (scores.size() != static_cast<std::size_t>(n_items))
            throw ShapeMismatchError("scorer returned " + std::to_string(scores.size()) +
                                     " scores for a catalog of " + std::to_string(n_items));
        const RankedList slate = detail::slate_from_scores(scores, excluded, k_max);
        if (slate.items.size() < static_cast<std::size_t>(k_max))
            throw InvalidConfigError(
                "k_max exceeds the catalog remaining after context exclusion");
        for (int k = 1; k <= k_max; ++k) {
            metrics::EvalRow& row = res.rows[static_cast<std::size_t>(k - 1)];
            row.accuracy_at_k += metrics::accuracy_at_k(slate, q.relevant, k);
            row.ild_at_k += metrics::ild_at_k(slate, k, ild_embeddings);
        }
        const std::vector<int> top_eval(slate.items.begin(), slate.items.begin() + k_eval);
        const metrics::ConfusionCounts c =
            metrics::confusion_counts(top_eval, q.relevant, n_items);
        res.accuracy_at_k_eval += metrics::accuracy(c);
        res.precision_at_k_eval += metrics::precision(c);
        res.recall_at_k_eval += metrics::recall(c);
        res.f1_at_k_eval += metrics::f1(c);
    }

    const double nq = static_cast<double>(queries.size());
    for (metrics::EvalRow& row : res.rows) {
        row.accuracy_at_k /= nq;
        row.ild_at_k /= nq;
    }
    res.accuracy_at_k_eval /= nq;
    res.precision_at_k_eval /= nq;
    res.recall_at_k_eval /= nq;
    res.f1_at_k_eval /= nq;
    return res;
}

// Per-item frequency over the training sessions: the popularity baseline's
// score vector (shared by every query).
inline std::vector<double> popularity_scores(const std::vector<IndexedSession>& train,
                                             int n_items) {
    std::vector<double> counts(static_cast<std::size_t>(n_items), 0.0);
    for (const IndexedSession& s : train)
        for (int i : s.items)
            if (i >= 0 && i < n_items) counts[static_cast<std::size_t>(i)] += 1.0;
    return counts;
}

// ---------------------------------------------------------------------------
// The full experiment
// ---------------------------------------------------------------------------

// Intermediate products of a run, for callers (the CLI) that persist
// checkpoints and the preprocessing report alongside the metrics.
struct RunArtifacts {
    PipelineReport pipeline;
    PreprocessedData data;
    std::vector<std::string> model_names;         // parallel to fitted_models
    std::vector<models::TrainedModel> fitted_models;
};

inline EvalReport run_experiment(const ExperimentConfig& cfg, RunArtifacts* artifacts = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::stage("config", [&] { cfg.validate(); return 0; });

    PipelineReport prep;
    const PreprocessedData data = detail::stage("preprocess", [&] {
        if (cfg.items_csv.empty()) {
            const SyntheticDataset synth = generate_synthetic(cfg.synthetic);
            return preprocess_sessions(synth.sessions, synth.items, cfg.pipeline, prep);
        }
        std::vector<ItemRecord> items = read_items_csv(cfg.items_csv);
        std::vector<Session> sessions = read_sessions_csv(cfg.sessions_csv);
        return preprocess_sessions(std::move(sessions), std::move(items), cfg.pipeline, prep);
    });
    const int n = data.n_items();
    detail::stage("config", [&] {
        if (cfg.k_max > n)
            throw InvalidConfigError("k_max " + std::to_string(cfg.k_max) +
                                     " exceeds the catalog of " + std::to_string(n));
        return 0;
    });

    const IndexedSplit split = detail::stage(
        "split", [&] { return models::detail::split_indexed(data.sessions,
                                                            cfg.pipeline.split_ratio); });
    const ItemGraph graph = detail::stage(
        "graph", [&] { return build_graph(split.train, data.item_categories); });
    std::size_t skipped = 0;
    const std::vector<Query> queries = detail::stage(
        "queries", [&] { return make_queries(split.test, cfg.holdout_fraction, &skipped); });

    EvalReport rep;
    rep.query_count = queries.size();
    rep.skipped_sessions = skipped;
    rep.k_max = cfg.k_max;
    rep.k_eval = cfg.k_eval;
    rep.seed = cfg.seed;
    rep.config_fingerprint = detail::fnv1a(experiment_to_json(cfg).dump());
    rep.data_fingerprint = models::detail::data_fingerprint(data);

    // fit everything first so a reference embedding space can come from any
    // model in the run
    std::vector<models::TrainedModel> fitted;
    std::vector<std::string> names;
    std::vector<double> fit_seconds;
    for (const models::ModelConfig& mc : cfg.model_configs) {
        std::string name = models::to_string(mc.kind);
        int copy = 1;
        while (std::find(names.begin(), names.end(), name) != names.end())
            name = std::string(models::to_string(mc.kind)) + "_" + std::to_string(++copy);
        const auto f0 = std::chrono::steady_clock::now();
        fitted.push_back(detail::stage("fit " + name, [&] {
            const bool wants_graph =
                mc.kind == models::ModelKind::gnn || mc.kind == models::ModelKind::siamese;
            return models::fit(mc, data, wants_graph ? &graph : nullptr);
        }));
        fit_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - f0)
                                  .count());
        names.push_back(std::move(name));
    }

    const Matrix* reference = nullptr;
    if (!cfg.ild_reference.empty()) {
        const auto it = std::find(names.begin(), names.end(), cfg.ild_reference);
        if (it == names.end())
            throw Error("stage config: invalid config: ild_reference '" + cfg.ild_reference +
                        "' is not a model in this run");
        reference = &fitted[static_cast<std::size_t>(it - names.begin())].item_embeddings;
    }

    for (std::size_t i = 0; i < fitted.size(); ++i) {
        const models::TrainedModel& m = fitted[i];
        const Matrix& emb = reference != nullptr ? *reference : m.item_embeddings;
        ModelResult res = detail::stage("evaluate " + names[i], [&] {
            return evaluate_scorer(
                names[i], queries, n, cfg.k_max, cfg.k_eval, m.config.max_len, emb,
                [&m, n](std::size_t, const Query& q) {
                    const models::RecContext ctx =
                        models::RecContext::from_items(q.context_items, m.config.max_len, n);
                    return models::score(m, ctx);
                });
        });
        res.fit_seconds = fit_seconds[i];
        res.training_log = m.training_log;
        rep.results.push_back(std::move(res));
    }

    // reference-free baselines: frequency ranking and seeded noise, measured
    // in the raw feature space unless a reference model is pinned
    const Matrix& base_emb = reference != nullptr ? *reference : data.feature_matrix;
    const std::vector<double> popularity = popularity_scores(split.train, n);
    rep.results.push_back(detail::stage("evaluate popularity", [&] {
        return evaluate_scorer("popularity", queries, n, cfg.k_max, cfg.k_eval, 0, base_emb,
                               [&popularity](std::size_t, const Query&) { return popularity; });
    }));
    rep.results.push_back(detail::stage("evaluate random", [&] {
        return evaluate_scorer(
            "random", queries, n, cfg.k_max, cfg.k_eval, 0, base_emb,
            [&cfg, n](std::size_t qi, const Query&) {
                Rng rng(Rng::splitmix(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (qi + 1))));
                std::vector<double> s(static_cast<std::size_t>(n));
                for (double& v : s) v = rng.uniform01();
                return s;
            });
    }));

    rep.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (artifacts != nullptr) {
        artifacts->pipeline = prep;
        artifacts->data = data;
        artifacts->model_names = std::move(names);
        artifacts->fitted_models = std::move(fitted);
    }
    return rep;
}

inline nlohmann::json pipeline_report_to_json(const PipelineReport& r) {
    return nlohmann::json{{"events_in", r.events_in},
                          {"events_dropped", r.events_dropped},
                          {"duplicates_removed", r.duplicates_removed},
                          {"numeric_imputations", r.numeric_imputations},
                          {"category_imputations", r.category_imputations},
                          {"items_synthesized", r.items_synthesized},
                          {"dropped_columns", r.dropped_columns},
                          {"explained_variance_ratios", r.explained_variance_ratios},
                          {"session_count", r.session_count},
                          {"n_items", r.n_items},
                          {"feature_dim", r.feature_dim}};
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& rep) {
    nlohmann::json mj = nlohmann::json::array();
    for (const ModelResult& r : rep.results) {
        nlohmann::json rows = nlohmann::json::array();
        for (const metrics::EvalRow& row : r.rows)
            rows.push_back({{"k", row.k},
                            {"accuracy", row.accuracy_at_k},
                            {"ild", row.ild_at_k}});
        mj.push_back({{"name", r.name},
                      {"rows", rows},
                      {"accuracy_at_k_eval", r.accuracy_at_k_eval},
                      {"precision_at_k_eval", r.precision_at_k_eval},
                      {"recall_at_k_eval", r.recall_at_k_eval},
                      {"f1_at_k_eval", r.f1_at_k_eval},
                      {"fit_seconds", r.fit_seconds},
                      {"training_log", r.training_log}});
    }
    return nlohmann::json{{"schema", "recbench-report-v1"},
                          {"config_fingerprint", rep.config_fingerprint},
                          {"data_fingerprint", rep.data_fingerprint},
                          {"seed", rep.seed},
                          {"query_count", rep.query_count},
                          {"skipped_sessions", rep.skipped_sessions},
                          {"k_max", rep.k_max},
                          {"k_eval", rep.k_eval},
                          {"aggregation", rep.aggregation},
                          {"runtime_seconds", rep.runtime_seconds},
                          {"models", mj}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport rep;
    rep.config_fingerprint = j.at("config_fingerprint").get<std::uint64_t>();
    rep.data_fingerprint = j.at("data_fingerprint").get<std::uint64_t>();
    rep.seed = j.at("seed").get<std::uint64_t>();
    rep.query_count = j.at("query_count").get<std::size_t>();
    rep.skipped_sessions = j.at("skipped_sessions").get<std::size_t>();
    rep.k_max = j.at("k_max").get<int>();
    rep.k_eval = j.at("k_eval").get<int>();
    rep.aggregation = j.at("aggregation").get<std::string>();
    rep.runtime_seconds = j.at("runtime_seconds").get<double>();
    for (const nlohmann::json& mj : j.at("models")) {
        ModelResult r;
        r.name = mj.at("name").get<std::string>();
        for (const nlohmann::json& rj : mj.at("rows")) {
            metrics::EvalRow row;
            row.k = rj.at("k").get<int>();
            row.accuracy_at_k = rj.at("accuracy").get<double>();
            row.ild_at_k = rj.at("ild").get<double>();
            r.rows.push_back(row);
        }
        r.accuracy_at_k_eval = mj.at("accuracy_at_k_eval").get<double>();
        r.precision_at_k_eval = mj.at("precision_at_k_eval").get<double>();
        r.recall_at_k_eval = mj.at("recall_at_k_eval").get<double>();
        r.f1_at_k_eval = mj.at("f1_at_k_eval").get<double>();
        r.fit_seconds = mj.at("fit_seconds").get<double>();
        r.training_log = mj.at("training_log").get<std::vector<double>>();
        rep.results.push_back(std::move(r));
    }
    return rep;
}

// CSV mirror of the per-model k-sweep tables: fractions rendered as
// percentages with two decimals.
inline std::string render_report_csv(const EvalReport& rep) {
    std::string out = "model,k,accuracy_pct,ild_pct\n";
    char buf[128];
    for (const ModelResult& r : rep.results) {
        for (const metrics::EvalRow& row : r.rows) {
            std::snprintf(buf, sizeof(buf), "%s,%d,%.2f,%.2f\n", r.name.c_str(), row.k,
                          row.accuracy_at_k * 100.0, row.ild_at_k * 100.0);
            out += buf;
        }
    }
    return out;
}

namespace detail {

// Full write to a sibling temp file, then an atomic rename onto the target.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
        os << content;
        os.flush();
        if (!os) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string());
}

}  // namespace detail

enum class ReportFormat { csv, json };

// Writes report.csv or report.json into `dir` and returns the written path.
inline std::filesystem::path emit_report(const EvalReport& rep, const std::filesystem::path& dir,
                                         ReportFormat format) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (format == ReportFormat::csv) {
        const std::filesystem::path path = dir / "report.csv";
        detail::write_text_atomic(path, render_report_csv(rep));
        return path;
    }
    const std::filesystem::path path = dir / "report.json";
    detail::write_text_atomic(path, report_to_json(rep).dump(2) + "\n");
    return path;
}

}  // namespace recbench::bench
