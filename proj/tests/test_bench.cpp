#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "recbench/bench.hpp"

using namespace recbench;
using Catch::Matchers::ContainsSubstring;

namespace {

IndexedSession make_session(int id, std::vector<int> items, std::int64_t ts) {
    IndexedSession s;
    s.session_id = "s" + std::to_string(id);
    s.items = std::move(items);
    s.start_ts = ts;
    s.end_ts = ts + static_cast<std::int64_t>(s.items.size());
    return s;
}

models::ModelConfig tuned_config(models::ModelKind k) {
    models::ModelConfig c = models::ModelConfig::defaults(k);
    c.embed_dim = 16;
    c.hidden = 32;
    c.bottleneck = 8;
    using MK = models::ModelKind;
    switch (k) {
        case MK::cnn: c.lr = 0.003; c.epochs = 8; break;
        case MK::rnn: c.lr = 0.01; c.epochs = 5; break;
        case MK::gnn: c.lr = 0.05; c.epochs = 30; break;
        case MK::autoencoder: c.lr = 0.01; c.epochs = 30; break;
        case MK::transformer: c.lr = 0.002; c.epochs = 5; break;
        case MK::ncf: c.lr = 0.005; c.epochs = 10; break;
        case MK::siamese: c.lr = 0.02; c.epochs = 30; break;
    }
    return c;
}

// the planted four-block dataset every full-run test uses
SyntheticConfig planted_recipe() { return SyntheticConfig{40, 400, 4, 0.1, 1, 4}; }

bench::ExperimentConfig full_run_config() {
    bench::ExperimentConfig cfg;
    cfg.synthetic = planted_recipe();
    using MK = models::ModelKind;
    for (MK k : {MK::cnn, MK::rnn, MK::gnn, MK::autoencoder, MK::transformer, MK::ncf,
                 MK::siamese})
        cfg.model_configs.push_back(tuned_config(k));
    cfg.holdout_fraction = 0.5;
    cfg.seed = 9;
    return cfg;
}

Matrix matrix_from(std::vector<std::vector<double>> rows) {
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m.at(r, c) = rows[r][c];
    return m;
}

bench::EvalReport sample_report() {
    bench::EvalReport rep;
    rep.query_count = 2;
    rep.skipped_sessions = 1;
    rep.k_max = 3;
    rep.k_eval = 2;
    rep.seed = 77;
    rep.config_fingerprint = 0x1234abcdULL;
    rep.data_fingerprint = 0xfeed5678ULL;
    rep.runtime_seconds = 1.5;
    bench::ModelResult r1;
    r1.name = "alpha";
    r1.rows = {{1, 0.8612, 0.0}, {2, 0.5, 0.076956}, {3, 1.0 / 3.0, 0.25}};
    r1.accuracy_at_k_eval = 0.7;
    r1.precision_at_k_eval = 0.6;
    r1.recall_at_k_eval = 0.5;
    r1.f1_at_k_eval = 0.4;
    r1.fit_seconds = 1.25;
    r1.training_log = {1.0, 0.5};
    bench::ModelResult r2;
    r2.name = "beta";
    r2.rows = {{1, 0.0, 0.0}, {2, 1.0, 0.999}, {3, 0.005, 1.0}};
    rep.results = {r1, r2};
    return rep;
}

}  // namespace

TEST_CASE("make_queries holds out the session tail", "[bench]") {
    const std::vector<IndexedSession> sessions = {
        make_session(1, {0, 1, 2, 3}, 10),
        make_session(2, {4, 5}, 20),
        make_session(3, {7, 8, 9, 9}, 30),
        make_session(4, {42}, 40),
        make_session(5, {3, 1, 2, 0, 9}, 50),
    };

    std::size_t skipped = 0;
    const std::vector<bench::Query> q3 = bench::make_queries(sessions, 0.3, &skipped);
    REQUIRE(q3.size() == 4);
    REQUIRE(skipped == 1);
    // ceil(0.3 * 4) = 2 held-out items
    REQUIRE(q3[0].context_items == std::vector<int>{0, 1});
    REQUIRE(q3[0].relevant == std::vector<int>{2, 3});
    // a two-item session still leaves one context item
    REQUIRE(q3[1].context_items == std::vector<int>{4});
    REQUIRE(q3[1].relevant == std::vector<int>{5});
    // duplicate tail items collapse into one relevant entry
    const std::vector<bench::Query> q5 =
        bench::make_queries({sessions[2]}, 0.5, nullptr);
    REQUIRE(q5[0].context_items == std::vector<int>{7, 8});
    REQUIRE(q5[0].relevant == std::vector<int>{9});
    // relevant sets come back sorted ascending regardless of session order
    const std::vector<bench::Query> q4 = bench::make_queries({sessions[4]}, 0.4, nullptr);
    REQUIRE(q4[0].context_items == std::vector<int>{3, 1, 2});
    REQUIRE(q4[0].relevant == std::vector<int>{0, 9});
    // a huge fraction still leaves one context item
    const std::vector<bench::Query> q9 = bench::make_queries({sessions[0]}, 0.95, nullptr);
    REQUIRE(q9[0].context_items == std::vector<int>{0});
    REQUIRE(q9[0].relevant == std::vector<int>{1, 2, 3});

    REQUIRE_THROWS_AS(bench::make_queries({sessions[3]}, 0.3, nullptr), NoUsableQueriesError);
    REQUIRE_THROWS_AS(bench::make_queries(sessions, 0.0, nullptr), InvalidConfigError);
    REQUIRE_THROWS_AS(bench::make_queries(sessions, 1.0, nullptr), InvalidConfigError);
    REQUIRE_THROWS_AS(bench::make_queries(sessions, -0.2, nullptr), InvalidConfigError);
}

TEST_CASE("make_queries matches a counting oracle on random sessions", "[bench]") {
    Rng rng(11);
    std::vector<IndexedSession> sessions;
    std::size_t long_enough = 0;
    for (int i = 0; i < 1000; ++i) {
        const int len = rng.uniform_int(1, 12);
        std::vector<int> items;
        for (int j = 0; j < len; ++j) items.push_back(rng.uniform_int(0, 99));
        if (len >= 2) ++long_enough;
        sessions.push_back(make_session(i, std::move(items), i));
    }

    for (const double f : {0.1, 0.25, 0.3, 0.5, 0.75, 0.9}) {
        std::size_t skipped = 0;
        const std::vector<bench::Query> queries = bench::make_queries(sessions, f, &skipped);
        REQUIRE(queries.size() == long_enough);
        REQUIRE(skipped == sessions.size() - long_enough);

        std::size_t qi = 0;
        for (const IndexedSession& s : sessions) {
            const std::size_t n = s.items.size();
            if (n < 2) continue;
            // independent ceiling: walk h upward until it covers f*n
            std::size_t h = 1;
            while (h < n - 1 && static_cast<double>(h) + 1e-9 < f * static_cast<double>(n)) ++h;
            const bench::Query& q = queries[qi++];
            REQUIRE(q.context_items ==
                    std::vector<int>(s.items.begin(),
                                     s.items.end() - static_cast<std::ptrdiff_t>(h)));
            const std::set<int> tail(s.items.end() - static_cast<std::ptrdiff_t>(h),
                                     s.items.end());
            REQUIRE(q.relevant == std::vector<int>(tail.begin(), tail.end()));
            REQUIRE_FALSE(q.context_items.empty());
            REQUIRE_FALSE(q.relevant.empty());
        }
        REQUIRE(qi == queries.size());
    }
}

TEST_CASE("evaluate_scorer reproduces a hand-computed table", "[bench]") {
    const Matrix emb = matrix_from(
        {{1, 0}, {1, 0}, {0, 1}, {0, 1}, {1, 0}, {0, 1}});
    const std::vector<bench::Query> queries = {{{0}, {1, 2}}, {{3}, {0, 5}}};
    const auto scorer = [](std::size_t qi, const bench::Query&) {
        return qi == 0 ? std::vector<double>{9, 8, 7, 6, 5, 4}
                       : std::vector<double>{1, 2, 3, 4, 5, 6};
    };
    const bench::ModelResult res =
        bench::evaluate_scorer("hand", queries, 6, 4, 2, 0, emb, scorer);

    REQUIRE(res.name == "hand");
    REQUIRE(res.rows.size() == 4);
    for (int k = 1; k <= 4; ++k) REQUIRE(res.rows[static_cast<std::size_t>(k - 1)].k == k);
    // query 1 slate [1,2,3,4], query 2 slate [5,4,2,1]
    REQUIRE(res.rows[0].accuracy_at_k == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(res.rows[1].accuracy_at_k == Catch::Approx(0.75).margin(1e-12));
    REQUIRE(res.rows[2].accuracy_at_k == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(res.rows[3].accuracy_at_k == Catch::Approx(0.375).margin(1e-12));
    REQUIRE(res.rows[0].ild_at_k == 0.0);
    REQUIRE(res.rows[1].ild_at_k == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(res.rows[2].ild_at_k == Catch::Approx(1.0 / 3.0).margin(1e-12));
    REQUIRE(res.rows[3].ild_at_k == Catch::Approx(1.0 / 3.0).margin(1e-12));
    // confusion metrics at k_eval = 2: perfect for query 1, half right for query 2
    REQUIRE(res.accuracy_at_k_eval == Catch::Approx((1.0 + 2.0 / 3.0) / 2.0).margin(1e-12));
    REQUIRE(res.precision_at_k_eval == Catch::Approx(0.75).margin(1e-12));
    REQUIRE(res.recall_at_k_eval == Catch::Approx(0.75).margin(1e-12));
    REQUIRE(res.f1_at_k_eval == Catch::Approx(0.75).margin(1e-12));

    SECTION("the exclusion window only drops the most recent context") {
        const std::vector<bench::Query> old_hit = {{{0, 1, 2, 3, 4}, {0}}};
        const auto desc = [](std::size_t, const bench::Query&) {
            return std::vector<double>{9, 8, 7, 6, 5, 4};
        };
        // window 2 excludes only items 3 and 4; item 0 stays eligible and wins
        const bench::ModelResult windowed =
            bench::evaluate_scorer("w", old_hit, 6, 4, 1, 2, emb, desc);
        REQUIRE(windowed.rows[0].accuracy_at_k == 1.0);
        // the recent items never reappear anywhere in the slate
        const std::vector<bench::Query> recent = {{{0, 1, 2, 3, 4}, {3}}};
        const bench::ModelResult excluded =
            bench::evaluate_scorer("w", recent, 6, 4, 1, 2, emb, desc);
        REQUIRE(excluded.rows[3].accuracy_at_k == 0.0);
    }

    SECTION("argument validation") {
        const auto ok = [](std::size_t, const bench::Query&) {
            return std::vector<double>{1, 2, 3, 4, 5, 6};
        };
        REQUIRE_THROWS_AS(bench::evaluate_scorer("x", {}, 6, 4, 2, 0, emb, ok),
                          NoUsableQueriesError);
        REQUIRE_THROWS_AS(bench::evaluate_scorer("x", queries, 6, 7, 2, 0, emb, ok),
                          InvalidConfigError);
        REQUIRE_THROWS_AS(bench::evaluate_scorer("x", queries, 6, 4, 5, 0, emb, ok),
                          InvalidConfigError);
        const auto short_scores = [](std::size_t, const bench::Query&) {
            return std::vector<double>{1, 2, 3};
        };
        REQUIRE_THROWS_AS(bench::evaluate_scorer("x", queries, 6, 4, 2, 0, emb, short_scores),
                          ShapeMismatchError);
        // a big context plus k_max = n leaves too few candidates
        const std::vector<bench::Query> crowded = {{{0, 1, 2}, {4}}};
        REQUIRE_THROWS_AS(bench::evaluate_scorer("x", crowded, 6, 6, 2, 0, emb, ok),
                          InvalidConfigError);
    }
}

TEST_CASE("a perfect oracle scores min(relevant, k)/k and flat embeddings kill diversity",
          "[bench]") {
    const int n = 30;
    Rng rng(17);
    std::vector<bench::Query> queries;
    for (int t = 0; t < 100; ++t) {
        std::set<int> ctx;
        const int ctx_len = rng.uniform_int(1, 4);
        while (static_cast<int>(ctx.size()) < ctx_len) ctx.insert(rng.uniform_int(0, n - 1));
        std::set<int> rel;
        const int rel_len = rng.uniform_int(1, 5);
        while (static_cast<int>(rel.size()) < rel_len) {
            const int item = rng.uniform_int(0, n - 1);
            if (ctx.count(item) == 0) rel.insert(item);
        }
        queries.push_back({{ctx.begin(), ctx.end()}, {rel.begin(), rel.end()}});
    }

    // relevant items always outrank the rest
    const auto oracle = [n](std::size_t, const bench::Query& q) {
        std::vector<double> s(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) s[static_cast<std::size_t>(i)] = static_cast<double>(i) / 1000.0;
        double top = 1000.0;
        for (int item : q.relevant) s[static_cast<std::size_t>(item)] = top--;
        return s;
    };
    const Matrix flat(static_cast<std::size_t>(n), 3, 0.4);
    const bench::ModelResult res =
        bench::evaluate_scorer("oracle", queries, n, 10, 5, 0, flat, oracle);

    for (int k = 1; k <= 10; ++k) {
        double expected = 0.0;
        for (const bench::Query& q : queries)
            expected += static_cast<double>(std::min<std::size_t>(q.relevant.size(),
                                                                  static_cast<std::size_t>(k))) /
                        static_cast<double>(k);
        expected /= static_cast<double>(queries.size());
        REQUIRE(res.rows[static_cast<std::size_t>(k - 1)].accuracy_at_k ==
                Catch::Approx(expected).margin(1e-12));
        // identical embedding rows: zero intra-list distance at every depth
        REQUIRE(res.rows[static_cast<std::size_t>(k - 1)].ild_at_k == 0.0);
    }
}

TEST_CASE("aggregate metrics are invariant to query order", "[bench]") {
    const int n = 25;
    Rng rng(23);
    std::vector<bench::Query> queries;
    for (int t = 0; t < 60; ++t) {
        std::set<int> ctx;
        while (ctx.size() < 3) ctx.insert(rng.uniform_int(0, n - 1));
        std::set<int> rel;
        while (rel.size() < 2) rel.insert(rng.uniform_int(0, n - 1));
        queries.push_back({{ctx.begin(), ctx.end()}, {rel.begin(), rel.end()}});
    }
    // depends only on the query content, never on its position
    const auto scorer = [n](std::size_t, const bench::Query& q) {
        std::vector<double> s(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            s[static_cast<std::size_t>(i)] =
                ((i * 7 + q.context_items[0] * 13 + q.relevant[0] * 3) % 19) / 19.0;
        return s;
    };
    Matrix emb(static_cast<std::size_t>(n), 3);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            emb.at(static_cast<std::size_t>(i), static_cast<std::size_t>(c)) =
                std::sin(0.7 * i + 1.3 * c);

    const bench::ModelResult a = bench::evaluate_scorer("a", queries, n, 8, 4, 0, emb, scorer);
    std::vector<bench::Query> shuffled = queries;
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + 17, shuffled.end());
    const bench::ModelResult b = bench::evaluate_scorer("b", shuffled, n, 8, 4, 0, emb, scorer);

    for (std::size_t k = 0; k < 8; ++k) {
        REQUIRE(a.rows[k].accuracy_at_k == Catch::Approx(b.rows[k].accuracy_at_k).margin(1e-12));
        REQUIRE(a.rows[k].ild_at_k == Catch::Approx(b.rows[k].ild_at_k).margin(1e-12));
    }
    REQUIRE(a.accuracy_at_k_eval == Catch::Approx(b.accuracy_at_k_eval).margin(1e-12));
    REQUIRE(a.f1_at_k_eval == Catch::Approx(b.f1_at_k_eval).margin(1e-12));
}

TEST_CASE("run_experiment pits the seven learners against honest baselines", "[bench]") {
    const bench::ExperimentConfig cfg = full_run_config();
    const bench::EvalReport rep = bench::run_experiment(cfg);

    REQUIRE(rep.query_count == 120);
    REQUIRE(rep.skipped_sessions == 0);
    REQUIRE(rep.k_max == 10);
    REQUIRE(rep.k_eval == 10);
    REQUIRE(rep.seed == 9);
    REQUIRE(rep.aggregation == "macro-over-sessions");
    REQUIRE(rep.runtime_seconds > 0.0);
    REQUIRE(rep.config_fingerprint != 0);
    REQUIRE(rep.data_fingerprint != 0);

    const std::vector<std::string> expected_names = {
        "cnn", "rnn", "gnn", "autoencoder", "transformer", "ncf", "siamese",
        "popularity", "random"};
    REQUIRE(rep.results.size() == expected_names.size());
    for (std::size_t i = 0; i < rep.results.size(); ++i) {
        const bench::ModelResult& r = rep.results[i];
        REQUIRE(r.name == expected_names[i]);
        REQUIRE(r.rows.size() == 10);
        for (int k = 1; k <= 10; ++k) {
            const metrics::EvalRow& row = r.rows[static_cast<std::size_t>(k - 1)];
            REQUIRE(row.k == k);
            REQUIRE(row.accuracy_at_k >= 0.0);
            REQUIRE(row.accuracy_at_k <= 1.0);
            REQUIRE(row.ild_at_k >= 0.0);
            REQUIRE(row.ild_at_k <= 1.0);
        }
        REQUIRE(r.rows[0].ild_at_k == 0.0);
        if (i < 7) {
            REQUIRE(r.training_log.size() ==
                    static_cast<std::size_t>(cfg.model_configs[i].epochs));
            REQUIRE(r.fit_seconds > 0.0);
        } else {
            REQUIRE(r.training_log.empty());
            REQUIRE(r.fit_seconds == 0.0);
        }
    }

    // every learner must beat raw popularity at the top of the slate
    const bench::ModelResult& pop = rep.results[7];
    for (std::size_t i = 0; i < 7; ++i) {
        CAPTURE(rep.results[i].name, rep.results[i].rows[0].accuracy_at_k,
                pop.rows[0].accuracy_at_k);
        REQUIRE(rep.results[i].rows[0].accuracy_at_k > pop.rows[0].accuracy_at_k);
    }

    // brute-force re-derivation of the popularity baseline, straight-line code
    const SyntheticDataset synth = generate_synthetic(planted_recipe());
    PipelineReport prep;
    const PreprocessedData data =
        preprocess_sessions(synth.sessions, synth.items, cfg.pipeline, prep);
    const IndexedSplit split =
        models::detail::split_indexed(data.sessions, cfg.pipeline.split_ratio);
    const std::vector<bench::Query> queries = bench::make_queries(split.test, 0.5, nullptr);
    REQUIRE(queries.size() == rep.query_count);
    std::vector<long> freq(static_cast<std::size_t>(data.n_items()), 0);
    for (const IndexedSession& s : split.train)
        for (int item : s.items) ++freq[static_cast<std::size_t>(item)];
    double hits1 = 0.0;
    double hits5 = 0.0;
    for (const bench::Query& q : queries) {
        std::vector<int> ranked;
        for (int i = 0; i < data.n_items(); ++i)
            if (std::find(q.context_items.begin(), q.context_items.end(), i) ==
                q.context_items.end())
                ranked.push_back(i);
        std::stable_sort(ranked.begin(), ranked.end(),
                         [&freq](int a, int b) { return freq[static_cast<std::size_t>(a)] >
                                                        freq[static_cast<std::size_t>(b)]; });
        const std::set<int> rel(q.relevant.begin(), q.relevant.end());
        if (rel.count(ranked[0]) > 0) hits1 += 1.0;
        int in5 = 0;
        for (int r = 0; r < 5; ++r)
            if (rel.count(ranked[static_cast<std::size_t>(r)]) > 0) ++in5;
        hits5 += static_cast<double>(in5) / 5.0;
    }
    REQUIRE(pop.rows[0].accuracy_at_k ==
            Catch::Approx(hits1 / static_cast<double>(queries.size())).margin(1e-12));
    REQUIRE(pop.rows[4].accuracy_at_k ==
            Catch::Approx(hits5 / static_cast<double>(queries.size())).margin(1e-12));
}

TEST_CASE("same configuration and seed produce identical reports", "[bench]") {
    bench::ExperimentConfig cfg;
    cfg.synthetic = SyntheticConfig{30, 200, 2, 0.1, 7, 4};
    models::ModelConfig cnn = models::ModelConfig::defaults(models::ModelKind::cnn);
    cnn.embed_dim = 8;
    cnn.hidden = 8;
    cnn.epochs = 2;
    models::ModelConfig gnn = models::ModelConfig::defaults(models::ModelKind::gnn);
    gnn.embed_dim = 8;
    gnn.epochs = 3;
    cfg.model_configs = {cnn, gnn};
    cfg.k_max = 5;
    cfg.k_eval = 3;
    cfg.holdout_fraction = 0.4;
    cfg.seed = 21;

    const bench::EvalReport rep1 = bench::run_experiment(cfg);
    const bench::EvalReport rep2 = bench::run_experiment(cfg);

    REQUIRE(bench::render_report_csv(rep1) == bench::render_report_csv(rep2));
    nlohmann::json j1 = bench::report_to_json(rep1);
    nlohmann::json j2 = bench::report_to_json(rep2);
    // wall-clock fields are the only nondeterministic bytes
    j1["runtime_seconds"] = 0.0;
    j2["runtime_seconds"] = 0.0;
    for (auto& m : j1["models"]) m["fit_seconds"] = 0.0;
    for (auto& m : j2["models"]) m["fit_seconds"] = 0.0;
    REQUIRE(j1 == j2);
    REQUIRE(rep1.config_fingerprint == rep2.config_fingerprint);
    REQUIRE(rep1.data_fingerprint == rep2.data_fingerprint);

    SECTION("the seed steers only the random baseline") {
        bench::ExperimentConfig other = cfg;
        other.seed = 22;
        const bench::EvalReport rep3 = bench::run_experiment(other);
        const bench::ModelResult& pop1 = rep1.results[2];
        const bench::ModelResult& pop3 = rep3.results[2];
        REQUIRE(pop1.name == "popularity");
        for (std::size_t k = 0; k < 5; ++k) {
            REQUIRE(pop1.rows[k].accuracy_at_k == pop3.rows[k].accuracy_at_k);
            REQUIRE(pop1.rows[k].ild_at_k == pop3.rows[k].ild_at_k);
        }
        const bench::ModelResult& rnd1 = rep1.results[3];
        const bench::ModelResult& rnd3 = rep3.results[3];
        REQUIRE(rnd1.name == "random");
        bool any_difference = false;
        for (std::size_t k = 0; k < 5; ++k)
            any_difference = any_difference ||
                             rnd1.rows[k].accuracy_at_k != rnd3.rows[k].accuracy_at_k ||
                             rnd1.rows[k].ild_at_k != rnd3.rows[k].ild_at_k;
        REQUIRE(any_difference);
    }
}

TEST_CASE("reports round-trip through JSON and render to stable CSV", "[bench]") {
    const bench::EvalReport rep = sample_report();

    const std::string expected_csv =
        "model,k,accuracy_pct,ild_pct\n"
        "alpha,1,86.12,0.00\n"
        "alpha,2,50.00,7.70\n"
        "alpha,3,33.33,25.00\n"
        "beta,1,0.00,0.00\n"
        "beta,2,100.00,99.90\n"
        "beta,3,0.50,100.00\n";
    REQUIRE(bench::render_report_csv(rep) == expected_csv);

    // json -> text -> json -> struct keeps every field bit-exact
    const std::string dumped = bench::report_to_json(rep).dump();
    const bench::EvalReport back = bench::report_from_json(nlohmann::json::parse(dumped));
    REQUIRE(back.query_count == rep.query_count);
    REQUIRE(back.skipped_sessions == rep.skipped_sessions);
    REQUIRE(back.k_max == rep.k_max);
    REQUIRE(back.k_eval == rep.k_eval);
    REQUIRE(back.seed == rep.seed);
    REQUIRE(back.config_fingerprint == rep.config_fingerprint);
    REQUIRE(back.data_fingerprint == rep.data_fingerprint);
    REQUIRE(back.aggregation == rep.aggregation);
    REQUIRE(back.runtime_seconds == rep.runtime_seconds);
    REQUIRE(back.results.size() == rep.results.size());
    for (std::size_t i = 0; i < rep.results.size(); ++i) {
        const bench::ModelResult& a = rep.results[i];
        const bench::ModelResult& b = back.results[i];
        REQUIRE(a.name == b.name);
        REQUIRE(a.training_log == b.training_log);
        REQUIRE(a.fit_seconds == b.fit_seconds);
        REQUIRE(a.accuracy_at_k_eval == b.accuracy_at_k_eval);
        REQUIRE(a.precision_at_k_eval == b.precision_at_k_eval);
        REQUIRE(a.recall_at_k_eval == b.recall_at_k_eval);
        REQUIRE(a.f1_at_k_eval == b.f1_at_k_eval);
        REQUIRE(a.rows.size() == b.rows.size());
        for (std::size_t k = 0; k < a.rows.size(); ++k) {
            REQUIRE(a.rows[k].k == b.rows[k].k);
            REQUIRE(a.rows[k].accuracy_at_k == b.rows[k].accuracy_at_k);
            REQUIRE(a.rows[k].ild_at_k == b.rows[k].ild_at_k);
        }
    }
    // regenerating the CSV from the persisted JSON is bit-for-bit identical
    REQUIRE(bench::render_report_csv(back) == expected_csv);
}

TEST_CASE("emit_report writes files atomically", "[bench]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "recbench_bench_io";
    fs::remove_all(dir);
    const bench::EvalReport rep = sample_report();

    const fs::path csv_path = bench::emit_report(rep, dir, bench::ReportFormat::csv);
    REQUIRE(csv_path.filename() == "report.csv");
    std::ifstream csv_in(csv_path, std::ios::binary);
    const std::string csv_bytes((std::istreambuf_iterator<char>(csv_in)),
                                std::istreambuf_iterator<char>());
    REQUIRE(csv_bytes == bench::render_report_csv(rep));

    const fs::path json_path = bench::emit_report(rep, dir, bench::ReportFormat::json);
    REQUIRE(json_path.filename() == "report.json");
    std::ifstream json_in(json_path);
    nlohmann::json parsed;
    json_in >> parsed;
    const bench::EvalReport back = bench::report_from_json(parsed);
    REQUIRE(back.config_fingerprint == rep.config_fingerprint);
    REQUIRE(back.results.size() == 2);
    REQUIRE(back.results[0].name == "alpha");

    // no leftover temp files once the rename lands
    for (const auto& entry : fs::directory_iterator(dir))
        REQUIRE(entry.path().extension() != ".tmp");

    // a plain file where the directory should go makes the write fail loudly
    const fs::path blocker = dir / "blocker";
    std::ofstream(blocker) << "x";
    REQUIRE_THROWS_AS(bench::emit_report(rep, blocker / "sub", bench::ReportFormat::csv),
                      IoError);
    fs::remove_all(dir);
}

TEST_CASE("experiment configs round-trip through JSON and validate", "[bench]") {
    bench::ExperimentConfig cfg;
    cfg.items_csv = "items.csv";
    cfg.sessions_csv = "sessions.csv";
    cfg.synthetic = SyntheticConfig{23, 77, 3, 0.25, 42, 5};
    cfg.pipeline.gap_seconds = 900;
    cfg.pipeline.split_ratio = 0.6;
    cfg.pipeline.reduce_dim = 2;
    cfg.pipeline.one_hot_max_cardinality = 8;
    cfg.model_configs = {tuned_config(models::ModelKind::rnn),
                         tuned_config(models::ModelKind::ncf)};
    cfg.k_max = 7;
    cfg.k_eval = 4;
    cfg.holdout_fraction = 0.42;
    cfg.seed = 123;
    cfg.out_dir = "out/exp1";
    cfg.ild_reference = "rnn";

    const bench::ExperimentConfig back =
        bench::experiment_from_json(bench::experiment_to_json(cfg));
    REQUIRE(back.items_csv == cfg.items_csv);
    REQUIRE(back.sessions_csv == cfg.sessions_csv);
    REQUIRE(back.synthetic.n_items == 23);
    REQUIRE(back.synthetic.n_sessions == 77);
    REQUIRE(back.synthetic.n_blocks == 3);
    REQUIRE(back.synthetic.noise == 0.25);
    REQUIRE(back.synthetic.seed == 42);
    REQUIRE(back.synthetic.n_features == 5);
    REQUIRE(back.pipeline.gap_seconds == 900);
    REQUIRE(back.pipeline.split_ratio == 0.6);
    REQUIRE(back.pipeline.reduce_dim == 2);
    REQUIRE(back.pipeline.one_hot_max_cardinality == 8);
    REQUIRE(back.model_configs.size() == 2);
    for (std::size_t i = 0; i < 2; ++i)
        REQUIRE(models::config_to_json(back.model_configs[i]) ==
                models::config_to_json(cfg.model_configs[i]));
    REQUIRE(back.k_max == 7);
    REQUIRE(back.k_eval == 4);
    REQUIRE(back.holdout_fraction == 0.42);
    REQUIRE(back.seed == 123);
    REQUIRE(back.out_dir == "out/exp1");
    REQUIRE(back.ild_reference == "rnn");

    // fingerprints react to any config change
    const std::uint64_t fp1 = bench::detail::fnv1a(bench::experiment_to_json(cfg).dump());
    bench::ExperimentConfig other = cfg;
    other.seed = 124;
    const std::uint64_t fp2 = bench::detail::fnv1a(bench::experiment_to_json(other).dump());
    REQUIRE(fp1 != fp2);

    SECTION("validation rejects malformed experiments") {
        bench::ExperimentConfig good = cfg;
        REQUIRE_NOTHROW(good.validate());
        bench::ExperimentConfig bad = cfg;
        bad.model_configs.clear();
        REQUIRE_THROWS_AS(bad.validate(), InvalidConfigError);
        bad = cfg;
        bad.k_max = 0;
        REQUIRE_THROWS_AS(bad.validate(), InvalidConfigError);
        bad = cfg;
        bad.k_eval = 9;  // above k_max
        REQUIRE_THROWS_AS(bad.validate(), InvalidConfigError);
        bad = cfg;
        bad.k_eval = 0;
        REQUIRE_THROWS_AS(bad.validate(), InvalidConfigError);
        bad = cfg;
        bad.holdout_fraction = 0.0;
        REQUIRE_THROWS_AS(bad.validate(), InvalidConfigError);
        bad = cfg;
        bad.holdout_fraction = 1.0;
        REQUIRE_THROWS_AS(bad.validate(), InvalidConfigError);
        bad = cfg;
        bad.sessions_csv.clear();
        REQUIRE_THROWS_AS(bad.validate(), InvalidConfigError);
    }

    SECTION("pipeline reports serialize for the artifact dump") {
        PipelineReport pr;
        pr.events_in = 10;
        pr.events_dropped = 2;
        pr.duplicates_removed = 1;
        pr.items_synthesized = 3;
        pr.dropped_columns = {"colour"};
        pr.explained_variance_ratios = {0.9, 0.1};
        pr.session_count = 4;
        pr.n_items = 5;
        pr.feature_dim = 6;
        const nlohmann::json j = bench::pipeline_report_to_json(pr);
        REQUIRE(j.at("events_in") == 10);
        REQUIRE(j.at("events_dropped") == 2);
        REQUIRE(j.at("dropped_columns") == nlohmann::json::array({"colour"}));
        REQUIRE(j.at("explained_variance_ratios").size() == 2);
        REQUIRE(j.at("feature_dim") == 6);
    }
}

TEST_CASE("stage names travel with pipeline errors", "[bench]") {
    bench::ExperimentConfig no_models;
    REQUIRE_THROWS_WITH(bench::run_experiment(no_models),
                        ContainsSubstring("stage config") &&
                            ContainsSubstring("at least one model"));

    bench::ExperimentConfig oversized;
    oversized.synthetic = SyntheticConfig{12, 40, 2, 0.1, 3, 4};
    models::ModelConfig tiny = models::ModelConfig::defaults(models::ModelKind::cnn);
    tiny.embed_dim = 8;
    tiny.hidden = 8;
    tiny.epochs = 1;
    oversized.model_configs = {tiny};
    oversized.k_max = 50;
    oversized.k_eval = 10;
    REQUIRE_THROWS_WITH(bench::run_experiment(oversized),
                        ContainsSubstring("stage config") &&
                            ContainsSubstring("exceeds the catalog"));

    bench::ExperimentConfig bad_ref = oversized;
    bad_ref.k_max = 5;
    bad_ref.k_eval = 5;
    bad_ref.ild_reference = "transformer";
    REQUIRE_THROWS_WITH(bench::run_experiment(bad_ref), ContainsSubstring("ild_reference"));
}

TEST_CASE("a pinned reference embedding space changes only the diversity column", "[bench]") {
    bench::ExperimentConfig cfg;
    cfg.synthetic = SyntheticConfig{30, 200, 2, 0.1, 7, 4};
    models::ModelConfig cnn = models::ModelConfig::defaults(models::ModelKind::cnn);
    cnn.embed_dim = 8;
    cnn.hidden = 8;
    cnn.epochs = 2;
    models::ModelConfig sia = models::ModelConfig::defaults(models::ModelKind::siamese);
    sia.embed_dim = 8;
    sia.epochs = 3;
    cfg.model_configs = {cnn, sia};
    cfg.k_max = 5;
    cfg.k_eval = 3;
    cfg.seed = 21;

    const bench::EvalReport own = bench::run_experiment(cfg);
    bench::ExperimentConfig pinned_cfg = cfg;
    pinned_cfg.ild_reference = "cnn";
    const bench::EvalReport pinned = bench::run_experiment(pinned_cfg);

    for (std::size_t i = 0; i < own.results.size(); ++i) {
        for (std::size_t k = 0; k < 5; ++k)
            // ranking is untouched by the reference space
            REQUIRE(own.results[i].rows[k].accuracy_at_k ==
                    pinned.results[i].rows[k].accuracy_at_k);
    }
    // cnn measures itself either way
    for (std::size_t k = 0; k < 5; ++k)
        REQUIRE(own.results[0].rows[k].ild_at_k == pinned.results[0].rows[k].ild_at_k);
    // siamese's diversity is now measured in cnn's space
    bool ild_changed = false;
    for (std::size_t k = 1; k < 5; ++k)
        ild_changed = ild_changed ||
                      own.results[1].rows[k].ild_at_k != pinned.results[1].rows[k].ild_at_k;
    REQUIRE(ild_changed);
}
