#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "recbench/models/common.hpp"

namespace recbench::models {

namespace detail {

// Dense row-stochastic propagation matrix for the weighted-mean aggregation:
// row i mixes node i (self-loop weight 1) with its neighbors at weight
// count/max_count, normalized by the total weight.
inline Matrix propagation_matrix(const ItemGraph& g, int n_items) {
    Matrix p(static_cast<std::size_t>(n_items), static_cast<std::size_t>(n_items));
    const double max_count = static_cast<double>(g.max_count());
    for (int i = 0; i < n_items; ++i) {
        double wsum = 1.0;
        if (g.has_node(i)) {
            for (const auto& [j, count] : g.adjacent(i)) wsum += count / max_count;
        }
        p.at(i, i) = 1.0 / wsum;
        if (g.has_node(i)) {
            for (const auto& [j, count] : g.adjacent(i)) p.at(i, j) = (count / max_count) / wsum;
        }
    }
    return p;
}

inline nn::ParamStore gnn_make_params(const ModelConfig& cfg, int n_items) {
    nn::ParamStore params;
    params.add("embed", {n_items + 1, cfg.embed_dim});
    Rng init_rng(cfg.seed);
    nn::glorot_init(params, init_rng);
    return params;
}

// Full-batch edge objective: propagate the base table through `gnn_rounds`
// aggregation rounds, then binary cross-entropy on edge-endpoint dot products
// with neg_samples uniform non-edges per positive edge. Positive targets are
// the edge weights count/max_count rather than hard ones: at the optimum
// sigmoid(dot) matches the weight, so the dots keep the co-occurrence
// ordering instead of saturating every edge to the same value.
inline ad::Tensor gnn_batch_loss(ad::Tape& tape, nn::BoundParams& bound, const ModelConfig& cfg,
                                 int n_items, const Matrix& prop, const ItemGraph& g,
                                 const EdgeExample* ex, std::size_t count, int epoch,
                                 std::size_t batch_index) {
    Rng neg_rng(batch_seed(cfg.seed, epoch, batch_index));
    const double max_count = static_cast<double>(g.max_count());
    std::vector<int> is, js;
    std::vector<double> labels;
    is.reserve(count * (1 + cfg.neg_samples));
    js.reserve(count * (1 + cfg.neg_samples));
    labels.reserve(count * (1 + cfg.neg_samples));
    for (std::size_t e = 0; e < count; ++e) {
        is.push_back(ex[e].i);
        js.push_back(ex[e].j);
        labels.push_back(static_cast<double>(g.count(ex[e].i, ex[e].j)) / max_count);
    }
    for (std::size_t e = 0; e < count; ++e) {
        for (int s = 0; s < cfg.neg_samples; ++s) {
            int cand = ex[e].i;
            for (int tries = 0; tries < 100; ++tries) {
                cand = neg_rng.uniform_int(0, n_items - 1);
                if (cand != ex[e].i && g.count(ex[e].i, cand) == 0) break;
            }
            is.push_back(ex[e].i);
            js.push_back(cand);
            labels.push_back(0.0);
        }
    }
    const ad::Tensor base = ad::slice_rows(bound["embed"], 0, n_items);
    const ad::Tensor p = tape.leaf({n_items, n_items}, prop.data, false);
    ad::Tensor z = base;
    for (int r = 0; r < cfg.gnn_rounds; ++r) z = ad::matmul(p, z);
    const ad::Tensor zi = ad::gather_rows(z, is);
    const ad::Tensor zj = ad::gather_rows(z, js);
    const ad::Tensor logits = ad::row_sum(ad::mul(zi, zj));
    const ad::Tensor y = tape.leaf({static_cast<int>(labels.size()), 1}, labels, false);
    return ad::bce_with_logits(logits, y);
}

}  // namespace detail

// Propagated embeddings for an arbitrary graph over this model's catalog:
// base table rows pushed through `gnn_rounds` aggregation rounds, then the
// cold-start patch applied to items the model never saw in training.
inline Matrix gnn_embeddings_for(const TrainedModel& m, const ItemGraph& g) {
    detail::require_kind(m, ModelKind::gnn, "gnn_embeddings_for");
    const Matrix base = detail::embed_rows(m.params, m.n_items, m.config.embed_dim);
    Matrix z = propagate_embeddings(base, g, m.config.gnn_rounds);
    std::vector<bool> seen(static_cast<std::size_t>(m.n_items), true);
    for (int i : m.cold_start_items) seen[i] = false;
    std::vector<int> cold;
    detail::patch_cold_start(z, seen, m.item_categories, cold);
    return z;
}

inline TrainedModel train_gnn(const ModelConfig& cfg, const PreprocessedData& data,
                              const ItemGraph& g) {
    if (cfg.kind != ModelKind::gnn) throw InvalidConfigError("train_gnn: config.kind != gnn");
    cfg.validate();
    const int n = data.n_items();
    for (const auto& [node, type] : g.nodes())
        if (node < 0 || node >= n) throw UnknownNodeError(node);

    std::vector<detail::EdgeExample> edges;
    edges.reserve(g.edge_count());
    for (const auto& [edge, count] : g.co_counts()) edges.push_back({edge.first, edge.second});

    nn::ParamStore params = detail::gnn_make_params(cfg, n);
    const Matrix prop = detail::propagation_matrix(g, n);

    TrainedModel model;
    model.config = cfg;
    model.training_log = detail::run_epochs(
        std::move(edges), cfg, params,
        [&](ad::Tape& tape, nn::BoundParams& bound, const detail::EdgeExample* ex,
            std::size_t count, int epoch, std::size_t batch_index) {
            return detail::gnn_batch_loss(tape, bound, cfg, n, prop, g, ex, count, epoch,
                                          batch_index);
        });
    model.params = std::move(params);
    model.n_items = n;
    model.item_categories = data.item_categories;
    model.data_fingerprint = detail::data_fingerprint(data);
    model.train_graph = std::make_shared<ItemGraph>(g);

    // Cached propagated embeddings over the training graph; items absent from
    // the graph are cold and take the category-mean patch.
    const Matrix base = detail::embed_rows(model.params, n, cfg.embed_dim);
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (const auto& [node, type] : g.nodes()) seen[node] = true;
    model.item_embeddings = propagate_embeddings(base, g, cfg.gnn_rounds);
    detail::patch_cold_start(model.item_embeddings, seen, model.item_categories,
                             model.cold_start_items);
    return model;
}

namespace detail {

inline std::vector<double> gnn_scores_from(const Matrix& z, const RecContext& ctx) {
    const int d = static_cast<int>(z.cols);
    std::vector<double> u(static_cast<std::size_t>(d), 0.0);
    const std::vector<int> real = ctx.real_items();
    for (int item : real)
        for (int c = 0; c < d; ++c) u[c] += z.at(item, c);
    for (double& v : u) v /= static_cast<double>(real.size());
    std::vector<double> scores(z.rows, 0.0);
    for (std::size_t j = 0; j < z.rows; ++j) {
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += u[c] * z.at(j, c);
        scores[j] = dot;
    }
    return scores;
}

}  // namespace detail

// Scores against the cached training-graph embeddings: score(j) is the dot
// product of the mean propagated context embedding with item j's.
inline std::vector<double> score_gnn(const TrainedModel& m, const RecContext& ctx) {
    detail::require_kind(m, ModelKind::gnn, "score_gnn");
    detail::check_context(m, ctx);
    return detail::gnn_scores_from(m.item_embeddings, ctx);
}

// Same, but against an explicit graph: reuses the cache when the graph is the
// training graph, otherwise re-propagates over the supplied structure.
inline std::vector<double> score_gnn(const TrainedModel& m, const RecContext& ctx,
                                     const ItemGraph& g) {
    detail::require_kind(m, ModelKind::gnn, "score_gnn");
    if (m.train_graph && (&g == m.train_graph.get() || g == *m.train_graph))
        return score_gnn(m, ctx);
    detail::check_context(m, ctx);
    return detail::gnn_scores_from(gnn_embeddings_for(m, g), ctx);
}

}  // namespace recbench::models
