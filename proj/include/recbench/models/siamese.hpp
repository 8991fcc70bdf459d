#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "recbench/models/common.hpp"

namespace recbench::models {

namespace detail {

// Shared-weight encoder: embedding row -> ReLU dense -> dense -> unit norm.
template <typename Lookup>
ad::Tensor siamese_encode(Lookup&& p, const ad::Tensor& rows) {
    const ad::Tensor h = ad::relu(ad::add(ad::matmul(rows, p("enc_w1")), p("enc_b1")));
    const ad::Tensor out = ad::add(ad::matmul(h, p("enc_w2")), p("enc_b2"));
    return ad::l2_normalize_rows(out);
}

inline nn::ParamStore siamese_make_params(const ModelConfig& cfg, int n_items) {
    nn::ParamStore params;
    params.add("embed", {n_items + 1, cfg.embed_dim});
    params.add("enc_w1", {cfg.embed_dim, cfg.hidden});
    params.add("enc_b1", {cfg.hidden});
    params.add("enc_w2", {cfg.hidden, cfg.embed_dim});
    params.add("enc_b2", {cfg.embed_dim});
    Rng init_rng(cfg.seed);
    nn::glorot_init(params, init_rng);
    return params;
}

// Margin contrastive objective over co-occurrence pairs: each positive pair
// is matched with one uniform non-co-occurring negative for the same anchor.
// Positive term (1 - cos)^2, negative term max(0, cos - margin)^2.
inline ad::Tensor siamese_batch_loss(ad::Tape& tape, nn::BoundParams& bound,
                                     const ModelConfig& cfg, int n_items, const ItemGraph& g,
                                     const EdgeExample* ex, std::size_t count, int epoch,
                                     std::size_t batch_index) {
    Rng neg_rng(batch_seed(cfg.seed, epoch, batch_index));
    std::vector<int> anchors(count), positives(count), negatives(count);
    for (std::size_t e = 0; e < count; ++e) {
        anchors[e] = ex[e].i;
        positives[e] = ex[e].j;
        int cand = ex[e].i;
        for (int tries = 0; tries < 100; ++tries) {
            cand = neg_rng.uniform_int(0, n_items - 1);
            if (cand != ex[e].i && g.count(ex[e].i, cand) == 0) break;
        }
        negatives[e] = cand;
    }
    auto lookup = [&bound](const std::string& name) { return bound[name]; };
    const ad::Tensor ea = siamese_encode(lookup, ad::gather_rows(bound["embed"], anchors));
    const ad::Tensor ep = siamese_encode(lookup, ad::gather_rows(bound["embed"], positives));
    const ad::Tensor en = siamese_encode(lookup, ad::gather_rows(bound["embed"], negatives));
    const ad::Tensor s_pos = ad::row_sum(ad::mul(ea, ep));  // cosine: rows are unit
    const ad::Tensor s_neg = ad::row_sum(ad::mul(ea, en));
    const ad::Tensor one = tape.full({static_cast<int>(count), 1}, 1.0);
    const ad::Tensor margin = tape.full({static_cast<int>(count), 1}, cfg.margin);
    const ad::Tensor pos_gap = ad::sub(one, s_pos);
    const ad::Tensor neg_over = ad::relu(ad::sub(s_neg, margin));
    const ad::Tensor losses =
        ad::concat_rows({ad::mul(pos_gap, pos_gap), ad::mul(neg_over, neg_over)});
    return ad::mean_all(losses);
}

}  // namespace detail

inline TrainedModel train_siamese(const ModelConfig& cfg, const PreprocessedData& data,
                                  const ItemGraph* g_opt = nullptr) {
    if (cfg.kind != ModelKind::siamese)
        throw InvalidConfigError("train_siamese: config.kind != siamese");
    cfg.validate();
    const int n = data.n_items();
    const IndexedSplit split = detail::split_indexed(data.sessions, data.config.split_ratio);
    std::shared_ptr<const ItemGraph> graph;
    if (g_opt != nullptr) {
        graph = std::make_shared<ItemGraph>(*g_opt);
    } else {
        graph = std::make_shared<ItemGraph>(
            build_graph(split.train, data.item_categories, GraphConfig{}));
    }
    for (const auto& [node, type] : graph->nodes())
        if (node < 0 || node >= n) throw UnknownNodeError(node);

    std::vector<detail::EdgeExample> pairs;
    pairs.reserve(graph->edge_count());
    for (const auto& [edge, count] : graph->co_counts()) pairs.push_back({edge.first, edge.second});

    nn::ParamStore params = detail::siamese_make_params(cfg, n);

    TrainedModel model;
    model.config = cfg;
    model.training_log = detail::run_epochs(
        std::move(pairs), cfg, params,
        [&](ad::Tape& tape, nn::BoundParams& bound, const detail::EdgeExample* ex,
            std::size_t count, int epoch, std::size_t batch_index) {
            return detail::siamese_batch_loss(tape, bound, cfg, n, *graph, ex, count, epoch,
                                              batch_index);
        });
    model.params = std::move(params);
    model.n_items = n;
    model.item_categories = data.item_categories;
    model.data_fingerprint = detail::data_fingerprint(data);
    model.train_graph = graph;

    // Item embeddings: encoder output per item, unit rows. Cold rows are
    // patched with the category mean and re-normalized.
    {
        ad::Tape tape;
        ConstParams cp(model.params, tape);
        const Matrix base = detail::embed_rows(model.params, n, cfg.embed_dim);
        const ad::Tensor rows = tape.leaf({n, cfg.embed_dim}, base.data, false);
        const ad::Tensor enc = detail::siamese_encode(cp, rows);
        model.item_embeddings =
            Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(cfg.embed_dim));
        model.item_embeddings.data = enc.values();
    }
    detail::patch_cold_start(model.item_embeddings, detail::seen_mask(split.train, n),
                             model.item_categories, model.cold_start_items);
    for (int i : model.cold_start_items) {
        double norm = 0.0;
        for (std::size_t c = 0; c < model.item_embeddings.cols; ++c)
            norm += model.item_embeddings.at(i, c) * model.item_embeddings.at(i, c);
        norm = std::sqrt(norm);
        if (norm > 1e-12)
            for (std::size_t c = 0; c < model.item_embeddings.cols; ++c)
                model.item_embeddings.at(i, c) /= norm;
    }
    return model;
}

// score(j) = cosine(encode(anchor), encode(j)); rows are unit-norm so the
// cosine is a plain dot product.
inline std::vector<double> score_siamese(const TrainedModel& m, const RecContext& ctx) {
    detail::require_kind(m, ModelKind::siamese, "score_siamese");
    detail::check_context(m, ctx);
    const Matrix& e = m.item_embeddings;
    const std::vector<double> anchor = e.row(static_cast<std::size_t>(ctx.anchor));
    std::vector<double> scores(e.rows, 0.0);
    for (std::size_t j = 0; j < e.rows; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < e.cols; ++c) dot += anchor[c] * e.at(j, c);
        scores[j] = dot;
    }
    return scores;
}

}  // namespace recbench::models
