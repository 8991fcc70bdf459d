#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recbench/models/common.hpp"

namespace recbench::models {

namespace detail {

// Pairwise interaction head: generalized matrix factorization branch
// (elementwise product of user and item vectors) alongside a two-layer MLP on
// their concatenation, combined by one dense output unit. u and c are
// row-aligned (B x embed_dim) batches.
template <typename Lookup>
ad::Tensor ncf_pair_logits(Lookup&& p, const ad::Tensor& u, const ad::Tensor& c) {
    const ad::Tensor gmf = ad::mul(u, c);
    const ad::Tensor x = ad::concat_cols(u, c);
    const ad::Tensor h1 = ad::relu(ad::add(ad::matmul(x, p("mlp_w1")), p("mlp_b1")));
    const ad::Tensor h2 = ad::relu(ad::add(ad::matmul(h1, p("mlp_w2")), p("mlp_b2")));
    const ad::Tensor both = ad::concat_cols(gmf, h2);
    return ad::add(ad::matmul(both, p("out_w")), p("out_b"));
}

// Mean context embedding per example via one averaging matmul: row b of the
// result is the mean of b's true-context rows of the embedding table.
template <typename Lookup>
ad::Tensor ncf_context_means(ad::Tape& tape, Lookup&& p, const SeqExample* ex,
                             std::size_t count) {
    std::vector<int> flat;
    for (std::size_t i = 0; i < count; ++i)
        flat.insert(flat.end(), ex[i].ctx.begin(), ex[i].ctx.begin() + ex[i].len);
    const std::size_t total = flat.size();
    std::vector<double> avg(count * total, 0.0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < count; ++i) {
        for (int t = 0; t < ex[i].len; ++t) avg[i * total + off + t] = 1.0 / ex[i].len;
        off += static_cast<std::size_t>(ex[i].len);
    }
    const ad::Tensor rows = ad::gather_rows(p("embed"), flat);
    const ad::Tensor avg_t =
        tape.leaf({static_cast<int>(count), static_cast<int>(total)}, avg, false);
    return ad::matmul(avg_t, rows);
}

inline nn::ParamStore ncf_make_params(const ModelConfig& cfg, int n_items) {
    nn::ParamStore params;
    params.add("embed", {n_items + 1, cfg.embed_dim});
    params.add("mlp_w1", {2 * cfg.embed_dim, cfg.hidden});
    params.add("mlp_b1", {cfg.hidden});
    params.add("mlp_w2", {cfg.hidden, cfg.hidden});
    params.add("mlp_b2", {cfg.hidden});
    params.add("out_w", {cfg.embed_dim + cfg.hidden, 1});
    params.add("out_b", {1});
    Rng init_rng(cfg.seed);
    nn::glorot_init(params, init_rng);
    return params;
}

// One positive plus neg_samples uniform negatives per example, scored by the
// pair head against the example's mean context embedding; binary
// cross-entropy on the 0/1 labels.
inline ad::Tensor ncf_batch_loss(ad::Tape& tape, nn::BoundParams& bound, const ModelConfig& cfg,
                                 int n_items, const SeqExample* ex, std::size_t count, int epoch,
                                 std::size_t batch_index) {
    auto lookup = [&bound](const std::string& name) { return bound[name]; };
    const ad::Tensor u = ncf_context_means(tape, lookup, ex, count);
    Rng neg_rng(batch_seed(cfg.seed, epoch, batch_index));
    std::vector<int> rep, cand;
    std::vector<double> labels;
    for (std::size_t i = 0; i < count; ++i) {
        rep.push_back(static_cast<int>(i));
        cand.push_back(ex[i].target);
        labels.push_back(1.0);
        for (int s = 0; s < cfg.neg_samples; ++s) {
            int neg = neg_rng.uniform_int(0, n_items - 1);
            for (int tries = 0; neg == ex[i].target && tries < 100; ++tries)
                neg = neg_rng.uniform_int(0, n_items - 1);
            rep.push_back(static_cast<int>(i));
            cand.push_back(neg);
            labels.push_back(0.0);
        }
    }
    const ad::Tensor u_rep = ad::gather_rows(u, rep);
    const ad::Tensor c = ad::gather_rows(bound["embed"], cand);
    const ad::Tensor logits = ncf_pair_logits(lookup, u_rep, c);
    const ad::Tensor y = tape.leaf({static_cast<int>(labels.size()), 1}, labels, false);
    return ad::bce_with_logits(logits, y);
}

}  // namespace detail

inline TrainedModel train_ncf(const ModelConfig& cfg, const PreprocessedData& data) {
    if (cfg.kind != ModelKind::ncf) throw InvalidConfigError("train_ncf: config.kind != ncf");
    cfg.validate();
    const int n = data.n_items();
    const IndexedSplit split = detail::split_indexed(data.sessions, data.config.split_ratio);
    std::vector<detail::SeqExample> examples =
        detail::next_item_examples(split.train, cfg.max_len, n);

    nn::ParamStore params = detail::ncf_make_params(cfg, n);

    TrainedModel model;
    model.config = cfg;
    model.training_log = detail::run_epochs(
        std::move(examples), cfg, params,
        [&](ad::Tape& tape, nn::BoundParams& bound, const detail::SeqExample* ex, std::size_t count,
            int epoch, std::size_t batch_index) {
            return detail::ncf_batch_loss(tape, bound, cfg, n, ex, count, epoch, batch_index);
        });
    model.params = std::move(params);
    detail::finalize_table_model(model, data, split.train);
    return model;
}

inline std::vector<double> score_ncf(const TrainedModel& m, const RecContext& ctx) {
    detail::require_kind(m, ModelKind::ncf, "score_ncf");
    detail::check_context(m, ctx);
    ad::Tape tape;
    ConstParams cp(m.params, tape);
    cp.put_matrix("embed", detail::scoring_table(m), tape);
    detail::SeqExample ex;
    ex.ctx = ctx.item_sequence;
    ex.len = ctx.true_length;
    const ad::Tensor u = detail::ncf_context_means(tape, cp, &ex, 1);
    std::vector<int> rep(static_cast<std::size_t>(m.n_items), 0);
    std::vector<int> cand(static_cast<std::size_t>(m.n_items));
    for (int j = 0; j < m.n_items; ++j) cand[j] = j;
    const ad::Tensor u_rep = ad::gather_rows(u, rep);
    const ad::Tensor c = ad::gather_rows(cp("embed"), cand);
    const ad::Tensor logits = detail::ncf_pair_logits(cp, u_rep, c);
    return logits.values();
}

}  // namespace recbench::models
