#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recbench/models/common.hpp"

namespace recbench::models {

namespace detail {

// Sinusoidal positional encoding table, (max_len x d) row-major.
inline std::vector<double> positional_encoding(int max_len, int d) {
    std::vector<double> pe(static_cast<std::size_t>(max_len) * d);
    for (int pos = 0; pos < max_len; ++pos) {
        for (int c = 0; c < d; ++c) {
            const double angle =
                pos / std::pow(10000.0, (2.0 * (c / 2)) / static_cast<double>(d));
            pe[static_cast<std::size_t>(pos) * d + c] = (c % 2 == 0) ? std::sin(angle)
                                                                     : std::cos(angle);
        }
    }
    return pe;
}

// One encoder block applied per example: multi-head self-attention with an
// additive padding mask, residual + layer norm, position-wise feed-forward,
// residual + layer norm, then mean-pool over the true length. When attn_out
// is non-null the first example's attention rows (one L x L matrix per head)
// are copied into it.
template <typename Lookup>
ad::Tensor transformer_forward(ad::Tape& tape, Lookup&& p, const ModelConfig& cfg,
                               const SeqExample* ex, std::size_t count,
                               std::vector<Matrix>* attn_out) {
    const int len = cfg.max_len, d = cfg.embed_dim;
    const int dh = d / cfg.heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::vector<double> pe =
        cfg.positional ? positional_encoding(len, d) : std::vector<double>();

    std::vector<ad::Tensor> pooled;
    pooled.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ad::Tensor x = ad::gather_rows(p("embed"), ex[i].ctx);
        if (cfg.positional) x = ad::add(x, tape.leaf({len, d}, pe, false));

        const ad::Tensor q = ad::matmul(x, p("wq"));
        const ad::Tensor k = ad::matmul(x, p("wk"));
        const ad::Tensor v = ad::matmul(x, p("wv"));

        // keys at padded positions are additively masked out of every query row
        std::vector<double> mask(static_cast<std::size_t>(len) * len, 0.0);
        for (int qi = 0; qi < len; ++qi)
            for (int ki = ex[i].len; ki < len; ++ki)
                mask[static_cast<std::size_t>(qi) * len + ki] = -1e9;
        const ad::Tensor mask_t = tape.leaf({len, len}, mask, false);

        ad::Tensor heads_cat;
        for (int h = 0; h < cfg.heads; ++h) {
            const ad::Tensor qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
            const ad::Tensor kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
            const ad::Tensor vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
            const ad::Tensor scores =
                ad::add(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dh), mask_t);
            const ad::Tensor attn = ad::softmax_rows(scores);
            if (attn_out != nullptr && i == 0) {
                Matrix a(static_cast<std::size_t>(len), static_cast<std::size_t>(len));
                a.data = attn.values();
                attn_out->push_back(std::move(a));
            }
            const ad::Tensor head = ad::matmul(attn, vh);
            heads_cat = (h == 0) ? head : ad::concat_cols(heads_cat, head);
        }
        const ad::Tensor attn_proj = ad::matmul(heads_cat, p("wo"));
        const ad::Tensor n1 =
            ad::layer_norm_rows(ad::add(x, attn_proj), p("ln1_g"), p("ln1_b"));
        const ad::Tensor ff = ad::add(
            ad::matmul(ad::relu(ad::add(ad::matmul(n1, p("ff_w1")), p("ff_b1"))), p("ff_w2")),
            p("ff_b2"));
        const ad::Tensor n2 = ad::layer_norm_rows(ad::add(n1, ff), p("ln2_g"), p("ln2_b"));

        std::vector<double> pool_row(static_cast<std::size_t>(len), 0.0);
        for (int t = 0; t < ex[i].len; ++t) pool_row[t] = 1.0 / ex[i].len;
        pooled.push_back(ad::matmul(tape.leaf({1, len}, pool_row, false), n2));
    }
    const ad::Tensor batch = count == 1 ? pooled[0] : ad::concat_rows(pooled);
    return ad::add(ad::matmul(batch, p("head_w")), p("head_b"));
}

inline nn::ParamStore transformer_make_params(const ModelConfig& cfg, int n_items) {
    nn::ParamStore params;
    params.add("embed", {n_items + 1, cfg.embed_dim});
    params.add("wq", {cfg.embed_dim, cfg.embed_dim});
    params.add("wk", {cfg.embed_dim, cfg.embed_dim});
    params.add("wv", {cfg.embed_dim, cfg.embed_dim});
    params.add("wo", {cfg.embed_dim, cfg.embed_dim});
    params.add("ln1_g", {cfg.embed_dim});
    params.add("ln1_b", {cfg.embed_dim});
    params.add("ff_w1", {cfg.embed_dim, cfg.hidden});
    params.add("ff_b1", {cfg.hidden});
    params.add("ff_w2", {cfg.hidden, cfg.embed_dim});
    params.add("ff_b2", {cfg.embed_dim});
    params.add("ln2_g", {cfg.embed_dim});
    params.add("ln2_b", {cfg.embed_dim});
    params.add("head_w", {cfg.embed_dim, n_items});
    params.add("head_b", {n_items});
    Rng init_rng(cfg.seed);
    nn::glorot_init(params, init_rng);
    for (const char* gain : {"ln1_g", "ln2_g"})
        for (double& v : params.at(gain).value) v = 1.0;
    return params;
}

inline ad::Tensor transformer_batch_loss(ad::Tape& tape, nn::BoundParams& bound,
                                         const ModelConfig& cfg, int n_items,
                                         const SeqExample* ex, std::size_t count) {
    auto lookup = [&bound](const std::string& name) { return bound[name]; };
    const ad::Tensor logits = transformer_forward(tape, lookup, cfg, ex, count, nullptr);
    std::vector<int> targets(count);
    for (std::size_t i = 0; i < count; ++i) targets[i] = ex[i].target;
    const ad::Tensor y =
        tape.leaf({static_cast<int>(count), n_items}, one_hot_rows(targets, n_items), false);
    return ad::softmax_cross_entropy(logits, y);
}

}  // namespace detail

inline TrainedModel train_transformer(const ModelConfig& cfg, const PreprocessedData& data) {
    if (cfg.kind != ModelKind::transformer)
        throw InvalidConfigError("train_transformer: config.kind != transformer");
    cfg.validate();
    const int n = data.n_items();
    const IndexedSplit split = detail::split_indexed(data.sessions, data.config.split_ratio);
    std::vector<detail::SeqExample> examples =
        detail::next_item_examples(split.train, cfg.max_len, n);

    nn::ParamStore params = detail::transformer_make_params(cfg, n);

    TrainedModel model;
    model.config = cfg;
    model.training_log = detail::run_epochs(
        std::move(examples), cfg, params,
        [&](ad::Tape& tape, nn::BoundParams& bound, const detail::SeqExample* ex, std::size_t count,
            int epoch, std::size_t batch_index) {
            (void)epoch;
            (void)batch_index;
            return detail::transformer_batch_loss(tape, bound, cfg, n, ex, count);
        });
    model.params = std::move(params);
    detail::finalize_table_model(model, data, split.train);
    return model;
}

inline std::vector<double> score_transformer(const TrainedModel& m, const RecContext& ctx,
                                             std::vector<Matrix>* attn_out = nullptr) {
    detail::require_kind(m, ModelKind::transformer, "score_transformer");
    detail::check_context(m, ctx);
    ad::Tape tape;
    ConstParams cp(m.params, tape);
    cp.put_matrix("embed", detail::scoring_table(m), tape);
    detail::SeqExample ex;
    ex.ctx = ctx.item_sequence;
    ex.len = ctx.true_length;
    const ad::Tensor logits = detail::transformer_forward(tape, cp, m.config, &ex, 1, attn_out);
    return logits.values();
}

}  // namespace recbench::models
