#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recbench/models/common.hpp"

namespace recbench::models {

namespace detail {

// Single-layer LSTM over the padded contexts. Standard gate equations with
// gate order [input, forget, cell, output] packed along the columns of wx/wh.
// Steps at or beyond an example's true length leave its h/c untouched, so
// trailing padding can never change the final state.
template <typename Lookup>
ad::Tensor rnn_forward(ad::Tape& tape, Lookup&& p, const ModelConfig& cfg, const SeqExample* ex,
                       std::size_t count, bool training, std::uint64_t dropout_seed) {
    const int b = static_cast<int>(count);
    const int hidden = cfg.hidden;
    ad::Tensor h = tape.full({b, hidden}, 0.0);
    ad::Tensor c = tape.full({b, hidden}, 0.0);
    for (int t = 0; t < cfg.max_len; ++t) {
        std::vector<int> idx(count);
        std::vector<double> keep(static_cast<std::size_t>(b) * hidden, 0.0);
        std::vector<double> freeze(static_cast<std::size_t>(b) * hidden, 1.0);
        bool any_active = false;
        for (std::size_t i = 0; i < count; ++i) {
            idx[i] = ex[i].ctx[t];
            if (t < ex[i].len) {
                any_active = true;
                for (int j = 0; j < hidden; ++j) {
                    keep[i * static_cast<std::size_t>(hidden) + j] = 1.0;
                    freeze[i * static_cast<std::size_t>(hidden) + j] = 0.0;
                }
            }
        }
        if (!any_active) break;  // everything past this step is padding
        const ad::Tensor xt = ad::gather_rows(p("embed"), idx);
        const ad::Tensor z =
            ad::add(ad::add(ad::matmul(xt, p("wx")), ad::matmul(h, p("wh"))), p("b"));
        const ad::Tensor gi = ad::sigmoid(ad::slice_cols(z, 0, hidden));
        const ad::Tensor gf = ad::sigmoid(ad::slice_cols(z, hidden, 2 * hidden));
        const ad::Tensor gg = ad::tanh(ad::slice_cols(z, 2 * hidden, 3 * hidden));
        const ad::Tensor go = ad::sigmoid(ad::slice_cols(z, 3 * hidden, 4 * hidden));
        const ad::Tensor c_new = ad::add(ad::mul(gf, c), ad::mul(gi, gg));
        const ad::Tensor h_new = ad::mul(go, ad::tanh(c_new));
        const ad::Tensor m_keep = tape.leaf({b, hidden}, keep, false);
        const ad::Tensor m_freeze = tape.leaf({b, hidden}, freeze, false);
        c = ad::add(ad::mul(m_keep, c_new), ad::mul(m_freeze, c));
        h = ad::add(ad::mul(m_keep, h_new), ad::mul(m_freeze, h));
    }
    const ad::Tensor drop = ad::dropout(h, cfg.dropout, training, dropout_seed);
    return ad::add(ad::matmul(drop, p("head_w")), p("head_b"));
}

inline nn::ParamStore rnn_make_params(const ModelConfig& cfg, int n_items) {
    nn::ParamStore params;
    params.add("embed", {n_items + 1, cfg.embed_dim});
    params.add("wx", {cfg.embed_dim, 4 * cfg.hidden});
    params.add("wh", {cfg.hidden, 4 * cfg.hidden});
    params.add("b", {4 * cfg.hidden});
    params.add("head_w", {cfg.hidden, n_items});
    params.add("head_b", {n_items});
    Rng init_rng(cfg.seed);
    nn::glorot_init(params, init_rng);
    return params;
}

inline ad::Tensor rnn_batch_loss(ad::Tape& tape, nn::BoundParams& bound, const ModelConfig& cfg,
                                 int n_items, const SeqExample* ex, std::size_t count, int epoch,
                                 std::size_t batch_index) {
    auto lookup = [&bound](const std::string& name) { return bound[name]; };
    const ad::Tensor logits =
        rnn_forward(tape, lookup, cfg, ex, count, true, batch_seed(cfg.seed, epoch, batch_index));
    std::vector<int> targets(count);
    for (std::size_t i = 0; i < count; ++i) targets[i] = ex[i].target;
    const ad::Tensor y =
        tape.leaf({static_cast<int>(count), n_items}, one_hot_rows(targets, n_items), false);
    return ad::softmax_cross_entropy(logits, y);
}

}  // namespace detail

inline TrainedModel train_rnn(const ModelConfig& cfg, const PreprocessedData& data) {
    if (cfg.kind != ModelKind::rnn) throw InvalidConfigError("train_rnn: config.kind != rnn");
    cfg.validate();
    const int n = data.n_items();
    const IndexedSplit split = detail::split_indexed(data.sessions, data.config.split_ratio);
    std::vector<detail::SeqExample> examples =
        detail::next_item_examples(split.train, cfg.max_len, n);

    nn::ParamStore params = detail::rnn_make_params(cfg, n);

    TrainedModel model;
    model.config = cfg;
    model.training_log = detail::run_epochs(
        std::move(examples), cfg, params,
        [&](ad::Tape& tape, nn::BoundParams& bound, const detail::SeqExample* ex, std::size_t count,
            int epoch, std::size_t batch_index) {
            return detail::rnn_batch_loss(tape, bound, cfg, n, ex, count, epoch, batch_index);
        });
    model.params = std::move(params);
    detail::finalize_table_model(model, data, split.train);
    return model;
}

inline std::vector<double> score_rnn(const TrainedModel& m, const RecContext& ctx) {
    detail::require_kind(m, ModelKind::rnn, "score_rnn");
    detail::check_context(m, ctx);
    ad::Tape tape;
    ConstParams cp(m.params, tape);
    cp.put_matrix("embed", detail::scoring_table(m), tape);
    detail::SeqExample ex;
    ex.ctx = ctx.item_sequence;
    ex.len = ctx.true_length;
    const ad::Tensor logits = detail::rnn_forward(tape, cp, m.config, &ex, 1, false, 0);
    return logits.values();
}

}  // namespace recbench::models
