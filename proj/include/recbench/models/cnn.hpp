#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recbench/models/common.hpp"

namespace recbench::models {

namespace detail {

inline constexpr int kCnnKernelHeight = 3;

// Batch forward: embed the padded contexts as (B, max_len, embed_dim, 1)
// images, convolve with height-3 full-width kernels, max-pool the full conv
// column, then ReLU -> dropout -> dense head over the catalog.
template <typename Lookup>
ad::Tensor cnn_forward(Lookup&& p, const ModelConfig& cfg, const SeqExample* ex,
                       std::size_t count, bool training, std::uint64_t dropout_seed) {
    const int b = static_cast<int>(count);
    const int len = cfg.max_len, d = cfg.embed_dim;
    std::vector<int> idx;
    idx.reserve(count * static_cast<std::size_t>(len));
    for (std::size_t i = 0; i < count; ++i)
        idx.insert(idx.end(), ex[i].ctx.begin(), ex[i].ctx.end());
    const ad::Tensor rows = ad::gather_rows(p("embed"), idx);
    const ad::Tensor img = ad::reshape(rows, {b, len, d, 1});
    const int conv_h = len - kCnnKernelHeight + 1;
    const ad::Tensor pooled = ad::conv2d_maxpool(img, p("conv_k"), 1, conv_h, 1);
    const ad::Tensor flat = ad::reshape(pooled, {b, cfg.hidden});
    const ad::Tensor act = ad::relu(flat);
    const ad::Tensor drop = ad::dropout(act, cfg.dropout, training, dropout_seed);
    return ad::add(ad::matmul(drop, p("head_w")), p("head_b"));
}

inline nn::ParamStore cnn_make_params(const ModelConfig& cfg, int n_items) {
    nn::ParamStore params;
    params.add("embed", {n_items + 1, cfg.embed_dim});
    params.add("conv_k", {kCnnKernelHeight, cfg.embed_dim, 1, cfg.hidden});
    params.add("head_w", {cfg.hidden, n_items});
    params.add("head_b", {n_items});
    Rng init_rng(cfg.seed);
    nn::glorot_init(params, init_rng);
    return params;
}

// Training objective for one minibatch: softmax cross-entropy against the
// one-hot next item.
inline ad::Tensor cnn_batch_loss(ad::Tape& tape, nn::BoundParams& bound, const ModelConfig& cfg,
                                 int n_items, const SeqExample* ex, std::size_t count, int epoch,
                                 std::size_t batch_index) {
    auto lookup = [&bound](const std::string& name) { return bound[name]; };
    const ad::Tensor logits =
        cnn_forward(lookup, cfg, ex, count, true, batch_seed(cfg.seed, epoch, batch_index));
    std::vector<int> targets(count);
    for (std::size_t i = 0; i < count; ++i) targets[i] = ex[i].target;
    const ad::Tensor y =
        tape.leaf({static_cast<int>(count), n_items}, one_hot_rows(targets, n_items), false);
    return ad::softmax_cross_entropy(logits, y);
}

}  // namespace detail

inline TrainedModel train_cnn(const ModelConfig& cfg, const PreprocessedData& data) {
    if (cfg.kind != ModelKind::cnn) throw InvalidConfigError("train_cnn: config.kind != cnn");
    cfg.validate();
    if (cfg.max_len < detail::kCnnKernelHeight)
        throw InvalidConfigError("cnn needs max_len >= 3 (kernel height)");
    const int n = data.n_items();
    const IndexedSplit split = detail::split_indexed(data.sessions, data.config.split_ratio);
    std::vector<detail::SeqExample> examples =
        detail::next_item_examples(split.train, cfg.max_len, n);

    nn::ParamStore params = detail::cnn_make_params(cfg, n);

    TrainedModel model;
    model.config = cfg;
    model.training_log = detail::run_epochs(
        std::move(examples), cfg, params,
        [&](ad::Tape& tape, nn::BoundParams& bound, const detail::SeqExample* ex, std::size_t count,
            int epoch, std::size_t batch_index) {
            return detail::cnn_batch_loss(tape, bound, cfg, n, ex, count, epoch, batch_index);
        });
    model.params = std::move(params);
    detail::finalize_table_model(model, data, split.train);
    return model;
}

inline std::vector<double> score_cnn(const TrainedModel& m, const RecContext& ctx) {
    detail::require_kind(m, ModelKind::cnn, "score_cnn");
    detail::check_context(m, ctx);
    ad::Tape tape;
    ConstParams cp(m.params, tape);
    cp.put_matrix("embed", detail::scoring_table(m), tape);
    detail::SeqExample ex;
    ex.ctx = ctx.item_sequence;
    ex.len = ctx.true_length;
    const ad::Tensor logits = detail::cnn_forward(cp, m.config, &ex, 1, false, 0);
    return logits.values();
}

}  // namespace recbench::models
