#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recbench/models/common.hpp"

namespace recbench::models {

namespace detail {

struct SessionExample {
    std::vector<int> items;  // distinct item indices of one training session
};

// y = relu(x W + b) when `rectify`, else the affine map alone. Plain loops:
// the scoring path needs no tape.
inline std::vector<double> affine_forward(const std::vector<double>& x, const nn::Param& w,
                                          const nn::Param& b, bool rectify) {
    const std::size_t in = static_cast<std::size_t>(w.shape[0]);
    const std::size_t out = static_cast<std::size_t>(w.shape[1]);
    std::vector<double> y(b.value);
    for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        for (std::size_t o = 0; o < out; ++o) y[o] += xi * w.value[i * out + o];
    }
    if (rectify)
        for (double& v : y) v = v > 0.0 ? v : 0.0;
    return y;
}

inline std::vector<double> autoencoder_logits(const nn::ParamStore& p,
                                              const std::vector<double>& multi_hot) {
    const auto h1 = affine_forward(multi_hot, p.at("enc_w1"), p.at("enc_b1"), true);
    const auto z = affine_forward(h1, p.at("enc_w2"), p.at("enc_b2"), false);
    const auto h2 = affine_forward(z, p.at("dec_w1"), p.at("dec_b1"), true);
    return affine_forward(h2, p.at("dec_w2"), p.at("dec_b2"), false);
}

inline nn::ParamStore autoencoder_make_params(const ModelConfig& cfg, int n_items) {
    nn::ParamStore params;
    params.add("enc_w1", {n_items, cfg.hidden});
    params.add("enc_b1", {cfg.hidden});
    params.add("enc_w2", {cfg.hidden, cfg.bottleneck});
    params.add("enc_b2", {cfg.bottleneck});
    params.add("dec_w1", {cfg.bottleneck, cfg.hidden});
    params.add("dec_b1", {cfg.hidden});
    params.add("dec_w2", {cfg.hidden, n_items});
    params.add("dec_b2", {n_items});
    Rng init_rng(cfg.seed);
    nn::glorot_init(params, init_rng);
    return params;
}

inline constexpr double kAutoencoderMaskRate = 0.2;  // denoising: inputs hidden

// Reconstruction objective: binary cross-entropy of the full session
// multi-hot from a partially masked copy of itself.
inline ad::Tensor autoencoder_batch_loss(ad::Tape& tape, nn::BoundParams& bound,
                                         const ModelConfig& cfg, int n_items,
                                         const SessionExample* ex, std::size_t count, int epoch,
                                         std::size_t batch_index) {
    Rng mask_rng(batch_seed(cfg.seed, epoch, batch_index));
    const int b = static_cast<int>(count);
    std::vector<double> input(count * static_cast<std::size_t>(n_items), 0.0);
    std::vector<double> target(count * static_cast<std::size_t>(n_items), 0.0);
    for (std::size_t r = 0; r < count; ++r) {
        for (int item : ex[r].items) {
            target[r * static_cast<std::size_t>(n_items) + item] = 1.0;
            if (mask_rng.uniform01() >= kAutoencoderMaskRate)
                input[r * static_cast<std::size_t>(n_items) + item] = 1.0;
        }
    }
    const ad::Tensor x = tape.leaf({b, n_items}, input, false);
    const ad::Tensor h1 = ad::relu(ad::add(ad::matmul(x, bound["enc_w1"]), bound["enc_b1"]));
    const ad::Tensor z = ad::add(ad::matmul(h1, bound["enc_w2"]), bound["enc_b2"]);
    const ad::Tensor h2 = ad::relu(ad::add(ad::matmul(z, bound["dec_w1"]), bound["dec_b1"]));
    const ad::Tensor logits = ad::add(ad::matmul(h2, bound["dec_w2"]), bound["dec_b2"]);
    const ad::Tensor y = tape.leaf({b, n_items}, target, false);
    return ad::bce_with_logits(logits, y);
}

}  // namespace detail

inline TrainedModel train_autoencoder(const ModelConfig& cfg, const PreprocessedData& data) {
    if (cfg.kind != ModelKind::autoencoder)
        throw InvalidConfigError("train_autoencoder: config.kind != autoencoder");
    cfg.validate();
    const int n = data.n_items();
    const IndexedSplit split = detail::split_indexed(data.sessions, data.config.split_ratio);
    std::vector<detail::SessionExample> examples;
    for (const auto& s : split.train) {
        std::vector<int> items = s.items;
        std::sort(items.begin(), items.end());
        items.erase(std::unique(items.begin(), items.end()), items.end());
        if (!items.empty()) examples.push_back({std::move(items)});
    }

    nn::ParamStore params = detail::autoencoder_make_params(cfg, n);

    TrainedModel model;
    model.config = cfg;
    model.training_log = detail::run_epochs(
        std::move(examples), cfg, params,
        [&](ad::Tape& tape, nn::BoundParams& bound, const detail::SessionExample* ex,
            std::size_t count, int epoch, std::size_t batch_index) {
            return detail::autoencoder_batch_loss(tape, bound, cfg, n, ex, count, epoch,
                                                  batch_index);
        });
    model.params = std::move(params);
    model.n_items = n;
    model.item_categories = data.item_categories;
    model.data_fingerprint = detail::data_fingerprint(data);

    // Item embeddings: encoder output for each one-hot catalog vector.
    model.item_embeddings =
        Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(cfg.bottleneck));
    std::vector<double> one_hot(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        one_hot[i] = 1.0;
        const auto h1 = detail::affine_forward(one_hot, model.params.at("enc_w1"),
                                               model.params.at("enc_b1"), true);
        const auto z = detail::affine_forward(h1, model.params.at("enc_w2"),
                                              model.params.at("enc_b2"), false);
        for (int c = 0; c < cfg.bottleneck; ++c) model.item_embeddings.at(i, c) = z[c];
        one_hot[i] = 0.0;
    }
    detail::patch_cold_start(model.item_embeddings, detail::seen_mask(split.train, n),
                             model.item_categories, model.cold_start_items);
    return model;
}

// Reconstruction probabilities for the context's multi-hot vector; every
// catalog item gets a probability in (0,1).
inline std::vector<double> score_autoencoder(const TrainedModel& m, const RecContext& ctx) {
    detail::require_kind(m, ModelKind::autoencoder, "score_autoencoder");
    detail::check_context(m, ctx);
    std::vector<double> multi_hot(static_cast<std::size_t>(m.n_items), 0.0);
    for (int item : ctx.real_items()) multi_hot[item] = 1.0;
    std::vector<double> logits = detail::autoencoder_logits(m.params, multi_hot);
    for (double& v : logits) v = 1.0 / (1.0 + std::exp(-v));
    return logits;
}

}  // namespace recbench::models
