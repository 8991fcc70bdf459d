#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "recbench/models/autoencoder.hpp"
#include "recbench/models/cnn.hpp"
#include "recbench/models/common.hpp"
#include "recbench/models/gnn.hpp"
#include "recbench/models/ncf.hpp"
#include "recbench/models/rnn.hpp"
#include "recbench/models/siamese.hpp"
#include "recbench/models/transformer.hpp"

namespace recbench::models {

// Train one recommender of the configured kind. The co-occurrence graph is
// required for gnn (propagation structure) and optional for siamese
// (positive pairs; built from the training sessions when absent).
inline TrainedModel fit(const ModelConfig& cfg, const PreprocessedData& data,
                        const ItemGraph* g = nullptr) {
    if (data.sessions.empty()) throw EmptyTrainingSetError();
    switch (cfg.kind) {
        case ModelKind::cnn: return train_cnn(cfg, data);
        case ModelKind::rnn: return train_rnn(cfg, data);
        case ModelKind::gnn:
            if (g == nullptr)
                throw InvalidConfigError("gnn requires a co-occurrence graph");
            return train_gnn(cfg, data, *g);
        case ModelKind::autoencoder: return train_autoencoder(cfg, data);
        case ModelKind::transformer: return train_transformer(cfg, data);
        case ModelKind::ncf: return train_ncf(cfg, data);
        case ModelKind::siamese: return train_siamese(cfg, data, g);
    }
    throw InvalidConfigError("unknown model kind");
}

// Kind-dispatched catalog scores for one context.
inline std::vector<double> score(const TrainedModel& m, const RecContext& ctx) {
    switch (m.config.kind) {
        case ModelKind::cnn: return score_cnn(m, ctx);
        case ModelKind::rnn: return score_rnn(m, ctx);
        case ModelKind::gnn: return score_gnn(m, ctx);
        case ModelKind::autoencoder: return score_autoencoder(m, ctx);
        case ModelKind::transformer: return score_transformer(m, ctx);
        case ModelKind::ncf: return score_ncf(m, ctx);
        case ModelKind::siamese: return score_siamese(m, ctx);
    }
    throw InvalidConfigError("unknown model kind");
}

// Top-k slate: sort by (-score, item index); context items are dropped first
// when exclude_context. Returns exactly k entries unless exclusion exhausts
// the catalog.
inline RankedList recommend_topk(const TrainedModel& m, const RecContext& ctx, int k,
                                 bool exclude_context = true) {
    if (k < 1 || k > m.n_items) throw InvalidConfigError("k must be in [1, n_items]");
    const std::vector<double> s = score(m, ctx);
    std::vector<bool> excluded(s.size(), false);
    if (exclude_context) {
        for (int item : ctx.real_items()) excluded[item] = true;
    }
    std::vector<int> order;
    order.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        if (!excluded[i]) order.push_back(static_cast<int>(i));
    std::sort(order.begin(), order.end(), [&s](int a, int b) {
        if (s[a] != s[b]) return s[a] > s[b];
        return a < b;
    });
    RankedList out;
    const std::size_t take = std::min<std::size_t>(order.size(), static_cast<std::size_t>(k));
    out.items.assign(order.begin(), order.begin() + take);
    out.scores.reserve(take);
    for (int item : out.items) out.scores.push_back(s[item]);
    return out;
}

// The model's embedding row for one item (already cold-start patched).
inline std::vector<double> embed(const TrainedModel& m, int item) {
    if (item < 0 || item >= m.n_items) throw UnknownNodeError(item);
    return m.item_embeddings.row(static_cast<std::size_t>(item));
}

// ---------------------------------------------------------------------------
// Persistence: parameter blob + JSON sidecar
// ---------------------------------------------------------------------------

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"kind", to_string(c.kind)},
                          {"embed_dim", c.embed_dim},
                          {"lr", c.lr},
                          {"batch", c.batch},
                          {"epochs", c.epochs},
                          {"seed", c.seed},
                          {"max_len", c.max_len},
                          {"hidden", c.hidden},
                          {"heads", c.heads},
                          {"gnn_rounds", c.gnn_rounds},
                          {"bottleneck", c.bottleneck},
                          {"neg_samples", c.neg_samples},
                          {"margin", c.margin},
                          {"dropout", c.dropout},
                          {"positional", c.positional}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c = ModelConfig::defaults(parse_model_kind(j.at("kind").get<std::string>()));
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.max_len = j.value("max_len", c.max_len);
    c.hidden = j.value("hidden", c.hidden);
    c.heads = j.value("heads", c.heads);
    c.gnn_rounds = j.value("gnn_rounds", c.gnn_rounds);
    c.bottleneck = j.value("bottleneck", c.bottleneck);
    c.neg_samples = j.value("neg_samples", c.neg_samples);
    c.margin = j.value("margin", c.margin);
    c.dropout = j.value("dropout", c.dropout);
    c.positional = j.value("positional", c.positional);
    return c;
}

// Writes `path` (parameter blob, including the derived item-embedding matrix
// under a reserved name) and `path + ".json"` (kind, config, fingerprint,
// catalog metadata).
inline void save_model(const TrainedModel& m, const std::filesystem::path& path) {
    nn::ParamStore blob = m.params;
    nn::Param& emb = blob.add("__item_embeddings",
                              {static_cast<int>(m.item_embeddings.rows),
                               static_cast<int>(m.item_embeddings.cols)});
    emb.value = m.item_embeddings.data;
    nn::save_checkpoint(blob, path);

    nlohmann::json side{{"kind", to_string(m.config.kind)},
                        {"config", config_to_json(m.config)},
                        {"seed", m.config.seed},
                        {"data_fingerprint", m.data_fingerprint},
                        {"n_items", m.n_items},
                        {"item_categories", m.item_categories},
                        {"cold_start_items", m.cold_start_items},
                        {"training_log", m.training_log}};
    std::ofstream os(path.string() + ".json", std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + ".json for writing");
    os << side.dump(2) << "\n";
}

// Rebuilds a scoring-ready model. The training graph is not persisted, so a
// loaded gnn scores against its cached propagated embeddings.
inline TrainedModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path.string() + ".json", std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string() + ".json");
    nlohmann::json side = nlohmann::json::parse(is, nullptr, true);

    TrainedModel m;
    m.config = config_from_json(side.at("config"));
    m.data_fingerprint = side.at("data_fingerprint").get<std::uint64_t>();
    m.n_items = side.at("n_items").get<int>();
    m.item_categories = side.at("item_categories").get<std::vector<int>>();
    m.cold_start_items = side.at("cold_start_items").get<std::vector<int>>();
    m.training_log = side.at("training_log").get<std::vector<double>>();

    nn::ParamStore blob = nn::load_checkpoint(path);
    const nn::Param& emb = blob.at("__item_embeddings");
    m.item_embeddings = Matrix(static_cast<std::size_t>(emb.shape[0]),
                               static_cast<std::size_t>(emb.shape[1]));
    m.item_embeddings.data = emb.value;
    for (const nn::Param& p : blob.params()) {
        if (p.name == "__item_embeddings") continue;
        nn::Param& dst = m.params.add(p.name, p.shape);
        dst.value = p.value;
    }
    return m;
}

}  // namespace recbench::models
