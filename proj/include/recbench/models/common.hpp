#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "recbench/autodiff.hpp"
#include "recbench/errors.hpp"
#include "recbench/graph.hpp"
#include "recbench/matrix.hpp"
#include "recbench/nn.hpp"
#include "recbench/preprocess.hpp"
#include "recbench/rng.hpp"
#include "recbench/types.hpp"

namespace recbench::models {

enum class ModelKind { cnn, rnn, gnn, autoencoder, transformer, ncf, siamese };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::cnn: return "cnn";
        case ModelKind::rnn: return "rnn";
        case ModelKind::gnn: return "gnn";
        case ModelKind::autoencoder: return "autoencoder";
        case ModelKind::transformer: return "transformer";
        case ModelKind::ncf: return "ncf";
        case ModelKind::siamese: return "siamese";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    for (ModelKind k : {ModelKind::cnn, ModelKind::rnn, ModelKind::gnn, ModelKind::autoencoder,
                        ModelKind::transformer, ModelKind::ncf, ModelKind::siamese}) {
        if (s == to_string(k)) return k;
    }
    throw InvalidConfigError("unknown model kind: " + s);
}

inline const std::vector<ModelKind>& all_model_kinds() {
    static const std::vector<ModelKind> kinds = {
        ModelKind::cnn,         ModelKind::rnn, ModelKind::gnn,    ModelKind::autoencoder,
        ModelKind::transformer, ModelKind::ncf, ModelKind::siamese};
    return kinds;
}

// Hyperparameters for one recommender. `defaults(kind)` reproduces the
// published per-architecture settings; everything is overridable.
struct ModelConfig {
    ModelKind kind = ModelKind::cnn;
    int embed_dim = 32;
    double lr = 0.001;
    int batch = 128;
    int epochs = 30;
    std::uint64_t seed = 1;
    int max_len = 10;     // context window for every sequence model
    int hidden = 64;      // dense widths, LSTM units, CNN filter count
    int heads = 4;        // transformer attention heads
    int gnn_rounds = 2;   // graph aggregation rounds
    int bottleneck = 16;  // autoencoder latent width
    int neg_samples = 4;  // negatives per positive (ncf, gnn)
    double margin = 0.5;  // siamese contrastive margin
    double dropout = 0.0;
    bool positional = true;  // transformer positional encoding

    static ModelConfig defaults(ModelKind kind) {
        ModelConfig c;
        c.kind = kind;
        switch (kind) {
            case ModelKind::cnn:
                c.lr = 0.001; c.batch = 128; c.epochs = 30; c.dropout = 0.2;
                break;
            case ModelKind::rnn:
                c.lr = 0.01; c.batch = 64; c.epochs = 50; c.dropout = 0.5;
                break;
            case ModelKind::gnn:
                c.lr = 0.005; c.batch = 0; c.epochs = 40;  // batch 0: full-batch
                break;
            case ModelKind::autoencoder:
                c.lr = 0.001; c.batch = 256; c.epochs = 50;
                break;
            case ModelKind::transformer:
                c.lr = 0.0001; c.batch = 32; c.epochs = 20;
                break;
            case ModelKind::ncf:
                c.lr = 0.0005; c.batch = 128; c.epochs = 30;
                break;
            case ModelKind::siamese:
                c.lr = 0.0005; c.batch = 64; c.epochs = 35;
                break;
        }
        return c;
    }

    void validate() const {
        if (epochs < 1) throw InvalidConfigError("epochs must be >= 1");
        if (!(lr > 0.0)) throw InvalidConfigError("lr must be > 0");
        if (embed_dim < 1) throw InvalidConfigError("embed_dim must be >= 1");
        if (kind != ModelKind::gnn && batch < 1)
            throw InvalidConfigError("batch must be >= 1");
        if (max_len < 1) throw InvalidConfigError("max_len must be >= 1");
        if (hidden < 1) throw InvalidConfigError("hidden must be >= 1");
        if (bottleneck < 1) throw InvalidConfigError("bottleneck must be >= 1");
        if (kind == ModelKind::transformer) {
            if (heads < 1) throw InvalidConfigError("heads must be >= 1");
            if (embed_dim % heads != 0)
                throw InvalidConfigError("embed_dim must be divisible by heads");
        }
        if (kind == ModelKind::gnn && gnn_rounds < 1)
            throw InvalidConfigError("gnn_rounds must be >= 1");
        if (neg_samples < 1) throw InvalidConfigError("neg_samples must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw InvalidConfigError("dropout must be in [0,1)");
        if (!(margin > 0.0) || margin >= 1.0)
            throw InvalidConfigError("margin must be in (0,1)");
    }
};

// A session context ready for scoring: the most recent items, oldest first,
// right-padded with the reserved index n_items.
struct RecContext {
    std::vector<int> item_sequence;  // length = max_len
    int true_length = 0;
    int anchor = -1;  // last real item

    static RecContext from_items(const std::vector<int>& items, int max_len, int n_items) {
        if (items.empty()) throw EmptyInputError("context has no items");
        if (max_len < 1) throw InvalidConfigError("max_len must be >= 1");
        RecContext ctx;
        const std::size_t take = std::min<std::size_t>(items.size(), max_len);
        ctx.item_sequence.assign(items.end() - take, items.end());
        for (int i : ctx.item_sequence) {
            if (i < 0 || i >= n_items) throw UnknownNodeError(i);
        }
        ctx.true_length = static_cast<int>(take);
        ctx.anchor = ctx.item_sequence.back();
        ctx.item_sequence.resize(max_len, n_items);  // pad
        return ctx;
    }

    // indices that refer to real items (no padding)
    std::vector<int> real_items() const {
        return std::vector<int>(item_sequence.begin(), item_sequence.begin() + true_length);
    }
};

// Output of fit(): immutable, safe to score concurrently.
struct TrainedModel {
    ModelConfig config;
    nn::ParamStore params;
    Matrix item_embeddings;            // n_items x d, cold-start rows patched
    std::vector<int> cold_start_items;  // indices that received the fallback embedding
    std::vector<double> training_log;   // per-epoch mean loss
    int n_items = 0;
    std::vector<int> item_categories;
    std::uint64_t data_fingerprint = 0;
    std::shared_ptr<const ItemGraph> train_graph;  // gnn (propagation), siamese (pairs)
};

// ---------------------------------------------------------------------------
// Shared fit-time helpers
// ---------------------------------------------------------------------------

namespace detail {

// Chronological split over already-indexed sessions, same ordering rule as
// the string-keyed split.
inline IndexedSplit split_indexed(std::vector<IndexedSession> sessions, double ratio) {
    if (ratio <= 0.0 || ratio >= 1.0) throw InvalidConfigError("split ratio must be in (0,1)");
    if (sessions.empty()) throw EmptyInputError("split_indexed: no sessions");
    std::sort(sessions.begin(), sessions.end(), [](const IndexedSession& a, const IndexedSession& b) {
        if (a.start_ts != b.start_ts) return a.start_ts < b.start_ts;
        return a.session_id < b.session_id;
    });
    const std::size_t n = sessions.size();
    const std::size_t n_train =
        static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
    IndexedSplit split;
    split.split_ratio = ratio;
    split.train.assign(sessions.begin(), sessions.begin() + std::min(n_train, n));
    split.test.assign(sessions.begin() + std::min(n_train, n), sessions.end());
    return split;
}

// One supervised example for the next-item objective.
struct SeqExample {
    std::vector<int> ctx;  // length max_len, right-padded with n_items
    int len = 0;
    int target = -1;
};

inline std::vector<SeqExample> next_item_examples(const std::vector<IndexedSession>& sessions,
                                                  int max_len, int n_items) {
    std::vector<SeqExample> out;
    for (const auto& s : sessions) {
        for (std::size_t t = 1; t < s.items.size(); ++t) {
            SeqExample ex;
            const std::size_t from = t > static_cast<std::size_t>(max_len) ? t - max_len : 0;
            ex.ctx.assign(s.items.begin() + from, s.items.begin() + t);
            ex.len = static_cast<int>(ex.ctx.size());
            ex.ctx.resize(max_len, n_items);
            ex.target = s.items[t];
            out.push_back(std::move(ex));
        }
    }
    return out;
}

// Per-epoch generator seeds derived from (config seed, epoch); batchwise
// dropout seeds extend this with the batch index.
inline std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
    return Rng::splitmix(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1));
}

inline std::uint64_t batch_seed(std::uint64_t seed, int epoch, std::size_t batch_index) {
    return Rng::splitmix(epoch_seed(seed, epoch) ^ (batch_index + 1));
}

// Mean embedding of same-category trained items for every item never seen in
// training; global mean when the category has no trained items.
inline void patch_cold_start(Matrix& emb, const std::vector<bool>& seen,
                             const std::vector<int>& categories,
                             std::vector<int>& cold_items) {
    const std::size_t n = emb.rows, d = emb.cols;
    std::vector<double> global(d, 0.0);
    std::map<int, std::vector<double>> per_cat;
    std::map<int, std::size_t> per_cat_n;
    std::size_t n_seen = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!seen[i]) continue;
        ++n_seen;
        auto& acc = per_cat[categories[i]];
        acc.resize(d, 0.0);
        ++per_cat_n[categories[i]];
        for (std::size_t c = 0; c < d; ++c) {
            global[c] += emb.at(i, c);
            acc[c] += emb.at(i, c);
        }
    }
    if (n_seen == 0) return;  // callers reject empty training sets earlier
    for (double& v : global) v /= static_cast<double>(n_seen);
    for (std::size_t i = 0; i < n; ++i) {
        if (seen[i]) continue;
        cold_items.push_back(static_cast<int>(i));
        const auto it = per_cat.find(categories[i]);
        if (it != per_cat.end()) {
            const double cnt = static_cast<double>(per_cat_n[categories[i]]);
            for (std::size_t c = 0; c < d; ++c) emb.at(i, c) = it->second[c] / cnt;
        } else {
            for (std::size_t c = 0; c < d; ++c) emb.at(i, c) = global[c];
        }
    }
}

// Scoring-time lookup table: patched item rows plus the trained pad row.
inline Matrix scoring_table(const TrainedModel& m) {
    const Matrix& emb = m.item_embeddings;
    Matrix table(emb.rows + 1, emb.cols);
    std::copy(emb.data.begin(), emb.data.end(), table.data.begin());
    if (m.params.has("embed")) {
        const nn::Param& p = m.params.at("embed");
        for (std::size_t c = 0; c < table.cols; ++c)
            table.at(emb.rows, c) = p.value[emb.rows * table.cols + c];
    }
    return table;
}

inline void require_kind(const TrainedModel& m, ModelKind k, const char* fn) {
    if (m.config.kind != k)
        throw KindMismatchError(std::string(fn) + " called on a " + to_string(m.config.kind) +
                                " model");
}

// FNV-1a over the session structure and catalog size; ties a checkpoint to
// the dataset it was trained on.
inline std::uint64_t data_fingerprint(const PreprocessedData& data) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    mix(static_cast<std::uint64_t>(data.items.size()));
    mix(static_cast<std::uint64_t>(data.feature_matrix.cols));
    mix(static_cast<std::uint64_t>(data.sessions.size()));
    for (const auto& s : data.sessions) {
        mix(static_cast<std::uint64_t>(s.start_ts));
        for (int i : s.items) mix(static_cast<std::uint64_t>(i) + 0x517cc1b727220a95ULL);
    }
    return h;
}

// Wraps one optimization step; a non-finite value anywhere in the batch is
// reported as training divergence at this epoch.
template <typename BuildLoss>
double train_step(nn::ParamStore& params, nn::Optimizer& opt, BuildLoss&& build, int epoch) {
    try {
        ad::Tape tape;
        nn::BoundParams bound(params, tape);
        const ad::Tensor loss = build(tape, bound);
        const double value = loss.item();
        tape.backward(loss);
        opt.step(bound);
        return value;
    } catch (const NonFiniteError&) {
        throw DivergedLossError(epoch);
    }
}

}  // namespace detail

// Read-only parameter binding for scoring: every parameter becomes a
// constant leaf, and individual entries (e.g. the embedding table) can be
// replaced by patched matrices.
class ConstParams {
public:
    ConstParams(const nn::ParamStore& store, ad::Tape& tape) {
        for (const nn::Param& p : store.params())
            tensors_[p.name] = tape.leaf(p.shape, p.value, false);
    }

    void put_matrix(const std::string& name, const Matrix& m, ad::Tape& tape) {
        tensors_[name] =
            tape.leaf({static_cast<int>(m.rows), static_cast<int>(m.cols)}, m.data, false);
    }

    const ad::Tensor& operator()(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw InvalidConfigError("unbound parameter: " + name);
        return it->second;
    }

private:
    std::map<std::string, ad::Tensor> tensors_;
};

namespace detail {

// Seeded epoch/shuffle/minibatch loop shared by every trainer. batch_loss is
// called once per minibatch with a fresh tape binding and must return the
// scalar batch loss.
template <typename Example, typename BatchLoss>
std::vector<double> run_epochs(std::vector<Example> examples, const ModelConfig& cfg,
                               nn::ParamStore& params, BatchLoss&& batch_loss) {
    if (examples.empty()) throw EmptyTrainingSetError();
    nn::Optimizer opt(nn::OptimizerKind::adam, cfg.lr);
    const std::size_t bs = cfg.batch >= 1 ? static_cast<std::size_t>(cfg.batch) : examples.size();
    std::vector<double> log;
    log.reserve(cfg.epochs);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(epoch_seed(cfg.seed, epoch));
        shuffle_rng.shuffle(examples);
        double total = 0.0;
        std::size_t count = 0, batch_index = 0;
        for (std::size_t off = 0; off < examples.size(); off += bs, ++batch_index) {
            const std::size_t n = std::min(bs, examples.size() - off);
            const double v = train_step(
                params, opt,
                [&](ad::Tape& tape, nn::BoundParams& bound) {
                    return batch_loss(tape, bound, examples.data() + off, n, epoch, batch_index);
                },
                epoch);
            total += v * static_cast<double>(n);
            count += n;
        }
        log.push_back(total / static_cast<double>(count));
    }
    return log;
}

inline std::vector<double> one_hot_rows(const std::vector<int>& targets, int n_items) {
    std::vector<double> out(targets.size() * static_cast<std::size_t>(n_items), 0.0);
    for (std::size_t r = 0; r < targets.size(); ++r)
        out[r * static_cast<std::size_t>(n_items) + targets[r]] = 1.0;
    return out;
}

// One positive co-occurrence pair (canonical i < j as stored in the graph).
struct EdgeExample {
    int i = 0;
    int j = 0;
};

inline std::vector<bool> seen_mask(const std::vector<IndexedSession>& sessions, int n_items) {
    std::vector<bool> seen(n_items, false);
    for (const auto& s : sessions)
        for (int i : s.items)
            if (i >= 0 && i < n_items) seen[i] = true;
    return seen;
}

// First n_items rows of the (n_items+1)-row embedding table parameter.
inline Matrix embed_rows(const nn::ParamStore& params, int n_items, int d) {
    const nn::Param& p = params.at("embed");
    Matrix m(static_cast<std::size_t>(n_items), static_cast<std::size_t>(d));
    std::copy(p.value.begin(), p.value.begin() + static_cast<std::size_t>(n_items) * d,
              m.data.begin());
    return m;
}

// Shared epilogue for models whose item embeddings are the trained table:
// copy the table, patch cold-start rows, record catalog metadata.
inline void finalize_table_model(TrainedModel& model, const PreprocessedData& data,
                                 const std::vector<IndexedSession>& train_sessions) {
    const int n = data.n_items();
    model.n_items = n;
    model.item_categories = data.item_categories;
    model.item_embeddings = embed_rows(model.params, n, model.config.embed_dim);
    patch_cold_start(model.item_embeddings, seen_mask(train_sessions, n), model.item_categories,
                     model.cold_start_items);
    model.data_fingerprint = data_fingerprint(data);
}

// Guards a scoring call: the context must have been built for this model's
// window and catalog.
inline void check_context(const TrainedModel& m, const RecContext& ctx) {
    if (static_cast<int>(ctx.item_sequence.size()) != m.config.max_len)
        throw ShapeMismatchError("context window does not match model max_len");
    if (ctx.true_length < 1 || ctx.true_length > m.config.max_len)
        throw ShapeMismatchError("context true_length out of range");
    for (int i = 0; i < m.config.max_len; ++i) {
        const int v = ctx.item_sequence[i];
        const bool pad = i >= ctx.true_length;
        if (pad ? v != m.n_items : (v < 0 || v >= m.n_items)) throw UnknownNodeError(v);
    }
}

}  // namespace detail

// Two-round (by default) weighted-mean aggregation with self-loop weight 1.
// Neighbor contributions are accumulated in ascending index order, self term
// first, so repeated runs are bit-identical.
inline Matrix propagate_embeddings(const Matrix& base, const ItemGraph& g, int rounds) {
    Matrix z = base;
    const std::size_t n = base.rows, d = base.cols;
    for (int r = 0; r < rounds; ++r) {
        Matrix next(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            double wsum = 1.0;  // self-loop
            for (std::size_t c = 0; c < d; ++c) next.at(i, c) = z.at(i, c);
            if (g.has_node(static_cast<int>(i))) {
                for (const auto& [j, count] : g.adjacent(static_cast<int>(i))) {
                    const double w = static_cast<double>(count) / static_cast<double>(g.max_count());
                    wsum += w;
                    for (std::size_t c = 0; c < d; ++c) next.at(i, c) += w * z.at(j, c);
                }
            }
            for (std::size_t c = 0; c < d; ++c) next.at(i, c) /= wsum;
        }
        z = std::move(next);
    }
    return z;
}

}  // namespace recbench::models
