#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "recbench/errors.hpp"
#include "recbench/ingest.hpp"
#include "recbench/matrix.hpp"
#include "recbench/rng.hpp"
#include "recbench/types.hpp"

namespace recbench {

// ---------------------------------------------------------------------------
// Cleaning
// ---------------------------------------------------------------------------

struct CleanStats {
    std::size_t events_in = 0;
    std::size_t events_dropped_missing_ids = 0;
    std::size_t duplicate_events_removed = 0;
    std::size_t numeric_imputations = 0;
    std::size_t category_imputations = 0;
};

struct CleanResult {
    std::vector<InteractionEvent> events;
    std::vector<ItemRecord> items;
    CleanStats stats;
};

namespace detail {

// Column medians over non-missing entries; columns with no data get 0.0 so
// the zero-variance filter removes them downstream.
inline std::vector<double> column_medians(const std::vector<ItemRecord>& items, std::size_t width) {
    std::vector<double> medians(width, 0.0);
    for (std::size_t c = 0; c < width; ++c) {
        std::vector<double> vals;
        for (const auto& it : items) {
            if (c < it.numeric_features.size() && !is_missing(it.numeric_features[c]))
                vals.push_back(it.numeric_features[c]);
        }
        if (vals.empty()) continue;
        std::sort(vals.begin(), vals.end());
        const std::size_t m = vals.size() / 2;
        medians[c] = vals.size() % 2 ? vals[m] : 0.5 * (vals[m - 1] + vals[m]);
    }
    return medians;
}

}  // namespace detail

// Removes events with missing ids, deduplicates exact (user, item, kind,
// timestamp) repeats keeping the first, and imputes missing numeric item
// features with the column median. Item feature vectors are padded to a
// common width first.
inline CleanResult clean(std::vector<InteractionEvent> events, std::vector<ItemRecord> items) {
    CleanResult out;
    out.stats.events_in = events.size();

    std::set<std::tuple<std::string, std::string, int, std::int64_t>> seen;
    out.events.reserve(events.size());
    for (auto& ev : events) {
        if (ev.user_id.empty() || ev.item_id.empty()) {
            ++out.stats.events_dropped_missing_ids;
            continue;
        }
        auto key = std::make_tuple(ev.user_id, ev.item_id, static_cast<int>(ev.kind), ev.timestamp);
        if (!seen.insert(key).second) {
            ++out.stats.duplicate_events_removed;
            continue;
        }
        out.events.push_back(std::move(ev));
    }

    std::size_t width = 0;
    for (const auto& it : items) width = std::max(width, it.numeric_features.size());
    const std::vector<double> medians = detail::column_medians(items, width);
    for (auto& it : items) {
        it.numeric_features.resize(width, kMissingValue);
        for (std::size_t c = 0; c < width; ++c) {
            if (is_missing(it.numeric_features[c])) {
                it.numeric_features[c] = medians[c];
                ++out.stats.numeric_imputations;
            }
        }
    }
    out.items = std::move(items);
    return out;
}

// ---------------------------------------------------------------------------
// Text normalization
// ---------------------------------------------------------------------------

// Lowercases ASCII letters, replaces ASCII punctuation/symbols/whitespace with
// single spaces, and collapses runs. Bytes >= 0x80 (multibyte UTF-8) pass
// through untouched, so accented letters survive.
inline std::string normalize_text(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        const bool keep = c >= 0x80 || std::isalnum(c);
        if (keep) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
        } else {
            pending_space = true;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Categorical encoding
// ---------------------------------------------------------------------------

// Label encoding: distinct categories sorted lexicographically, assigned
// 0..C-1. Stable across runs by construction.
inline std::map<std::string, int> encode_categoricals(const std::vector<ItemRecord>& items) {
    std::map<std::string, int> index;
    for (const auto& it : items) index.emplace(it.category, 0);
    int next = 0;
    for (auto& [cat, idx] : index) idx = next++;
    return index;
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

struct ScaleParams {
    std::vector<double> mins;
    std::vector<double> maxs;
};

inline ScaleParams fit_scale(const Matrix& m, const std::vector<std::size_t>& fit_rows) {
    ScaleParams p;
    p.mins.assign(m.cols, 0.0);
    p.maxs.assign(m.cols, 0.0);
    for (std::size_t c = 0; c < m.cols; ++c) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t r : fit_rows) {
            lo = std::min(lo, m.at(r, c));
            hi = std::max(hi, m.at(r, c));
        }
        p.mins[c] = fit_rows.empty() ? 0.0 : lo;
        p.maxs[c] = fit_rows.empty() ? 0.0 : hi;
    }
    return p;
}

// Min-max to [0,1] per column; constant columns map to 0. With clamp set,
// rows outside the fitted range are clipped into [0,1].
inline Matrix apply_scale(const Matrix& m, const ScaleParams& p, bool clamp) {
    Matrix out(m.rows, m.cols);
    for (std::size_t c = 0; c < m.cols; ++c) {
        const double span = p.maxs[c] - p.mins[c];
        for (std::size_t r = 0; r < m.rows; ++r) {
            double v = span > 0.0 ? (m.at(r, c) - p.mins[c]) / span : 0.0;
            if (clamp) v = std::clamp(v, 0.0, 1.0);
            out.at(r, c) = v;
        }
    }
    return out;
}

inline Matrix scale_numeric(const Matrix& m) {
    for (double v : m.data) {
        if (!std::isfinite(v)) throw NonFiniteError("scale_numeric input");
    }
    std::vector<std::size_t> all(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) all[r] = r;
    return apply_scale(m, fit_scale(m, all), false);
}

// ---------------------------------------------------------------------------
// Dimensionality reduction (variance filter + PCA via power iteration)
// ---------------------------------------------------------------------------

struct PcaResult {
    Matrix projected;                     // n x target_dim
    Matrix components;                    // kept_cols x target_dim, orthonormal columns
    std::vector<double> eigenvalues;      // decreasing
    std::vector<double> explained_ratio;  // eigenvalue / total variance
    std::vector<std::size_t> kept_columns;
    std::vector<std::size_t> dropped_columns;  // zero-variance
    std::vector<double> column_means;          // of kept columns
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace detail

inline PcaResult pca(const Matrix& input, std::size_t target_dim) {
    if (target_dim < 1 || target_dim > input.cols)
        throw InvalidDimError("target_dim must be in [1, cols]");
    for (double v : input.data) {
        if (!std::isfinite(v)) throw NonFiniteError("pca input");
    }

    PcaResult res;
    for (std::size_t c = 0; c < input.cols; ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t r = 0; r < input.rows; ++r) {
            lo = std::min(lo, input.at(r, c));
            hi = std::max(hi, input.at(r, c));
        }
        if (input.rows > 0 && lo == hi) res.dropped_columns.push_back(c);
        else res.kept_columns.push_back(c);
    }

    const std::size_t d = res.kept_columns.size();
    const std::size_t n = input.rows;
    const std::size_t t = std::min(target_dim, std::max<std::size_t>(d, 1));

    // centered data on kept columns
    Matrix centered(n, d);
    res.column_means.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t c = res.kept_columns[j];
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += input.at(r, c);
        mean /= n > 0 ? static_cast<double>(n) : 1.0;
        res.column_means[j] = mean;
        for (std::size_t r = 0; r < n; ++r) centered.at(r, j) = input.at(r, c) - mean;
    }

    res.projected = Matrix(n, target_dim);
    res.components = Matrix(d, target_dim);
    res.eigenvalues.assign(target_dim, 0.0);
    res.explained_ratio.assign(target_dim, 0.0);
    if (d == 0 || n < 2) return res;  // nothing informative to project

    const double denom = static_cast<double>(n - 1);
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += centered.at(r, i) * centered.at(r, j);
            cov[i][j] = cov[j][i] = s / denom;
        }
    }
    double total_var = 0.0;
    for (std::size_t i = 0; i < d; ++i) total_var += cov[i][i];

    std::vector<std::vector<double>> found;
    Rng rng(0x9e3779b97f4a7c15ULL);
    for (std::size_t comp = 0; comp < std::min(t, d); ++comp) {
        std::vector<double> v(d);
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        auto orthogonalize = [&](std::vector<double>& u) {
            for (const auto& f : found) {
                const double proj = detail::dot(u, f);
                for (std::size_t i = 0; i < d; ++i) u[i] -= proj * f[i];
            }
        };
        orthogonalize(v);
        double norm = std::sqrt(detail::dot(v, v));
        if (norm < 1e-12) break;
        for (auto& x : v) x /= norm;

        for (int iter = 0; iter < 1000; ++iter) {
            std::vector<double> w(d, 0.0);
            for (std::size_t i = 0; i < d; ++i) {
                const double vi = v[i];
                if (vi == 0.0) continue;
                for (std::size_t j = 0; j < d; ++j) w[j] += cov[i][j] * vi;
            }
            orthogonalize(w);
            const double wn = std::sqrt(detail::dot(w, w));
            if (wn < 1e-300) break;
            for (auto& x : w) x /= wn;
            const double agreement = std::abs(detail::dot(w, v));
            v = std::move(w);
            if (1.0 - agreement < 1e-14) break;
        }
        // deterministic sign: dominant coordinate positive
        std::size_t arg = 0;
        for (std::size_t i = 1; i < d; ++i) {
            if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
        }
        if (v[arg] < 0.0) {
            for (auto& x : v) x = -x;
        }
        // Rayleigh quotient for the eigenvalue
        double rq = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += cov[i][j] * v[j];
            rq += v[i] * s;
        }
        res.eigenvalues[comp] = rq;
        res.explained_ratio[comp] = total_var > 0.0 ? rq / total_var : 0.0;
        for (std::size_t i = 0; i < d; ++i) res.components.at(i, comp) = v[i];
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) s += centered.at(r, i) * v[i];
            res.projected.at(r, comp) = s;
        }
        found.push_back(std::move(v));
    }
    return res;
}

// Variance filter then projection onto the top principal directions, columns
// ordered by decreasing explained variance.
inline Matrix reduce_dimensions(const Matrix& input, std::size_t target_dim) {
    return pca(input, target_dim).projected;
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

struct PipelineConfig {
    std::int64_t gap_seconds = 1800;
    double split_ratio = 0.7;
    int reduce_dim = 0;        // 0: reduction off
    int one_hot_max_cardinality = 16;
};

struct PreprocessedData {
    std::vector<ItemRecord> items;  // ordered by item index
    std::vector<int> item_categories;
    std::vector<IndexedSession> sessions;  // all sessions, chronological input order
    std::map<std::string, int> item_index_map;
    std::map<std::string, int> category_index_map;
    Matrix feature_matrix;  // items x d, values in [0,1]
    PipelineConfig config;

    int n_items() const { return static_cast<int>(items.size()); }
};

struct PipelineReport {
    std::size_t events_in = 0;
    std::size_t events_dropped = 0;
    std::size_t duplicates_removed = 0;
    std::size_t numeric_imputations = 0;
    std::size_t category_imputations = 0;
    std::size_t items_synthesized = 0;   // items seen in sessions but absent from catalog
    std::vector<std::string> dropped_columns;
    std::vector<double> explained_variance_ratios;
    std::size_t session_count = 0;
    std::size_t n_items = 0;
    std::size_t feature_dim = 0;
};

namespace detail {

inline std::vector<std::string> feature_names(std::size_t numeric_width,
                                              const std::vector<std::string>& onehot_cats) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < numeric_width; ++i) names.push_back("f" + std::to_string(i));
    for (const auto& c : onehot_cats) names.push_back("cat_" + c);
    return names;
}

}  // namespace detail

// Items-side steps shared by both pipeline entry points: text normalization,
// category imputation, encoding, feature assembly, variance filter, scaling
// (fit on train items only), optional reduction, and index maps.
inline PreprocessedData preprocess_sessions(std::vector<Session> sessions,
                                            std::vector<ItemRecord> items,
                                            const PipelineConfig& cfg, PipelineReport& report,
                                            CleanStats clean_stats = {}) {
    PreprocessedData data;
    data.config = cfg;
    report.events_in = clean_stats.events_in;
    report.events_dropped = clean_stats.events_dropped_missing_ids;
    report.duplicates_removed = clean_stats.duplicate_events_removed;
    report.numeric_imputations = clean_stats.numeric_imputations;

    // normalize category + text fields
    for (auto& it : items) {
        it.category = normalize_text(it.category);
        for (auto& t : it.text_fields) t = normalize_text(t);
    }
    // mode imputation for empty categories
    std::map<std::string, std::size_t> cat_freq;
    for (const auto& it : items) {
        if (!it.category.empty()) ++cat_freq[it.category];
    }
    std::string mode = "unknown";
    std::size_t best = 0;
    for (const auto& [cat, n] : cat_freq) {
        if (n > best) { best = n; mode = cat; }
    }
    for (auto& it : items) {
        if (it.category.empty()) {
            it.category = mode;
            ++report.category_imputations;
        }
    }
    report.category_imputations += clean_stats.category_imputations;

    // union catalog: declared items plus any session-only items
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < items.size(); ++i) by_id.emplace(items[i].item_id, i);
    for (const auto& s : sessions) {
        for (const auto& id : s.items) {
            if (by_id.emplace(id, items.size()).second) {
                ItemRecord rec;
                rec.item_id = id;
                rec.category = "unknown";
                rec.numeric_features.assign(
                    items.empty() ? 0 : items.front().numeric_features.size(), 0.0);
                items.push_back(std::move(rec));
                ++report.items_synthesized;
            }
        }
    }

    // contiguous indices in lexicographic item_id order
    std::vector<ItemRecord> ordered;
    ordered.reserve(by_id.size());
    int next = 0;
    for (auto& [id, pos] : by_id) {
        data.item_index_map[id] = next++;
        ordered.push_back(std::move(items[pos]));
    }
    data.items = std::move(ordered);

    data.category_index_map = encode_categoricals(data.items);
    data.item_categories.reserve(data.items.size());
    for (const auto& it : data.items)
        data.item_categories.push_back(data.category_index_map.at(it.category));

    // sessions onto indices
    data.sessions.reserve(sessions.size());
    for (const auto& s : sessions) {
        if (s.items.empty()) continue;
        IndexedSession is;
        is.session_id = s.session_id;
        is.start_ts = s.start_ts;
        is.end_ts = s.end_ts;
        for (const auto& id : s.items) is.items.push_back(data.item_index_map.at(id));
        data.sessions.push_back(std::move(is));
    }
    report.session_count = data.sessions.size();

    // dense features: numeric + one-hot category when cardinality is small
    const std::size_t numeric_width =
        data.items.empty() ? 0 : data.items.front().numeric_features.size();
    std::vector<std::string> onehot_cats;
    if (static_cast<int>(data.category_index_map.size()) <= cfg.one_hot_max_cardinality) {
        for (const auto& [cat, idx] : data.category_index_map) onehot_cats.push_back(cat);
    }
    const auto names = detail::feature_names(numeric_width, onehot_cats);
    Matrix feats(data.items.size(), numeric_width + onehot_cats.size());
    for (std::size_t r = 0; r < data.items.size(); ++r) {
        for (std::size_t c = 0; c < numeric_width; ++c)
            feats.at(r, c) = data.items[r].numeric_features[c];
        if (!onehot_cats.empty()) {
            const std::size_t hot =
                static_cast<std::size_t>(data.category_index_map.at(data.items[r].category));
            feats.at(r, numeric_width + hot) = 1.0;
        }
    }
    for (double v : feats.data) {
        if (!std::isfinite(v)) throw NonFiniteError("feature matrix");
    }

    // zero-variance filter
    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < feats.cols; ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t r = 0; r < feats.rows; ++r) {
            lo = std::min(lo, feats.at(r, c));
            hi = std::max(hi, feats.at(r, c));
        }
        if (feats.rows == 0 || lo == hi) report.dropped_columns.push_back(names[c]);
        else kept.push_back(c);
    }
    Matrix filtered(feats.rows, kept.size());
    for (std::size_t r = 0; r < feats.rows; ++r)
        for (std::size_t j = 0; j < kept.size(); ++j) filtered.at(r, j) = feats.at(r, kept[j]);

    // scaler fitted on items that occur in training sessions, applied (with
    // clamping) to the whole catalog
    std::vector<std::size_t> fit_rows;
    {
        std::vector<Session> copy = sessions;
        std::unordered_set<int> train_items;
        if (!copy.empty()) {
            SplitDataset split = split_chronological(std::move(copy), cfg.split_ratio);
            for (const auto& s : split.train)
                for (const auto& id : s.items) train_items.insert(data.item_index_map.at(id));
        }
        for (std::size_t r = 0; r < filtered.rows; ++r) {
            if (train_items.count(static_cast<int>(r))) fit_rows.push_back(r);
        }
        if (fit_rows.empty()) {
            fit_rows.resize(filtered.rows);
            for (std::size_t r = 0; r < filtered.rows; ++r) fit_rows[r] = r;
        }
    }
    Matrix scaled = apply_scale(filtered, fit_scale(filtered, fit_rows), true);

    if (cfg.reduce_dim > 0 && scaled.cols > 0) {
        const std::size_t t = std::min<std::size_t>(cfg.reduce_dim, scaled.cols);
        PcaResult pr = pca(scaled, t);
        report.explained_variance_ratios = pr.explained_ratio;
        // restore the [0,1] invariant on the projected coordinates
        data.feature_matrix = scale_numeric(pr.projected);
    } else {
        data.feature_matrix = std::move(scaled);
    }
    report.n_items = data.items.size();
    report.feature_dim = data.feature_matrix.cols;
    return data;
}

// Full event-log run: clean, sessionize, then the shared items-side steps.
inline PreprocessedData run_pipeline(std::vector<InteractionEvent> events,
                                     std::vector<ItemRecord> items, const PipelineConfig& cfg,
                                     PipelineReport& report) {
    CleanResult cleaned = clean(std::move(events), std::move(items));
    std::vector<Session> sessions = sessionize(cleaned.events, cfg.gap_seconds);
    return preprocess_sessions(std::move(sessions), std::move(cleaned.items), cfg, report,
                               cleaned.stats);
}

}  // namespace recbench
