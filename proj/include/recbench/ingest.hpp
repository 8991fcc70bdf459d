#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "recbench/csv.hpp"
#include "recbench/errors.hpp"
#include "recbench/rng.hpp"
#include "recbench/types.hpp"

namespace recbench {

// ---------------------------------------------------------------------------
// Event log loading
// ---------------------------------------------------------------------------

// Maps CSV column names onto event fields. `value` is optional (ratings only).
struct EventSchema {
    std::string user = "user_id";
    std::string item = "item_id";
    std::string kind = "event";
    std::string timestamp = "timestamp";
    std::string value;  // empty: no rating column

    static EventSchema retail_rocket() {
        EventSchema s;
        s.user = "visitorid";
        s.item = "itemid";
        s.kind = "event";
        s.timestamp = "timestamp";
        return s;
    }
};

struct LoadResult {
    std::vector<InteractionEvent> events;
    std::vector<std::size_t> skipped_rows;  // 0-based data row indices
};

namespace detail {

inline bool parse_i64(const std::string& s, std::int64_t& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size() && std::isfinite(out);
    } catch (const std::exception&) {
        return false;
    }
}

inline bool parse_kind(std::string s, EventKind& out) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "view") out = EventKind::view;
    else if (s == "addtocart" || s == "add_to_cart" || s == "add") out = EventKind::add_to_cart;
    else if (s == "transaction" || s == "purchase" || s == "buy") out = EventKind::purchase;
    else if (s == "rating" || s == "rate") out = EventKind::rating;
    else return false;
    return true;
}

}  // namespace detail

// Reads one InteractionEvent per valid CSV row, preserving input order.
// Malformed rows (bad timestamp, unknown kind, missing ids, rating out of
// range) are skipped and reported by 0-based row index, never fatal.
inline LoadResult load_events(const std::string& path, const EventSchema& schema) {
    const CsvTable table = read_csv(path);
    const int ci_user = table.column(schema.user);
    const int ci_item = table.column(schema.item);
    const int ci_kind = table.column(schema.kind);
    const int ci_ts = table.column(schema.timestamp);
    if (ci_user < 0) throw MissingColumnError(schema.user);
    if (ci_item < 0) throw MissingColumnError(schema.item);
    if (ci_kind < 0) throw MissingColumnError(schema.kind);
    if (ci_ts < 0) throw MissingColumnError(schema.timestamp);
    int ci_value = -1;
    if (!schema.value.empty()) {
        ci_value = table.column(schema.value);
        if (ci_value < 0) throw MissingColumnError(schema.value);
    }

    LoadResult result;
    result.events.reserve(table.rows.size());
    const std::size_t width =
        static_cast<std::size_t>(std::max({ci_user, ci_item, ci_kind, ci_ts, ci_value})) + 1;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (row.size() < width) {
            result.skipped_rows.push_back(r);
            continue;
        }
        InteractionEvent ev;
        ev.user_id = row[ci_user];
        ev.item_id = row[ci_item];
        if (ev.user_id.empty() || ev.item_id.empty() || !detail::parse_kind(row[ci_kind], ev.kind) ||
            !detail::parse_i64(row[ci_ts], ev.timestamp) || ev.timestamp < 0) {
            result.skipped_rows.push_back(r);
            continue;
        }
        if (ev.kind == EventKind::rating) {
            double v = 0.0;
            if (ci_value < 0 || !detail::parse_double(row[ci_value], v) || v < 0.5 || v > 5.0) {
                result.skipped_rows.push_back(r);
                continue;
            }
            ev.value = v;
        }
        result.events.push_back(std::move(ev));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Synthetic planted-block datasets
// ---------------------------------------------------------------------------

struct SyntheticConfig {
    int n_items = 200;
    int n_sessions = 2000;
    int n_blocks = 4;
    double noise = 0.1;
    std::uint64_t seed = 1;
    int n_features = 4;
};

struct SyntheticDataset {
    std::vector<ItemRecord> items;
    std::vector<Session> sessions;
    SyntheticConfig config;
};

// Items are partitioned into equal blocks (block index = category) and each
// session draws from one block, escaping uniformly over the full catalog with
// probability `noise` per draw. Within a block the draw follows a harmonic
// popularity profile (weight 1/(1+rank)), so each block has head items that
// dominate its sessions: recoverable structure with a ranking gradient, not
// just a partition. Fully deterministic for a given seed.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.n_blocks < 2) throw InvalidConfigError("n_blocks must be >= 2");
    if (cfg.n_items <= 0 || cfg.n_items % cfg.n_blocks != 0)
        throw InvalidConfigError("n_items must be positive and divisible by n_blocks");
    if (cfg.n_sessions < 1) throw InvalidConfigError("n_sessions must be >= 1");
    if (cfg.noise < 0.0 || cfg.noise > 1.0) throw InvalidConfigError("noise must be in [0,1]");

    Rng rng(cfg.seed);
    SyntheticDataset out;
    out.config = cfg;

    const int block_size = cfg.n_items / cfg.n_blocks;
    auto item_name = [&](int i) {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "item_%05d", i);
        return std::string(buf);
    };

    out.items.reserve(cfg.n_items);
    for (int i = 0; i < cfg.n_items; ++i) {
        ItemRecord rec;
        rec.item_id = item_name(i);
        const int block = i / block_size;
        rec.category = "block_" + std::to_string(block);
        rec.numeric_features.reserve(cfg.n_features);
        for (int f = 0; f < cfg.n_features; ++f) {
            // block-dependent center plus jitter, so features carry the
            // planted structure too
            const double center = static_cast<double>((block * 7 + f * 3) % cfg.n_blocks) /
                                  static_cast<double>(cfg.n_blocks);
            rec.numeric_features.push_back(center + rng.uniform(-0.1, 0.1));
        }
        out.items.push_back(std::move(rec));
    }

    std::vector<double> cum(static_cast<std::size_t>(block_size));
    double mass = 0.0;
    for (int r = 0; r < block_size; ++r) {
        mass += 1.0 / (1.0 + r);
        cum[static_cast<std::size_t>(r)] = mass;
    }
    auto draw_in_block = [&](int block) {
        const double u = rng.uniform01() * mass;
        const auto it = std::lower_bound(cum.begin(), cum.end(), u);
        const int r = std::min(static_cast<int>(it - cum.begin()), block_size - 1);
        return block * block_size + r;
    };

    out.sessions.reserve(cfg.n_sessions);
    constexpr std::int64_t kSessionSpacing = 3600;
    constexpr std::int64_t kItemSpacing = 10;
    for (int s = 0; s < cfg.n_sessions; ++s) {
        Session sess;
        char buf[24];
        std::snprintf(buf, sizeof(buf), "s%06d", s);
        sess.session_id = buf;
        std::snprintf(buf, sizeof(buf), "u%06d", s);
        sess.user_id = buf;
        const int block = static_cast<int>(rng.uniform_below(cfg.n_blocks));
        const int len = rng.uniform_int(2, 12);
        sess.items.reserve(len);
        for (int p = 0; p < len; ++p) {
            int item;
            if (rng.bernoulli(cfg.noise)) {
                item = static_cast<int>(rng.uniform_below(cfg.n_items));
            } else {
                item = draw_in_block(block);
            }
            sess.items.push_back(item_name(item));
        }
        sess.start_ts = static_cast<std::int64_t>(s) * kSessionSpacing;
        sess.end_ts = sess.start_ts + static_cast<std::int64_t>(len - 1) * kItemSpacing;
        out.sessions.push_back(std::move(sess));
    }
    return out;
}

// Serializes a synthetic dataset as items.csv + sessions.csv + manifest.json
// (manifest written by the caller that owns the JSON dependency; see cli).
inline void write_items_csv(const std::string& path, const std::vector<ItemRecord>& items) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    std::size_t n_features = 0;
    for (const auto& it : items) n_features = std::max(n_features, it.numeric_features.size());
    out << "item_id,category";
    for (std::size_t f = 0; f < n_features; ++f) out << ",f" << f;
    out << "\n";
    for (const auto& it : items) {
        out << csv_escape(it.item_id) << "," << csv_escape(it.category);
        for (std::size_t f = 0; f < n_features; ++f) {
            out << ",";
            if (f < it.numeric_features.size() && !is_missing(it.numeric_features[f])) {
                char buf[40];
                std::snprintf(buf, sizeof(buf), "%.17g", it.numeric_features[f]);
                out << buf;
            }
        }
        out << "\n";
    }
}

inline void write_sessions_csv(const std::string& path, const std::vector<Session>& sessions) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "session_id,user_id,start_ts,end_ts,items\n";
    for (const auto& s : sessions) {
        std::string joined;
        for (std::size_t i = 0; i < s.items.size(); ++i) {
            if (i) joined += " ";
            joined += s.items[i];
        }
        out << csv_escape(s.session_id) << "," << csv_escape(s.user_id) << "," << s.start_ts << ","
            << s.end_ts << "," << csv_escape(joined) << "\n";
    }
}

inline std::vector<ItemRecord> read_items_csv(const std::string& path) {
    const CsvTable table = read_csv(path);
    const int ci_id = table.column("item_id");
    const int ci_cat = table.column("category");
    if (ci_id < 0) throw MissingColumnError("item_id");
    if (ci_cat < 0) throw MissingColumnError("category");
    std::vector<int> feature_cols;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (table.header[i].size() > 1 && table.header[i][0] == 'f' &&
            std::all_of(table.header[i].begin() + 1, table.header[i].end(),
                        [](unsigned char c) { return std::isdigit(c); })) {
            feature_cols.push_back(static_cast<int>(i));
        }
    }
    std::vector<ItemRecord> items;
    items.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        ItemRecord rec;
        rec.item_id = ci_id < static_cast<int>(row.size()) ? row[ci_id] : "";
        rec.category = ci_cat < static_cast<int>(row.size()) ? row[ci_cat] : "";
        for (int c : feature_cols) {
            double v = kMissingValue;
            if (c < static_cast<int>(row.size())) detail::parse_double(row[c], v);
            rec.numeric_features.push_back(v);
        }
        items.push_back(std::move(rec));
    }
    return items;
}

inline std::vector<Session> read_sessions_csv(const std::string& path) {
    const CsvTable table = read_csv(path);
    const int ci_sid = table.column("session_id");
    const int ci_uid = table.column("user_id");
    const int ci_start = table.column("start_ts");
    const int ci_end = table.column("end_ts");
    const int ci_items = table.column("items");
    for (auto [ci, name] : {std::pair{ci_sid, "session_id"}, {ci_uid, "user_id"},
                            {ci_start, "start_ts"}, {ci_end, "end_ts"}, {ci_items, "items"}}) {
        if (ci < 0) throw MissingColumnError(name);
    }
    std::vector<Session> sessions;
    sessions.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        Session s;
        s.session_id = row[ci_sid];
        s.user_id = row[ci_uid];
        detail::parse_i64(row[ci_start], s.start_ts);
        detail::parse_i64(row[ci_end], s.end_ts);
        std::istringstream iss(row[ci_items]);
        std::string tok;
        while (iss >> tok) s.items.push_back(tok);
        sessions.push_back(std::move(s));
    }
    return sessions;
}

// ---------------------------------------------------------------------------
// Sessionization and splitting
// ---------------------------------------------------------------------------

// Per user, events are ordered by (timestamp, item_id); a gap larger than
// gap_seconds starts a new session, and consecutive duplicate items within a
// session collapse to their first occurrence.
inline std::vector<Session> sessionize(const std::vector<InteractionEvent>& events,
                                       std::int64_t gap_seconds) {
    if (gap_seconds <= 0) throw InvalidConfigError("gap_seconds must be > 0");

    std::map<std::string, std::vector<const InteractionEvent*>> by_user;
    for (const auto& ev : events) by_user[ev.user_id].push_back(&ev);

    std::vector<Session> sessions;
    for (auto& [user, evs] : by_user) {
        std::stable_sort(evs.begin(), evs.end(), [](const InteractionEvent* a, const InteractionEvent* b) {
            if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
            return a->item_id < b->item_id;
        });
        Session cur;
        int count_for_user = 0;
        auto flush = [&]() {
            if (!cur.items.empty()) {
                cur.session_id = user + "#" + std::to_string(count_for_user++);
                sessions.push_back(std::move(cur));
                cur = Session{};
            }
        };
        std::int64_t prev_ts = 0;
        for (const InteractionEvent* ev : evs) {
            if (!cur.items.empty() && ev->timestamp - prev_ts > gap_seconds) flush();
            if (cur.items.empty()) {
                cur.user_id = user;
                cur.start_ts = ev->timestamp;
            }
            if (cur.items.empty() || cur.items.back() != ev->item_id) cur.items.push_back(ev->item_id);
            cur.end_ts = ev->timestamp;
            prev_ts = ev->timestamp;
        }
        flush();
    }
    return sessions;
}

// Global chronological split: sessions sorted by (start_ts, session_id), the
// first ceil(ratio * N) go to train.
inline SplitDataset split_chronological(std::vector<Session> sessions, double ratio) {
    if (ratio <= 0.0 || ratio >= 1.0) throw InvalidConfigError("split ratio must be in (0,1)");
    if (sessions.empty()) throw EmptyInputError("split_chronological: no sessions");

    std::sort(sessions.begin(), sessions.end(), [](const Session& a, const Session& b) {
        if (a.start_ts != b.start_ts) return a.start_ts < b.start_ts;
        return a.session_id < b.session_id;
    });
    const std::size_t n = sessions.size();
    // epsilon guards against ratio*n landing a hair above an exact integer
    const std::size_t n_train =
        static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));

    SplitDataset split;
    split.split_ratio = ratio;
    split.train.assign(sessions.begin(), sessions.begin() + std::min(n_train, n));
    split.test.assign(sessions.begin() + std::min(n_train, n), sessions.end());
    return split;
}

}  // namespace recbench
