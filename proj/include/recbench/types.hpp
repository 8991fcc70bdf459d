#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace recbench {

enum class EventKind { view, add_to_cart, purchase, rating };

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::view: return "view";
        case EventKind::add_to_cart: return "add_to_cart";
        case EventKind::purchase: return "purchase";
        case EventKind::rating: return "rating";
    }
    return "?";
}

// One user/item interaction. `value` is the star rating and is present
// exactly when kind == rating.
struct InteractionEvent {
    std::string user_id;
    std::string item_id;
    EventKind kind = EventKind::view;
    std::optional<double> value;
    std::int64_t timestamp = 0;
};

// Catalog entry. Missing numeric features are represented as NaN until the
// preprocessing pipeline imputes them.
struct ItemRecord {
    std::string item_id;
    std::string category;
    std::vector<double> numeric_features;
    std::vector<std::string> text_fields;
};

constexpr double kMissingValue = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

struct Session {
    std::string session_id;
    std::string user_id;
    std::vector<std::string> items;  // ordered by event time, ties by item_id
    std::int64_t start_ts = 0;
    std::int64_t end_ts = 0;
};

// Session with item ids replaced by contiguous catalog indices.
struct IndexedSession {
    std::string session_id;
    std::vector<int> items;
    std::int64_t start_ts = 0;
    std::int64_t end_ts = 0;
};

struct SplitDataset {
    std::vector<Session> train;
    std::vector<Session> test;
    double split_ratio = 0.7;
};

struct IndexedSplit {
    std::vector<IndexedSession> train;
    std::vector<IndexedSession> test;
    double split_ratio = 0.7;
};

// Ranked recommendation slate: item indices in descending score order with
// ties broken by ascending index.
struct RankedList {
    std::vector<int> items;
    std::vector<double> scores;  // aligned with items

    std::size_t size() const { return items.size(); }
};

}  // namespace recbench
