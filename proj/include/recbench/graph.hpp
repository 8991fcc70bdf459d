#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "recbench/errors.hpp"
#include "recbench/types.hpp"

namespace recbench {

struct GraphConfig {
    // sessions longer than this are truncated before pair expansion to cap
    // the quadratic blowup of pathological carts
    std::size_t truncate_len = 40;
};

// Undirected weighted co-occurrence graph over item indices. Counts are raw
// per-session pair counts; weights are counts normalized by the global max,
// so the heaviest edge has weight 1.
class ItemGraph {
public:
    using Edge = std::pair<int, int>;  // canonical i < j

    void add_node(int item, int type) { node_type_.emplace(item, type); }

    void add_count(int i, int j, std::int64_t count) {
        if (i == j) return;
        if (i > j) std::swap(i, j);
        co_counts_[{i, j}] += count;
    }

    // Call once after all counts are in; builds adjacency and max_count.
    void finalize() {
        max_count_ = 0;
        adjacency_.clear();
        for (const auto& [edge, count] : co_counts_) max_count_ = std::max(max_count_, count);
        for (const auto& [edge, count] : co_counts_) {
            adjacency_[edge.first].push_back({edge.second, count});
            adjacency_[edge.second].push_back({edge.first, count});
        }
    }

    bool has_node(int i) const { return node_type_.count(i) != 0; }

    int type_of(int i) const {
        auto it = node_type_.find(i);
        if (it == node_type_.end()) throw UnknownNodeError(i);
        return it->second;
    }

    std::int64_t count(int i, int j) const {
        if (i > j) std::swap(i, j);
        auto it = co_counts_.find({i, j});
        return it == co_counts_.end() ? 0 : it->second;
    }

    double weight(int i, int j) const {
        return max_count_ > 0 ? static_cast<double>(count(i, j)) / static_cast<double>(max_count_)
                              : 0.0;
    }

    // Neighbors of i (ascending index) with raw counts; empty for isolated nodes.
    const std::vector<std::pair<int, std::int64_t>>& adjacent(int i) const {
        static const std::vector<std::pair<int, std::int64_t>> kEmpty;
        auto it = adjacency_.find(i);
        return it == adjacency_.end() ? kEmpty : it->second;
    }

    std::size_t node_count() const { return node_type_.size(); }
    std::size_t edge_count() const { return co_counts_.size(); }
    std::int64_t max_count() const { return max_count_; }
    const std::map<int, int>& nodes() const { return node_type_; }
    const std::map<Edge, std::int64_t>& co_counts() const { return co_counts_; }

    bool operator==(const ItemGraph& o) const {
        return node_type_ == o.node_type_ && co_counts_ == o.co_counts_;
    }

private:
    std::map<int, int> node_type_;
    std::map<Edge, std::int64_t> co_counts_;
    std::map<int, std::vector<std::pair<int, std::int64_t>>> adjacency_;
    std::int64_t max_count_ = 0;
};

// Every unordered pair of distinct items within a session counts once,
// regardless of how often either item repeats inside the session.
inline ItemGraph build_graph(const std::vector<IndexedSession>& sessions,
                             const std::vector<int>& item_categories,
                             const GraphConfig& cfg = {}) {
    ItemGraph g;
    for (const auto& s : sessions) {
        std::vector<int> items = s.items;
        if (items.size() > cfg.truncate_len) items.resize(cfg.truncate_len);
        std::set<int> distinct(items.begin(), items.end());
        for (int i : distinct) {
            g.add_node(i, i >= 0 && i < static_cast<int>(item_categories.size())
                              ? item_categories[i]
                              : 0);
        }
        for (auto a = distinct.begin(); a != distinct.end(); ++a) {
            for (auto b = std::next(a); b != distinct.end(); ++b) g.add_count(*a, *b, 1);
        }
    }
    g.finalize();
    return g;
}

// Training graph G from train sessions, testing graph G' from test sessions.
inline std::pair<ItemGraph, ItemGraph> build_split_graphs(const IndexedSplit& split,
                                                          const std::vector<int>& item_categories,
                                                          const GraphConfig& cfg = {}) {
    return {build_graph(split.train, item_categories, cfg),
            build_graph(split.test, item_categories, cfg)};
}

// All neighbors j of i with weight >= min_weight, sorted by (-weight, j).
inline std::vector<std::pair<int, double>> neighbors(const ItemGraph& g, int i, double min_weight) {
    if (!g.has_node(i)) throw UnknownNodeError(i);
    std::vector<std::pair<int, double>> out;
    for (const auto& [j, count] : g.adjacent(i)) {
        const double w = g.max_count() > 0
                             ? static_cast<double>(count) / static_cast<double>(g.max_count())
                             : 0.0;
        if (w >= min_weight) out.push_back({j, w});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return out;
}

// ---------------------------------------------------------------------------
// NDJSON persistence: header line, node lines (id ascending), edge lines
// (i < j, lexicographically ascending). Counts are integers so the
// round-trip is bit-exact.
// ---------------------------------------------------------------------------

inline void save_graph(const ItemGraph& g, std::ostream& out) {
    nlohmann::json header{{"edges", g.edge_count()},
                          {"max_count", g.max_count()},
                          {"nodes", g.node_count()}};
    out << header.dump() << "\n";
    for (const auto& [id, type] : g.nodes()) {
        out << nlohmann::json{{"id", id}, {"type", type}}.dump() << "\n";
    }
    for (const auto& [edge, count] : g.co_counts()) {
        out << nlohmann::json{{"count", count}, {"i", edge.first}, {"j", edge.second}}.dump()
            << "\n";
    }
}

inline void save_graph(const ItemGraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    save_graph(g, out);
}

inline ItemGraph load_graph(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("graph stream empty");
    const nlohmann::json header = nlohmann::json::parse(line);
    const std::size_t n_nodes = header.at("nodes").get<std::size_t>();
    const std::size_t n_edges = header.at("edges").get<std::size_t>();

    ItemGraph g;
    for (std::size_t k = 0; k < n_nodes; ++k) {
        if (!std::getline(in, line)) throw IoError("graph stream truncated (nodes)");
        const nlohmann::json rec = nlohmann::json::parse(line);
        g.add_node(rec.at("id").get<int>(), rec.at("type").get<int>());
    }
    for (std::size_t k = 0; k < n_edges; ++k) {
        if (!std::getline(in, line)) throw IoError("graph stream truncated (edges)");
        const nlohmann::json rec = nlohmann::json::parse(line);
        g.add_count(rec.at("i").get<int>(), rec.at("j").get<int>(),
                    rec.at("count").get<std::int64_t>());
    }
    g.finalize();
    return g;
}

inline ItemGraph load_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return load_graph(in);
}

}  // namespace recbench
