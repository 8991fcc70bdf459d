#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "recbench/errors.hpp"
#include "recbench/matrix.hpp"
#include "recbench/types.hpp"

namespace recbench::metrics {

// Per-query confusion matrix over a fixed item universe: every catalog item
// is either recommended or not and relevant or not, so the four counts always
// sum to the universe size.
struct ConfusionCounts {
    long long tp = 0;
    long long tn = 0;
    long long fp = 0;
    long long fn = 0;

    long long total() const { return tp + tn + fp + fn; }
};

// One row of a k-sweep table: rank cutoff plus the two reported fractions.
struct EvalRow {
    int k = 0;
    double accuracy_at_k = 0.0;
    double ild_at_k = 0.0;
};

// Set-arithmetic classification of a recommendation slate against the
// relevant set. Items are catalog indices in [0, universe).
inline ConfusionCounts confusion_counts(const std::vector<int>& topk,
                                        const std::vector<int>& relevant, long long universe) {
    const std::set<int> rec(topk.begin(), topk.end());
    const std::set<int> rel(relevant.begin(), relevant.end());
    auto check = [universe](int item) {
        if (item < 0 || item >= universe)
            throw UniverseTooSmallError("item " + std::to_string(item) + " outside universe of " +
                                        std::to_string(universe));
    };
    for (int i : rec) check(i);
    for (int i : rel) check(i);

    ConfusionCounts c;
    for (int i : rec) {
        if (rel.count(i)) ++c.tp;
        else ++c.fp;
    }
    for (int i : rel) {
        if (!rec.count(i)) ++c.fn;
    }
    c.tn = universe - c.tp - c.fp - c.fn;
    return c;
}

// (TP + TN) / (TP + TN + FP + FN)
inline double accuracy(const ConfusionCounts& c) {
    const long long total = c.total();
    if (total <= 0) throw EmptyUniverseError();
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
}

// Fraction of the first k ranked items that are relevant.
inline double accuracy_at_k(const RankedList& ranked, const std::vector<int>& relevant, int k) {
    if (k < 1) throw InvalidConfigError("k must be >= 1");
    if (ranked.items.size() < static_cast<std::size_t>(k))
        throw ListTooShortError(std::to_string(ranked.items.size()) + " entries, k = " +
                                std::to_string(k));
    const std::set<int> rel(relevant.begin(), relevant.end());
    long long hits = 0;
    for (int r = 0; r < k; ++r)
        if (rel.count(ranked.items[r])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(k);
}

// TP / (TP + FN); 0 when there are no relevant items at all.
inline double recall(const ConfusionCounts& c) {
    const long long denom = c.tp + c.fn;
    if (denom == 0) return 0.0;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

// TP / (TP + FP); 0 when nothing was recommended.
inline double precision(const ConfusionCounts& c) {
    const long long denom = c.tp + c.fp;
    if (denom == 0) return 0.0;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

// Harmonic mean of precision and recall; 0 when either vanishes.
inline double f1(const ConfusionCounts& c) {
    const double p = precision(c), r = recall(c);
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

// Shifted cosine mapped onto [0, 1]: identical directions give 1, orthogonal
// 0.5, opposite 0. A zero vector is treated as orthogonal to everything;
// `degenerate` (when supplied) is raised if both inputs are zero.
inline double item_similarity(const std::vector<double>& a, const std::vector<double>& b,
                              bool* degenerate = nullptr) {
    if (a.size() != b.size())
        throw ShapeMismatchError("item_similarity: " + std::to_string(a.size()) + " vs " +
                                 std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        if (degenerate != nullptr && na == 0.0 && nb == 0.0) *degenerate = true;
        return 0.5;
    }
    const double cosine = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
    return (1.0 + cosine) / 2.0;
}

// Intra-list diversity of the first k entries: one minus the mean pairwise
// similarity over all ordered pairs. A single-item list has no pairs and is
// reported as 0.
inline double ild_at_k(const RankedList& ranked, int k, const Matrix& embeddings) {
    if (k < 1) throw InvalidConfigError("k must be >= 1");
    if (ranked.items.size() < static_cast<std::size_t>(k))
        throw ListTooShortError(std::to_string(ranked.items.size()) + " entries, k = " +
                                std::to_string(k));
    for (int r = 0; r < k; ++r) {
        const int item = ranked.items[r];
        if (item < 0 || static_cast<std::size_t>(item) >= embeddings.rows)
            throw UnknownNodeError(item);
    }
    if (k == 1) return 0.0;
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            if (i == j) continue;
            sum += item_similarity(embeddings.row(ranked.items[i]),
                                   embeddings.row(ranked.items[j]));
        }
    }
    return 1.0 - sum / (static_cast<double>(k) * static_cast<double>(k - 1));
}

}  // namespace recbench::metrics
