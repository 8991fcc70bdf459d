#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "recbench/errors.hpp"
#include "recbench/rng.hpp"

namespace recbench::ad {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

class Tape;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized during backward
    bool requires_grad = false;
    std::function<void()> backward;  // empty for leaves
    Tape* tape = nullptr;
};

// Lightweight handle into a Tape-owned node. Valid only while the tape lives.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Node* n) : node_(n) {}

    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    const std::vector<double>& values() const { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }

    double item() const {
        if (node_->value.size() != 1) throw ShapeMismatchError("item() on non-scalar");
        return node_->value[0];
    }

    Node* node() const { return node_; }
    Tape& tape() const { return *node_->tape; }
    bool valid() const { return node_ != nullptr; }

private:
    Node* node_ = nullptr;
};

namespace detail {

inline void ensure_finite(const std::vector<double>& v, const char* where) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NonFiniteError(where);
    }
}

}  // namespace detail

// Records operations in creation order; creation order is a topological
// order, so the backward pass is a single reverse sweep that touches every
// node exactly once.
class Tape {
public:
    Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (numel(shape) != values.size())
            throw ShapeMismatchError("leaf: shape " + shape_str(shape) + " vs " +
                                     std::to_string(values.size()) + " values");
        detail::ensure_finite(values, "leaf");
        Node& n = fresh();
        n.shape = std::move(shape);
        n.value = std::move(values);
        n.requires_grad = requires_grad;
        return Tensor(&n);
    }

    Tensor constant(Shape shape, std::vector<double> values) {
        return leaf(std::move(shape), std::move(values), false);
    }

    Tensor full(Shape shape, double fill) {
        std::vector<double> v(numel(shape), fill);
        return leaf(std::move(shape), std::move(v), false);
    }

    Tensor scalar(double v) { return leaf({1}, {v}, false); }

    Node& fresh() {
        nodes_.emplace_back();
        nodes_.back().tape = this;
        return nodes_.back();
    }

    // Reverse sweep from a scalar root. Gradients accumulate by summation,
    // so the result is independent of fan-out order.
    void backward(const Tensor& root) {
        if (root.size() != 1) throw ShapeMismatchError("backward root must be scalar");
        for (Node& n : nodes_) {
            if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
        }
        root.node()->grad.assign(1, 1.0);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->backward && it->requires_grad && !it->grad.empty()) it->backward();
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::deque<Node> nodes_;  // stable addresses
};

namespace detail {

inline Node& result_node(Tape& tape, Shape shape, std::vector<double> value, bool requires_grad,
                         const char* op) {
    ensure_finite(value, op);
    Node& n = tape.fresh();
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return n;
}

// b broadcasts along leading dimensions: its shape must equal a trailing
// suffix of a's shape (a scalar broadcasts everywhere).
inline bool broadcast_ok(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    if (numel(b) == 1) return true;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
    }
    return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename DfA, typename DfB>
Tensor binary_ew(const Tensor& a, const Tensor& b, Fwd fwd, DfA dfa, DfB dfb, const char* name) {
    if (!broadcast_ok(a.shape(), b.shape()))
        throw ShapeMismatchError(std::string(name) + ": " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    const std::size_t n = a.size();
    const std::size_t bn = b.size();
    std::vector<double> out(n);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i % bn]);

    Node& r = result_node(a.tape(), a.shape(), std::move(out),
                          a.requires_grad() || b.requires_grad(), name);
    if (r.requires_grad) {
        Node* an = a.node();
        Node* bn_node = b.node();
        Node* rn = &r;
        r.backward = [an, bn_node, rn, dfa, dfb, n, bn]() {
            for (std::size_t i = 0; i < n; ++i) {
                const double g = rn->grad[i];
                if (an->requires_grad) an->grad[i] += g * dfa(an->value[i], bn_node->value[i % bn]);
                if (bn_node->requires_grad)
                    bn_node->grad[i % bn] += g * dfb(an->value[i], bn_node->value[i % bn]);
            }
        };
    }
    return Tensor(&r);
}

template <typename Fwd, typename Df>
Tensor unary_ew(const Tensor& a, Fwd fwd, Df df, const char* name) {
    const std::size_t n = a.size();
    std::vector<double> out(n);
    const auto& av = a.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);

    Node& r = result_node(a.tape(), a.shape(), std::move(out), a.requires_grad(), name);
    if (r.requires_grad) {
        Node* an = a.node();
        Node* rn = &r;
        r.backward = [an, rn, df, n]() {
            for (std::size_t i = 0; i < n; ++i)
                an->grad[i] += rn->grad[i] * df(an->value[i], rn->value[i]);
        };
    }
    return Tensor(&r);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_ew(
        a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; }, "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_ew(
        a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; }, "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_ew(
        a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; }, "mul");
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_ew(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_ew(
        a,
        [](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        },
        [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary_ew(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; },
        "tanh");
}

inline Tensor scale(const Tensor& a, double k) {
    return detail::unary_ew(
        a, [k](double x) { return k * x; }, [k](double, double) { return k; }, "scale");
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeMismatchError("matmul: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = av[static_cast<std::size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data() + static_cast<std::size_t>(p) * n;
            double* crow = out.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    Node& r = detail::result_node(a.tape(), {m, n}, std::move(out),
                                  a.requires_grad() || b.requires_grad(), "matmul");
    if (r.requires_grad) {
        Node* an = a.node();
        Node* bn = b.node();
        Node* rn = &r;
        r.backward = [an, bn, rn, m, k, n]() {
            if (an->requires_grad) {  // dA = dC * B^T
                for (int i = 0; i < m; ++i) {
                    for (int p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* grow = rn->grad.data() + static_cast<std::size_t>(i) * n;
                        const double* brow = bn->value.data() + static_cast<std::size_t>(p) * n;
                        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                        an->grad[static_cast<std::size_t>(i) * k + p] += s;
                    }
                }
            }
            if (bn->requires_grad) {  // dB = A^T * dC
                for (int p = 0; p < k; ++p) {
                    double* brow = bn->grad.data() + static_cast<std::size_t>(p) * n;
                    for (int i = 0; i < m; ++i) {
                        const double aip = an->value[static_cast<std::size_t>(i) * k + p];
                        if (aip == 0.0) continue;
                        const double* grow = rn->grad.data() + static_cast<std::size_t>(i) * n;
                        for (int j = 0; j < n; ++j) brow[j] += aip * grow[j];
                    }
                }
            }
        };
    }
    return Tensor(&r);
}

inline Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) throw ShapeMismatchError("transpose: rank-2 only");
    const int m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
    Node& r = detail::result_node(a.tape(), {n, m}, std::move(out), a.requires_grad(), "transpose");
    if (r.requires_grad) {
        Node* an = a.node();
        Node* rn = &r;
        r.backward = [an, rn, m, n]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    an->grad[static_cast<std::size_t>(i) * n + j] +=
                        rn->grad[static_cast<std::size_t>(j) * m + i];
        };
    }
    return Tensor(&r);
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeMismatchError("reshape to " + shape_str(shape));
    Node& r = detail::result_node(a.tape(), std::move(shape), a.values(), a.requires_grad(),
                                  "reshape");
    if (r.requires_grad) {
        Node* an = a.node();
        Node* rn = &r;
        r.backward = [an, rn]() {
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += rn->grad[i];
        };
    }
    return Tensor(&r);
}

// Rows of x selected by index, in order; indices may repeat. Backward
// scatter-adds, so repeats accumulate.
inline Tensor gather_rows(const Tensor& x, std::vector<int> indices) {
    if (x.shape().size() != 2) throw ShapeMismatchError("gather_rows: rank-2 only");
    const int rows = x.shape()[0], d = x.shape()[1];
    for (int i : indices) {
        if (i < 0 || i >= rows) throw ShapeMismatchError("gather_rows: index out of range");
    }
    std::vector<double> out(indices.size() * static_cast<std::size_t>(d));
    const auto& xv = x.values();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::copy_n(xv.data() + static_cast<std::size_t>(indices[r]) * d, d,
                    out.data() + r * static_cast<std::size_t>(d));
    }
    Node& res = detail::result_node(x.tape(), {static_cast<int>(indices.size()), d},
                                    std::move(out), x.requires_grad(), "gather_rows");
    if (res.requires_grad) {
        Node* xn = x.node();
        Node* rn = &res;
        auto idx = std::move(indices);
        res.backward = [xn, rn, idx, d]() {
            for (std::size_t r = 0; r < idx.size(); ++r) {
                double* dst = xn->grad.data() + static_cast<std::size_t>(idx[r]) * d;
                const double* src = rn->grad.data() + r * static_cast<std::size_t>(d);
                for (int c = 0; c < d; ++c) dst[c] += src[c];
            }
        };
    }
    return Tensor(&res);
}

inline Tensor slice_rows(const Tensor& x, int from, int to) {
    if (x.shape().size() != 2 || from < 0 || to > x.shape()[0] || from >= to)
        throw ShapeMismatchError("slice_rows");
    const int d = x.shape()[1];
    std::vector<double> out(x.values().begin() + static_cast<std::size_t>(from) * d,
                            x.values().begin() + static_cast<std::size_t>(to) * d);
    Node& r = detail::result_node(x.tape(), {to - from, d}, std::move(out), x.requires_grad(),
                                  "slice_rows");
    if (r.requires_grad) {
        Node* xn = x.node();
        Node* rn = &r;
        r.backward = [xn, rn, from, d]() {
            const std::size_t off = static_cast<std::size_t>(from) * d;
            for (std::size_t i = 0; i < rn->grad.size(); ++i) xn->grad[off + i] += rn->grad[i];
        };
    }
    return Tensor(&r);
}

inline Tensor slice_cols(const Tensor& x, int from, int to) {
    if (x.shape().size() != 2 || from < 0 || to > x.shape()[1] || from >= to)
        throw ShapeMismatchError("slice_cols");
    const int n = x.shape()[0], d = x.shape()[1], w = to - from;
    std::vector<double> out(static_cast<std::size_t>(n) * w);
    const auto& xv = x.values();
    for (int i = 0; i < n; ++i)
        std::copy_n(xv.data() + static_cast<std::size_t>(i) * d + from, w,
                    out.data() + static_cast<std::size_t>(i) * w);
    Node& r = detail::result_node(x.tape(), {n, w}, std::move(out), x.requires_grad(),
                                  "slice_cols");
    if (r.requires_grad) {
        Node* xn = x.node();
        Node* rn = &r;
        r.backward = [xn, rn, n, d, from, w]() {
            for (int i = 0; i < n; ++i) {
                double* dst = xn->grad.data() + static_cast<std::size_t>(i) * d + from;
                const double* src = rn->grad.data() + static_cast<std::size_t>(i) * w;
                for (int c = 0; c < w; ++c) dst[c] += src[c];
            }
        };
    }
    return Tensor(&r);
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatchError("concat_rows: empty");
    const int d = parts.front().shape()[1];
    int rows = 0;
    bool grad = false;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.shape()[1] != d)
            throw ShapeMismatchError("concat_rows: column mismatch");
        rows += p.shape()[0];
        grad = grad || p.requires_grad();
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rows) * d);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    Node& r = detail::result_node(parts.front().tape(), {rows, d}, std::move(out), grad,
                                  "concat_rows");
    if (r.requires_grad) {
        std::vector<Node*> srcs;
        for (const auto& p : parts) srcs.push_back(p.node());
        Node* rn = &r;
        r.backward = [srcs, rn]() {
            std::size_t off = 0;
            for (Node* s : srcs) {
                if (s->requires_grad) {
                    for (std::size_t i = 0; i < s->value.size(); ++i)
                        s->grad[i] += rn->grad[off + i];
                }
                off += s->value.size();
            }
        };
    }
    return Tensor(&r);
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0])
        throw ShapeMismatchError("concat_cols");
    const int n = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(n) * (p + q));
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.values().data() + static_cast<std::size_t>(i) * p, p,
                    out.data() + static_cast<std::size_t>(i) * (p + q));
        std::copy_n(b.values().data() + static_cast<std::size_t>(i) * q, q,
                    out.data() + static_cast<std::size_t>(i) * (p + q) + p);
    }
    Node& r = detail::result_node(a.tape(), {n, p + q}, std::move(out),
                                  a.requires_grad() || b.requires_grad(), "concat_cols");
    if (r.requires_grad) {
        Node* an = a.node();
        Node* bn = b.node();
        Node* rn = &r;
        r.backward = [an, bn, rn, n, p, q]() {
            for (int i = 0; i < n; ++i) {
                const double* src = rn->grad.data() + static_cast<std::size_t>(i) * (p + q);
                if (an->requires_grad) {
                    double* da = an->grad.data() + static_cast<std::size_t>(i) * p;
                    for (int c = 0; c < p; ++c) da[c] += src[c];
                }
                if (bn->requires_grad) {
                    double* db = bn->grad.data() + static_cast<std::size_t>(i) * q;
                    for (int c = 0; c < q; ++c) db[c] += src[p + c];
                }
            }
        };
    }
    return Tensor(&r);
}

// ---------------------------------------------------------------------------
// Reductions and normalizations
// ---------------------------------------------------------------------------

inline Tensor row_sum(const Tensor& x) {
    if (x.shape().size() != 2) throw ShapeMismatchError("row_sum: rank-2 only");
    const int n = x.shape()[0], d = x.shape()[1];
    std::vector<double> out(n, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* row = x.values().data() + static_cast<std::size_t>(i) * d;
        out[i] = std::accumulate(row, row + d, 0.0);
    }
    Node& r = detail::result_node(x.tape(), {n, 1}, std::move(out), x.requires_grad(), "row_sum");
    if (r.requires_grad) {
        Node* xn = x.node();
        Node* rn = &r;
        r.backward = [xn, rn, n, d]() {
            for (int i = 0; i < n; ++i) {
                const double g = rn->grad[i];
                double* row = xn->grad.data() + static_cast<std::size_t>(i) * d;
                for (int c = 0; c < d; ++c) row[c] += g;
            }
        };
    }
    return Tensor(&r);
}

inline Tensor mean_all(const Tensor& x) {
    const std::size_t n = x.size();
    const double m = std::accumulate(x.values().begin(), x.values().end(), 0.0) /
                     static_cast<double>(n);
    Node& r = detail::result_node(x.tape(), {1}, {m}, x.requires_grad(), "mean_all");
    if (r.requires_grad) {
        Node* xn = x.node();
        Node* rn = &r;
        r.backward = [xn, rn, n]() {
            const double g = rn->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) xn->grad[i] += g;
        };
    }
    return Tensor(&r);
}

// Row-wise softmax. Masking is done by adding a large negative constant to
// the logits beforehand.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.shape().size() != 2) throw ShapeMismatchError("softmax_rows: rank-2 only");
    const int n = x.shape()[0], d = x.shape()[1];
    std::vector<double> out(x.size());
    for (int i = 0; i < n; ++i) {
        const double* row = x.values().data() + static_cast<std::size_t>(i) * d;
        double* orow = out.data() + static_cast<std::size_t>(i) * d;
        const double mx = *std::max_element(row, row + d);
        double sum = 0.0;
        for (int c = 0; c < d; ++c) {
            orow[c] = std::exp(row[c] - mx);
            sum += orow[c];
        }
        for (int c = 0; c < d; ++c) orow[c] /= sum;
    }
    Node& r = detail::result_node(x.tape(), x.shape(), std::move(out), x.requires_grad(),
                                  "softmax_rows");
    if (r.requires_grad) {
        Node* xn = x.node();
        Node* rn = &r;
        r.backward = [xn, rn, n, d]() {
            for (int i = 0; i < n; ++i) {
                const double* y = rn->value.data() + static_cast<std::size_t>(i) * d;
                const double* dy = rn->grad.data() + static_cast<std::size_t>(i) * d;
                double dot = 0.0;
                for (int c = 0; c < d; ++c) dot += y[c] * dy[c];
                double* dx = xn->grad.data() + static_cast<std::size_t>(i) * d;
                for (int c = 0; c < d; ++c) dx[c] += y[c] * (dy[c] - dot);
            }
        };
    }
    return Tensor(&r);
}

inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                              double eps = 1e-5) {
    if (x.shape().size() != 2) throw ShapeMismatchError("layer_norm_rows: rank-2 only");
    const int n = x.shape()[0], d = x.shape()[1];
    if (static_cast<int>(gain.size()) != d || static_cast<int>(bias.size()) != d)
        throw ShapeMismatchError("layer_norm_rows: gain/bias width");
    std::vector<double> out(x.size());
    std::vector<double> inv_std(n), xhat(x.size());
    for (int i = 0; i < n; ++i) {
        const double* row = x.values().data() + static_cast<std::size_t>(i) * d;
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += row[c];
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (int c = 0; c < d; ++c) {
            const std::size_t k = static_cast<std::size_t>(i) * d + c;
            xhat[k] = (row[c] - mean) * is;
            out[k] = xhat[k] * gain.values()[c] + bias.values()[c];
        }
    }
    const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    Node& r = detail::result_node(x.tape(), x.shape(), std::move(out), rg, "layer_norm_rows");
    if (rg) {
        Node* xn = x.node();
        Node* gn = gain.node();
        Node* bn = bias.node();
        Node* rn = &r;
        r.backward = [xn, gn, bn, rn, n, d, inv_std = std::move(inv_std),
                      xhat = std::move(xhat)]() {
            for (int i = 0; i < n; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * d;
                const double* dy = rn->grad.data() + base;
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (int c = 0; c < d; ++c) {
                    const double dxh = dy[c] * gn->value[c];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xhat[base + c];
                }
                mean_dxhat /= d;
                mean_dxhat_xhat /= d;
                for (int c = 0; c < d; ++c) {
                    if (gn->requires_grad) gn->grad[c] += dy[c] * xhat[base + c];
                    if (bn->requires_grad) bn->grad[c] += dy[c];
                    if (xn->requires_grad) {
                        const double dxh = dy[c] * gn->value[c];
                        xn->grad[base + c] +=
                            inv_std[i] * (dxh - mean_dxhat - xhat[base + c] * mean_dxhat_xhat);
                    }
                }
            }
        };
    }
    return Tensor(&r);
}

inline Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12) {
    if (x.shape().size() != 2) throw ShapeMismatchError("l2_normalize_rows: rank-2 only");
    const int n = x.shape()[0], d = x.shape()[1];
    std::vector<double> out(x.size());
    std::vector<double> inv_norm(n);
    for (int i = 0; i < n; ++i) {
        const double* row = x.values().data() + static_cast<std::size_t>(i) * d;
        double ss = 0.0;
        for (int c = 0; c < d; ++c) ss += row[c] * row[c];
        const double inv = 1.0 / std::max(std::sqrt(ss), eps);
        inv_norm[i] = inv;
        for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(i) * d + c] = row[c] * inv;
    }
    Node& r = detail::result_node(x.tape(), x.shape(), std::move(out), x.requires_grad(),
                                  "l2_normalize_rows");
    if (r.requires_grad) {
        Node* xn = x.node();
        Node* rn = &r;
        r.backward = [xn, rn, n, d, inv_norm = std::move(inv_norm)]() {
            for (int i = 0; i < n; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * d;
                const double* y = rn->value.data() + base;
                const double* dy = rn->grad.data() + base;
                double dot = 0.0;
                for (int c = 0; c < d; ++c) dot += y[c] * dy[c];
                for (int c = 0; c < d; ++c)
                    xn->grad[base + c] += inv_norm[i] * (dy[c] - y[c] * dot);
            }
        };
    }
    return Tensor(&r);
}

// ---------------------------------------------------------------------------
// Convolution + pooling (fused)
// ---------------------------------------------------------------------------

// Valid cross-correlation followed by non-overlapping max pooling. Input is
// (B,H,W,Cin) or (H,W,Cin); kernels are (kh,kw,Cin,Cout). Pool ties resolve
// to the first cell in row-major scan order.
inline Tensor conv2d_maxpool(const Tensor& input, const Tensor& kernels, int stride, int ph,
                             int pw) {
    Shape ishape = input.shape();
    bool batched = true;
    if (ishape.size() == 3) {
        ishape.insert(ishape.begin(), 1);
        batched = false;
    }
    if (ishape.size() != 4 || kernels.shape().size() != 4)
        throw ShapeMismatchError("conv2d_maxpool: need (B,H,W,C) input and (kh,kw,Cin,Cout)");
    const int B = ishape[0], H = ishape[1], W = ishape[2], Cin = ishape[3];
    const int kh = kernels.shape()[0], kw = kernels.shape()[1];
    const int KCin = kernels.shape()[2], Cout = kernels.shape()[3];
    if (KCin != Cin) throw ShapeMismatchError("conv2d_maxpool: channel mismatch");
    if (H < kh || W < kw) throw ShapeMismatchError("conv2d_maxpool: kernel larger than input");
    if (stride < 1 || ph < 1 || pw < 1) throw ShapeMismatchError("conv2d_maxpool: bad stride/pool");
    const int Hc = (H - kh) / stride + 1, Wc = (W - kw) / stride + 1;
    const int Hp = Hc / ph, Wp = Wc / pw;
    if (Hp < 1 || Wp < 1) throw ShapeMismatchError("conv2d_maxpool: pooled output empty");

    const auto& iv = input.values();
    const auto& kv = kernels.values();
    auto in_at = [&](int b, int y, int x, int c) -> double {
        return iv[((static_cast<std::size_t>(b) * H + y) * W + x) * Cin + c];
    };
    auto k_at = [&](int y, int x, int ci, int co) -> double {
        return kv[((static_cast<std::size_t>(y) * kw + x) * Cin + ci) * Cout + co];
    };

    std::vector<double> out(static_cast<std::size_t>(B) * Hp * Wp * Cout);
    std::vector<int> argmax(out.size());  // flat (y*Wc + x) conv coordinate per pooled cell
    for (int b = 0; b < B; ++b) {
        for (int py = 0; py < Hp; ++py) {
            for (int px = 0; px < Wp; ++px) {
                for (int co = 0; co < Cout; ++co) {
                    double best = -std::numeric_limits<double>::infinity();
                    int best_pos = -1;
                    for (int wy = 0; wy < ph; ++wy) {
                        for (int wx = 0; wx < pw; ++wx) {
                            const int cy = py * ph + wy, cx = px * pw + wx;
                            double acc = 0.0;
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx)
                                    for (int ci = 0; ci < Cin; ++ci)
                                        acc += in_at(b, cy * stride + ky, cx * stride + kx, ci) *
                                               k_at(ky, kx, ci, co);
                            if (acc > best) {
                                best = acc;
                                best_pos = cy * Wc + cx;
                            }
                        }
                    }
                    const std::size_t oi =
                        ((static_cast<std::size_t>(b) * Hp + py) * Wp + px) * Cout + co;
                    out[oi] = best;
                    argmax[oi] = best_pos;
                }
            }
        }
    }
    Shape oshape = batched ? Shape{B, Hp, Wp, Cout} : Shape{Hp, Wp, Cout};
    Node& r = detail::result_node(input.tape(), std::move(oshape), std::move(out),
                                  input.requires_grad() || kernels.requires_grad(),
                                  "conv2d_maxpool");
    if (r.requires_grad) {
        Node* in_n = input.node();
        Node* k_n = kernels.node();
        Node* rn = &r;
        r.backward = [in_n, k_n, rn, argmax = std::move(argmax), B, H, W, Cin, kh, kw, Cout, Hp,
                      Wp, Wc, stride]() {
            auto in_idx = [&](int b, int y, int x, int c) {
                return ((static_cast<std::size_t>(b) * H + y) * W + x) * Cin + c;
            };
            auto k_idx = [&](int y, int x, int ci, int co) {
                return ((static_cast<std::size_t>(y) * kw + x) * Cin + ci) * Cout + co;
            };
            for (int b = 0; b < B; ++b) {
                for (int py = 0; py < Hp; ++py) {
                    for (int px = 0; px < Wp; ++px) {
                        for (int co = 0; co < Cout; ++co) {
                            const std::size_t oi =
                                ((static_cast<std::size_t>(b) * Hp + py) * Wp + px) * Cout + co;
                            const double g = rn->grad[oi];
                            if (g == 0.0) continue;
                            const int pos = argmax[oi];
                            const int cy = pos / Wc, cx = pos % Wc;
                            for (int ky = 0; ky < kh; ++ky) {
                                for (int kx = 0; kx < kw; ++kx) {
                                    for (int ci = 0; ci < Cin; ++ci) {
                                        const int y = cy * stride + ky, x = cx * stride + kx;
                                        if (k_n->requires_grad)
                                            k_n->grad[k_idx(ky, kx, ci, co)] +=
                                                g * in_n->value[in_idx(b, y, x, ci)];
                                        if (in_n->requires_grad)
                                            in_n->grad[in_idx(b, y, x, ci)] +=
                                                g * k_n->value[k_idx(ky, kx, ci, co)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return Tensor(&r);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean over the batch of -sum(y * log softmax(z)). Targets must be rows
// summing to 1 (one-hot or soft labels).
inline Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& targets) {
    if (logits.shape().size() != 2 || logits.shape() != targets.shape())
        throw ShapeMismatchError("softmax_cross_entropy");
    if (targets.requires_grad())
        throw ShapeMismatchError("softmax_cross_entropy: targets must be constant");
    const int B = logits.shape()[0], C = logits.shape()[1];
    for (int i = 0; i < B; ++i) {
        const double* trow = targets.values().data() + static_cast<std::size_t>(i) * C;
        const double sum = std::accumulate(trow, trow + C, 0.0);
        if (std::abs(sum - 1.0) > 1e-9)
            throw ShapeMismatchError("softmax_cross_entropy: target row must sum to 1");
    }
    std::vector<double> probs(logits.size());
    double loss = 0.0;
    for (int i = 0; i < B; ++i) {
        const double* z = logits.values().data() + static_cast<std::size_t>(i) * C;
        const double* y = targets.values().data() + static_cast<std::size_t>(i) * C;
        double* p = probs.data() + static_cast<std::size_t>(i) * C;
        const double mx = *std::max_element(z, z + C);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            p[c] = std::exp(z[c] - mx);
            sum += p[c];
        }
        const double lse = mx + std::log(sum);
        for (int c = 0; c < C; ++c) {
            p[c] /= sum;
            loss -= y[c] * (z[c] - lse);
        }
    }
    loss /= B;
    Node& r = detail::result_node(logits.tape(), {1}, {loss}, logits.requires_grad(),
                                  "softmax_cross_entropy");
    if (r.requires_grad) {
        Node* zn = logits.node();
        Node* yn = targets.node();
        Node* rn = &r;
        r.backward = [zn, yn, rn, probs = std::move(probs), B, C]() {
            const double g = rn->grad[0] / B;
            for (std::size_t i = 0; i < zn->grad.size(); ++i)
                zn->grad[i] += g * (probs[i] - yn->value[i]);
        };
    }
    return Tensor(&r);
}

// Numerically stable mean binary cross entropy on logits.
inline Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape()) throw ShapeMismatchError("bce_with_logits");
    if (targets.requires_grad())
        throw ShapeMismatchError("bce_with_logits: targets must be constant");
    const std::size_t n = logits.size();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = logits.values()[i], y = targets.values()[i];
        loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    loss /= static_cast<double>(n);
    Node& r = detail::result_node(logits.tape(), {1}, {loss}, logits.requires_grad(),
                                  "bce_with_logits");
    if (r.requires_grad) {
        Node* zn = logits.node();
        Node* yn = targets.node();
        Node* rn = &r;
        r.backward = [zn, yn, rn, n]() {
            const double g = rn->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double x = zn->value[i];
                const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                          : std::exp(x) / (1.0 + std::exp(x));
                zn->grad[i] += g * (s - yn->value[i]);
            }
        };
    }
    return Tensor(&r);
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

// Inverted dropout, deterministic per seed. Identity when not training or
// when rate is 0.
inline Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw InvalidConfigError("dropout rate must be in [0,1)");
    if (!training || rate == 0.0) return x;
    Rng rng(seed);
    const std::size_t n = x.size();
    std::vector<double> mask(n);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform01() >= rate ? keep_scale : 0.0;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x.values()[i] * mask[i];
    Node& r = detail::result_node(x.tape(), x.shape(), std::move(out), x.requires_grad(),
                                  "dropout");
    if (r.requires_grad) {
        Node* xn = x.node();
        Node* rn = &r;
        r.backward = [xn, rn, mask = std::move(mask)]() {
            for (std::size_t i = 0; i < mask.size(); ++i) xn->grad[i] += rn->grad[i] * mask[i];
        };
    }
    return Tensor(&r);
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Central finite differences per coordinate against the tape gradient.
// Returns the max over coordinates of |a - n| / max(|a|, |n|, 1e-8).
template <typename F>
double grad_check(F&& f, const Shape& shape, std::vector<double> x0, double eps = 1e-5) {
    std::vector<double> analytic;
    {
        Tape tape;
        Tensor x = tape.leaf(shape, x0, true);
        Tensor y = f(tape, x);
        tape.backward(y);
        analytic = x.grad();
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const double keep = x0[i];
        double fp, fm;
        {
            Tape tape;
            x0[i] = keep + eps;
            fp = f(tape, tape.leaf(shape, x0, false)).item();
        }
        {
            Tape tape;
            x0[i] = keep - eps;
            fm = f(tape, tape.leaf(shape, x0, false)).item();
        }
        x0[i] = keep;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace recbench::ad
