#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "recbench/autodiff.hpp"
#include "recbench/errors.hpp"
#include "recbench/rng.hpp"

namespace recbench::nn {

struct Param {
    std::string name;
    ad::Shape shape;
    std::vector<double> value;
};

// Named, ordered collection of trainable arrays. Parameters persist across
// steps; each training step binds them onto a fresh tape as leaves.
class ParamStore {
public:
    Param& add(const std::string& name, ad::Shape shape) {
        if (index_.count(name)) throw InvalidConfigError("duplicate parameter: " + name);
        index_[name] = params_.size();
        params_.push_back(Param{name, std::move(shape), {}});
        Param& p = params_.back();
        p.value.assign(ad::numel(p.shape), 0.0);
        return p;
    }

    Param& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvalidConfigError("unknown parameter: " + name);
        return params_[it->second];
    }
    const Param& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvalidConfigError("unknown parameter: " + name);
        return params_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    std::size_t size() const { return params_.size(); }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

private:
    std::vector<Param> params_;
    std::map<std::string, std::size_t> index_;
};

// Leaves bound for one tape; lookups by parameter name.
class BoundParams {
public:
    BoundParams(ParamStore& store, ad::Tape& tape) : store_(&store) {
        for (Param& p : store.params()) bound_[p.name] = tape.leaf(p.shape, p.value, true);
    }

    const ad::Tensor& operator[](const std::string& name) const {
        auto it = bound_.find(name);
        if (it == bound_.end()) throw InvalidConfigError("unbound parameter: " + name);
        return it->second;
    }

    // Gradient of the bound leaf for a parameter, after backward().
    const std::vector<double>& grad(const std::string& name) const {
        return (*this)[name].grad();
    }

    ParamStore& store() const { return *store_; }
    const std::map<std::string, ad::Tensor>& all() const { return bound_; }

private:
    ParamStore* store_;
    std::map<std::string, ad::Tensor> bound_;
};

// Uniform Glorot init in +/- sqrt(6 / (fan_in + fan_out)). For rank >= 2 the
// first dimension is fan-in and the last fan-out, both scaled by the inner
// receptive field; rank-1 arrays (biases) stay zero.
inline void glorot_init(Param& p, Rng& rng) {
    if (p.shape.size() < 2) return;
    std::size_t inner = 1;
    for (std::size_t i = 1; i + 1 < p.shape.size(); ++i) inner *= static_cast<std::size_t>(p.shape[i]);
    double fan_in = 0.0, fan_out = 0.0;
    if (p.shape.size() == 4) {  // conv kernels (kh, kw, Cin, Cout)
        const double field = static_cast<double>(p.shape[0]) * p.shape[1];
        fan_in = field * p.shape[2];
        fan_out = field * p.shape[3];
    } else {
        fan_in = static_cast<double>(p.shape.front()) * inner;
        fan_out = static_cast<double>(p.shape.back()) * inner;
    }
    const double r = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : p.value) v = rng.uniform(-r, r);
}

// Initializes every parameter in declaration order from one generator, so a
// store built the same way always starts from the same point.
inline void glorot_init(ParamStore& store, Rng& rng) {
    for (Param& p : store.params()) glorot_init(p, rng);
}

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) {
    return k == OptimizerKind::sgd ? "sgd" : "adam";
}

// First-order update over a ParamStore. Adam keeps per-parameter moment
// slots keyed by name and uses bias-corrected estimates.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {
        if (!(lr > 0.0)) throw InvalidConfigError("learning rate must be positive");
    }

    void step(BoundParams& bound) {
        ++t_;
        for (Param& p : bound.store().params()) {
            const std::vector<double>& g = bound.grad(p.name);
            if (g.size() != p.value.size()) throw ShapeMismatchError("optimizer: grad size");
            ad::detail::ensure_finite(g, "optimizer gradient");
            if (kind_ == OptimizerKind::sgd) {
                for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr_ * g[i];
            } else {
                Slot& s = slots_[p.name];
                if (s.m.empty()) {
                    s.m.assign(p.value.size(), 0.0);
                    s.v.assign(p.value.size(), 0.0);
                }
                const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
                const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
                for (std::size_t i = 0; i < p.value.size(); ++i) {
                    s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
                    s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
                    const double mhat = s.m[i] / bc1;
                    const double vhat = s.v[i] / bc2;
                    p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                }
            }
            ad::detail::ensure_finite(p.value, "optimizer update");
        }
    }

    OptimizerKind kind() const { return kind_; }
    double lr() const { return lr_; }
    long steps() const { return t_; }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    OptimizerKind kind_;
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    std::map<std::string, Slot> slots_;
};

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary blob, byte-stable across runs.
//
//   magic   u32   "RBCP"
//   version u32   1
//   count   u64
//   per tensor:
//     name_len u64, name bytes, rank u64, dims u64..., values f64...
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint32_t kCheckpointMagic = 0x50434252;  // "RBCP" little-endian
constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) {
    put_u64(os, std::bit_cast<std::uint64_t>(d));
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline void save_checkpoint(const ParamStore& store, std::ostream& os) {
    detail::put_u32(os, detail::kCheckpointMagic);
    detail::put_u32(os, detail::kCheckpointVersion);
    detail::put_u64(os, store.size());
    for (const Param& p : store.params()) {
        detail::put_u64(os, p.name.size());
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::put_u64(os, p.shape.size());
        for (int d : p.shape) detail::put_u64(os, static_cast<std::uint64_t>(d));
        for (double v : p.value) detail::put_f64(os, v);
    }
    if (!os) throw IoError("checkpoint: write failed");
}

inline ParamStore load_checkpoint(std::istream& is) {
    if (detail::get_u32(is) != detail::kCheckpointMagic)
        throw IoError("checkpoint: bad magic");
    if (detail::get_u32(is) != detail::kCheckpointVersion)
        throw IoError("checkpoint: unsupported version");
    const std::uint64_t count = detail::get_u64(is);
    ParamStore store;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = detail::get_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw IoError("checkpoint: truncated name");
        const std::uint64_t rank = detail::get_u64(is);
        ad::Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(detail::get_u64(is));
        Param& p = store.add(name, shape);
        for (double& v : p.value) v = detail::get_f64(is);
    }
    return store;
}

inline void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    save_checkpoint(store, os);
}

inline ParamStore load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return load_checkpoint(is);
}

// Finite-difference audit of a model loss against the tape gradient, using
// the same loss builder training uses. Returns the worst relative error over
// every coordinate of every parameter.
template <typename LossBuilder>
double grad_check_params(ParamStore& store, LossBuilder&& build_loss, double eps = 1e-5) {
    std::map<std::string, std::vector<double>> analytic;
    {
        ad::Tape tape;
        BoundParams bound(store, tape);
        ad::Tensor loss = build_loss(tape, bound);
        tape.backward(loss);
        for (const Param& p : store.params()) analytic[p.name] = bound.grad(p.name);
    }
    auto eval = [&]() {
        ad::Tape tape;
        BoundParams bound(store, tape);
        return build_loss(tape, bound).item();
    };
    double worst = 0.0;
    for (Param& p : store.params()) {
        const std::vector<double>& a = analytic[p.name];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double keep = p.value[i];
            p.value[i] = keep + eps;
            const double fp = eval();
            p.value[i] = keep - eps;
            const double fm = eval();
            p.value[i] = keep;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double denom = std::max({std::abs(a[i]), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a[i] - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace recbench::nn
