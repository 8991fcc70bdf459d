#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace recbench {

// Seeded RNG wrapper. std::mt19937_64 output is fully specified by the
// standard, but the std distributions are not; the helpers below derive
// variates from raw engine output so identical seeds give identical streams
// on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Unbiased integer in [0, bound) via rejection sampling. bound must be > 0.
    std::uint64_t uniform_below(std::uint64_t bound) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % bound;
    }

    int uniform_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(uniform_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_below(i)]);
        }
    }

    // Child generator with a decorrelated seed; used to give independent
    // deterministic streams to sub-tasks (per-epoch shuffles, dropout masks).
    Rng fork(std::uint64_t stream) {
        return Rng(splitmix(engine_() ^ (0x9e3779b97f4a7c15ULL * (stream + 1))));
    }

    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace recbench
