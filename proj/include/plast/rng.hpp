#pragma once

#include <cstdint>
#include <random>

namespace plast {

/// Deterministic random source. All stochastic pieces of a run (init, data
/// order, activation noise, stream construction) draw from named sub-streams
/// derived from one root seed, so reruns are bit-identical.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1). Derived straight from the engine output so the
    /// value sequence does not depend on the standard library's
    /// distribution implementation.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    uint64_t below(uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    int index(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    /// Independent child stream. The tag keeps unrelated consumers from
    /// sharing a sequence even when they are created in a different order.
    Rng child(uint64_t tag) const { return Rng(mix(seed_of(engine_), tag)); }

    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

private:
    // The engine state is not observable, so children are derived from a
    // copy's next output without disturbing this stream.
    static uint64_t seed_of(std::mt19937_64 e) { return e(); }

    std::mt19937_64 engine_;
};

}  // namespace plast
