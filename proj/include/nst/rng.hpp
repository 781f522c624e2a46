#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace nst {

// Deterministic random source used everywhere in the library.
//
// Every run must be bit-reproducible from its seed across platforms, so we
// do not use <random> distributions (their outputs are implementation
// defined). The engine is SplitMix64; the distributions below are fixed
// algorithms on top of it. The full generator state is the single 64-bit
// word, which makes it trivial to store in checkpoints.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        // Lemire's multiply-shift; debiasing rejection loop.
        std::uint64_t x = next_u64();
        unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            std::uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                x = next_u64();
                m = static_cast<unsigned __int128>(x) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller. Two uniforms per call, no cached
    // second value, so the state advances by a fixed amount per draw.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_;
};

// Stable seed derivation for per-example / per-stage substreams,
// e.g. derive_seed(run_seed, epoch, example_index).
inline std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                                 std::uint64_t d = 0) {
    Rng mix(a);
    mix.set_state(mix.next_u64() ^ (b + 0x9e3779b97f4a7c15ULL));
    mix.set_state(mix.next_u64() ^ (c + 0xbf58476d1ce4e5b9ULL));
    mix.set_state(mix.next_u64() ^ (d + 0x94d049bb133111ebULL));
    return mix.next_u64();
}

}  // namespace nst
