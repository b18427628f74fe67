#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <vector>

namespace attngen {

// Deterministic 64-bit PRNG used for every random decision in the pipeline
// (splits, shuffles, init, dropout, synthesis, random masking). The exact
// algorithm is spelled out here so ports in other languages can reproduce
// identical streams:
//
//   state:   xoshiro256++ (Blackman & Vigna), 4 x u64
//   seeding: state[i] = splitmix64 outputs, starting from
//            z0 = seed + stream * 0x9E3779B97F4A7C15
//   next:    rotl(s0 + s3, 23) + s0, then the xoshiro256 state transition
//   bounded(n): next() % n              (modulo; bias negligible at our n)
//   real():     (next() >> 11) * 2^-53  in [0, 1)
//   shuffle:  Fisher-Yates, i from n-1 down to 1, j = bounded(i + 1)
//
// Stream ids keep independent consumers off each other's sequences; they are
// part of the reproducibility contract and must not be renumbered.
class Rng {
public:
    Rng() : Rng(0, 0) {}

    Rng(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + stream * 0x9E3779B97F4A7C15ULL;
        for (auto& s : state_) {
            z += 0x9E3779B97F4A7C15ULL;
            std::uint64_t x = z;
            x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
            x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
            s = x ^ (x >> 31);
        }
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, n). n must be positive.
    std::uint64_t bounded(std::uint64_t n) { return next() % n; }

    // Uniform double in [0, 1), 53 random bits.
    double real() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in [-bound, bound).
    double symmetric(double bound) { return (2.0 * real() - 1.0) * bound; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Identity permutation of size n, then shuffled in place.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), 0);
        shuffle(p);
        return p;
    }

    std::array<std::uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
};

// Reserved stream ids (see class comment).
namespace rng_stream {
constexpr std::uint64_t kInit = 0;       // parameter initialization
constexpr std::uint64_t kSplit = 1;      // corpus splitting
constexpr std::uint64_t kTrain = 2;      // dropout draws during training
constexpr std::uint64_t kSynthesis = 3;  // synthetic corpus generation
constexpr std::uint64_t kRandomMask = 4; // random-mask ablation arm
// Batch shuffling uses stream 16 + epoch; per-sequence random occlusion
// orders use stream 1000 + sequence index.
constexpr std::uint64_t kEpochBase = 16;
constexpr std::uint64_t kOcclusionBase = 1000;
}  // namespace rng_stream

}  // namespace attngen
