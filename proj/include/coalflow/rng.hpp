#pragma once

#include <cmath>
#include <cstdint>

namespace coalflow {

/// Counter-based pseudo-random stream (Philox-style 2x64 block cipher,
/// 10 rounds).  Every draw is a pure function of (seed, stream_id, counter),
/// so a stream reproduces bit-identically across runs and thread schedules,
/// and distinct stream ids share no state.  normal_at() taps a separate
/// random-access lane of the same stream; it never collides with the
/// sequential draws, which makes it usable for lazily evaluated noise
/// fields (value of cell k is philox(key, stream, k), independent of
/// evaluation order).
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0)
        : seed_(seed), stream_(stream_id) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }

    std::uint64_t next_u64() {
        if (have_word_) {
            have_word_ = false;
            return word_;
        }
        Block b = philox(seed_, stream_, counter_++);
        word_ = b.x1;
        have_word_ = true;
        return b.x0;
    }

    /// Uniform draw on (0, 1]; never returns 0 so log() is safe.
    double uniform01() {
        return (double)((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (pairs cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Random-access standard normal: a pure function of (stream, index).
    /// Domain-separated from the sequential draws by a key tweak.
    double normal_at(std::uint64_t index) const {
        Block b = philox(seed_ ^ kAccessTweak, stream_, index);
        double u1 = (double)((b.x0 >> 11) + 1) * 0x1.0p-53;
        double u2 = (double)((b.x1 >> 11) + 1) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Independent child stream for a tagged purpose (noise field, arm of an
    /// experiment, ...).  Same seed, new stream id derived by one cipher block.
    RngStream derive(std::uint64_t tag) const {
        Block b = philox(seed_ ^ kDeriveTweak, stream_, tag);
        return RngStream(seed_, b.x0);
    }

private:
    struct Block {
        std::uint64_t x0, x1;
    };

    static constexpr std::uint64_t kMult = 0xD2B74407B1CE6E93ull;
    static constexpr std::uint64_t kWeyl = 0x9E3779B97F4A7C15ull;
    static constexpr std::uint64_t kAccessTweak = 0xA5A5A5A5A5A5A5A5ull;
    static constexpr std::uint64_t kDeriveTweak = 0xC3C3C3C3C3C3C3C3ull;

    static Block philox(std::uint64_t key, std::uint64_t c0, std::uint64_t c1) {
        for (int round = 0; round < 10; ++round) {
            unsigned __int128 prod = (unsigned __int128)kMult * c0;
            std::uint64_t hi = (std::uint64_t)(prod >> 64);
            std::uint64_t lo = (std::uint64_t)prod;
            c0 = hi ^ key ^ c1;
            c1 = lo;
            key += kWeyl;
        }
        return {c0, c1};
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::uint64_t word_ = 0;
    bool have_word_ = false;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace coalflow
