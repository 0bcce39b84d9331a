#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace mlspde {

/// Counter-based RNG (Philox 4x32-10). A stream is identified by a 64-bit
/// stream id; blocks are addressed by a 64-bit counter, so any draw can be
/// regenerated from (seed, stream, counter) independently of execution order.
class PhiloxStream {
public:
    PhiloxStream(std::uint64_t seed, std::uint64_t stream)
        : seed_(seed), stream_(stream) {}

    /// Stream id built from an (level, index) pair, e.g. one stream per
    /// MLMC sample.
    static std::uint64_t stream_id(std::uint32_t level, std::uint32_t index)
    {
        return (static_cast<std::uint64_t>(level) << 32) | index;
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t counter() const { return block_; }

    /// Position the stream at an absolute block counter.
    void seek(std::uint64_t counter)
    {
        block_ = counter;
        cache_pos_ = 4;
        have_normal_ = false;
    }

    /// Uniform draw on (0,1].
    double uniform()
    {
        return (static_cast<double>(next_u32()) + 1.0) * 0x1p-32;
    }

    /// Standard normal draw (Box-Muller).
    double normal()
    {
        if (have_normal_) {
            have_normal_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_normal_ = true;
        return r * std::cos(a);
    }

    std::vector<double> normals(std::size_t n)
    {
        std::vector<double> out(n);
        for (auto& x : out) x = normal();
        return out;
    }

private:
    std::uint32_t next_u32()
    {
        if (cache_pos_ >= 4) {
            cache_ = philox_block(block_++);
            cache_pos_ = 0;
        }
        return cache_[cache_pos_++];
    }

    std::array<std::uint32_t, 4> philox_block(std::uint64_t counter) const
    {
        std::array<std::uint32_t, 4> x = {
            static_cast<std::uint32_t>(counter),
            static_cast<std::uint32_t>(counter >> 32),
            static_cast<std::uint32_t>(stream_),
            static_cast<std::uint32_t>(stream_ >> 32)};
        std::uint32_t k0 = static_cast<std::uint32_t>(seed_);
        std::uint32_t k1 = static_cast<std::uint32_t>(seed_ >> 32);
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = 0xD2511F53ull * x[0];
            const std::uint64_t p1 = 0xCD9E8D57ull * x[2];
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            x = {hi1 ^ x[1] ^ k0, lo1, hi0 ^ x[3] ^ k1, lo0};
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        return x;
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> cache_{};
    int cache_pos_ = 4;
    bool have_normal_ = false;
    double spare_ = 0.0;
};

} // namespace mlspde
