#pragma once

// Counter-based random numbers: Philox4x32-10 keyed by the seed, with the
// stream id occupying the upper half of the counter. Output depends only on
// (seed, stream, call sequence), so runs are reproducible across platforms
// and worker streams can be split off without sharing state.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace smoe {

namespace philox {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

constexpr Counter round(Counter c, Key k) noexcept
{
    const std::uint64_t p0 = std::uint64_t{kMul0} * c[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

/// Ten-round Philox block function.
constexpr Counter block(Counter c, Key k) noexcept
{
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            k[0] += kWeyl0;
            k[1] += kWeyl1;
        }
        c = round(c, k);
    }
    return c;
}

} // namespace philox

/// splitmix64 finalizer; used to derive child stream ids.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept : seed_(seed), stream_(stream) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t blocks_consumed() const noexcept { return block_index_; }

    /// Independent generator for child `id`. The parent is not advanced.
    Rng split(std::uint64_t id) const noexcept { return Rng(seed_, mix64(stream_ ^ mix64(id + 1))); }

    std::uint32_t next_u32() noexcept
    {
        if (lane_ == 4)
            refill();
        return buffer_[lane_++];
    }

    std::uint64_t next_u64() noexcept
    {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double low, double high) noexcept { return low + (high - low) * uniform(); }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Box-Muller; the second variate of each pair is kept for the next call.
    double normal() noexcept
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sigma) noexcept { return mean + sigma * normal(); }

private:
    void refill() noexcept
    {
        const philox::Counter ctr{static_cast<std::uint32_t>(block_index_), static_cast<std::uint32_t>(block_index_ >> 32),
                                  static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
        const philox::Key key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
        buffer_ = philox::block(ctr, key);
        ++block_index_;
        lane_ = 0;
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t block_index_ = 0;
    philox::Counter buffer_{};
    std::size_t lane_ = 4;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

template <typename T>
void fill_standard_normal(Rng& rng, std::span<T> out) noexcept
{
    for (T& v : out)
        v = static_cast<T>(rng.normal());
}

template <typename T = double>
std::vector<T> standard_normal(Rng& rng, std::size_t count)
{
    std::vector<T> out(count);
    fill_standard_normal(rng, std::span<T>(out));
    return out;
}

template <typename T>
void fill_uniform(Rng& rng, std::span<T> out, double low, double high) noexcept
{
    for (T& v : out)
        v = static_cast<T>(rng.uniform(low, high));
}

} // namespace smoe
