#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sahp {

/// Seedable random stream with explicitly specified transforms.
///
/// The engine is std::mt19937_64 (fully pinned by the standard) and every
/// distribution below is derived from raw 64-bit draws by hand, so a given
/// seed produces the same stream on every platform and compiler. The
/// std::*_distribution classes are implementation-defined and must not be
/// used anywhere golden values matter.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed);

    /// Independent named child stream. Children with distinct (name, index)
    /// do not overlap with the parent or with each other.
    RngStream child(const std::string& name, std::uint64_t index = 0) const;

    /// Uniform on [0, 1) with 53-bit resolution.
    double uniform01();

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi);

    /// Exponential with the given rate (mean 1/rate).
    double exponential(double rate);

    /// Standard normal via Box-Muller.
    double normal();

    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    /// Index drawn proportionally to the (non-negative) weights.
    std::size_t categorical(const std::vector<double>& weights);

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

/// SplitMix64 — used for seed mixing and content hashing.
std::uint64_t splitmix64(std::uint64_t x);

/// FNV-1a over a byte string, mixed through splitmix64.
std::uint64_t hash_bytes(const std::string& bytes, std::uint64_t seed);

}  // namespace sahp
