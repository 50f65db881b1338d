#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace mtlforge {

// Counter-based SplitMix64. Output i is mix64(seed + (i + 1) * golden_gamma),
// so the stream is a pure function of (seed, counter): it can be positioned
// anywhere in O(1) and is bit-identical on every platform. Integer and real
// draws below are derived from the raw 64-bit outputs without any
// implementation-defined std:: distributions.
class Rng {
public:
    static constexpr std::string_view kAlgorithm = "splitmix64-counter";

    explicit Rng(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    // Uniform in [0, n); rejection sampling keeps it unbiased. n must be > 0.
    std::uint64_t below(std::uint64_t n);

    // Independent stream for a named purpose or numeric id. Seed splitting is
    // mix64(seed ^ mix64(fnv1a64(label))) so sibling streams never overlap in
    // practice and are stable across runs.
    Rng split(std::string_view label) const;
    Rng split(std::uint64_t stream_id) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t z);
std::uint64_t fnv1a64(std::string_view s);

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        auto j = static_cast<std::size_t>(rng.below(i));
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

} // namespace mtlforge
