#pragma once

#include <cstdint>
#include <string_view>

namespace amer {

// Counter-based generator: draw k of stream (seed, id) is a fixed mix of
// (seed, id, k), so any stream can be reconstructed from its coordinates
// alone. Streams derived for different purposes/indices never share state,
// which keeps parallel generation schedule-independent.
//
// The mix is the SplitMix64 finalizer over a Weyl sequence, seeded per
// stream; this is the construction config files refer to as "splitmix64".
class RngStream {
public:
    RngStream(uint64_t seed, uint64_t stream_id);

    uint64_t seed() const noexcept { return seed_; }
    uint64_t stream_id() const noexcept { return stream_; }

    uint64_t next_u64();

    // [0, 1), 53-bit resolution
    double uniform();
    // (0, 1), both ends excluded
    double uniform_open();
    // standard normal, Box-Muller (two words per draw, no cached spare)
    double gaussian();
    // Laplace(0, scale) by inverse CDF
    double laplace(double scale);
    // uniform in [0, n), unbiased
    uint64_t below(uint64_t n);

    // Independent child stream; same seed, id mixed with the tag.
    RngStream derive(uint64_t tag) const;
    RngStream derive(std::string_view name) const;

    static uint64_t mix64(uint64_t x);
    static uint64_t name_tag(std::string_view name);

private:
    uint64_t seed_;
    uint64_t stream_;
    uint64_t base_;
    uint64_t counter_ = 0;
};

}  // namespace amer
