#include "amer/rng.hpp"

#include <cmath>
#include <numbers>

namespace amer {

namespace {
constexpr uint64_t kWeyl = 0x9e3779b97f4a7c15ull;
constexpr uint64_t kStreamSalt = 0x6a09e667f3bcc909ull;
}  // namespace

uint64_t RngStream::mix64(uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

RngStream::RngStream(uint64_t seed, uint64_t stream_id) : seed_(seed), stream_(stream_id) {
    base_ = mix64(seed_ + mix64(stream_ ^ kStreamSalt));
}

uint64_t RngStream::next_u64() { return mix64(base_ + kWeyl * ++counter_); }

double RngStream::uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform_open() { return (double(next_u64() >> 12) + 0.5) * 0x1.0p-52; }

double RngStream::gaussian() {
    double u1 = uniform_open();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::laplace(double scale) {
    double u = uniform_open() - 0.5;
    return u >= 0.0 ? -scale * std::log(1.0 - 2.0 * u) : scale * std::log(1.0 + 2.0 * u);
}

uint64_t RngStream::below(uint64_t n) {
    if (n <= 1) return 0;
    uint64_t bound = (UINT64_MAX / n) * n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= bound);
    return x % n;
}

RngStream RngStream::derive(uint64_t tag) const {
    return RngStream(seed_, mix64(stream_ * 0x2545f4914f6cdd1dull + tag + 1));
}

RngStream RngStream::derive(std::string_view name) const { return derive(name_tag(name)); }

uint64_t RngStream::name_tag(std::string_view name) {
    // FNV-1a
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : name) {
        h ^= uint64_t(uint8_t(c));
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace amer
