#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace toib {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// bit-reproducible across platforms and standard libraries, and so the full
// generator state can be checkpointed.
//
// Substreams are derived from the stream's origin seed and a name hash, never
// from consumed state, so adding a consumer does not perturb existing streams.
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(uint64_t seed) : origin_(seed) {
        uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    static Rng seeded(uint64_t seed) { return Rng(seed); }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n). Rejection-free modulo bias is irrelevant at the
    // ranges used here (n far below 2^32), but use Lemire reduction anyway.
    uint64_t uniform_index(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller (trig form, second value discarded).
    // Stateless between calls, which keeps checkpointed streams simple.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Rayleigh with scale sigma_r, so E[h^2] = 2*sigma_r^2.
    double rayleigh(double sigma_r) {
        double u = uniform();
        while (u >= 1.0) u = uniform();
        return sigma_r * std::sqrt(-2.0 * std::log(1.0 - u));
    }

    // Child stream keyed by name; derivation uses only origin seed + name.
    Rng substream(std::string_view name) const {
        return Rng(mix(origin_, fnv1a(name)));
    }

    uint64_t origin_seed() const { return origin_; }

    std::array<uint64_t, 4> save_state() const { return state_; }
    void restore_state(const std::array<uint64_t, 4>& s) { state_ = s; }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 1469598103934665603ull;
        for (const char c : s) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ull;
        }
        return h;
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
        return splitmix64(x);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t origin_;
    std::array<uint64_t, 4> state_{};
};

}  // namespace toib
