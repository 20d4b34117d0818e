#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sacf {

// Violated precondition or broken invariant: a caller bug, not an I/O problem.
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// NaN/Inf escaped an operation, or a numeric procedure diverged.
struct NumericFault : std::runtime_error {
    explicit NumericFault(const std::string& msg) : std::runtime_error(msg) {}
};

// Environment/generator/file failures.
struct Fault : std::runtime_error {
    explicit Fault(const std::string& msg) : std::runtime_error(msg) {}
};

#define SACF_REQUIRE(cond, msg)                          \
    do {                                                 \
        if (!(cond)) throw ::sacf::ContractViolation(msg); \
    } while (0)

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic xoshiro256** stream. The standard library distributions are
// implementation-defined, so all sampling goes through explicit formulas here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
    }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) {
        return lo + static_cast<float>(next_double()) * (hi - lo);
    }

    // [lo, hi)
    int uniform_int(int lo, int hi) {
        SACF_REQUIRE(hi > lo, "Rng::uniform_int: empty range");
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo));
    }

    // Box-Muller without state caching, so the call sequence alone determines output.
    float normal(float mean, float sd) {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
        return mean + sd * static_cast<float>(z);
    }

    // Index sampled from an (unnormalized is rejected) probability vector.
    int categorical(std::span<const float> probs) {
        double u = next_double();
        double acc = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

private:
    std::uint64_t s_[4];
};

// Named sub-stream derivation: one master seed fans out to independent
// consumers, so adding a draw in one consumer never perturbs another.
inline Rng derive_stream(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t x = master ^ fnv1a64(name) ^ (0x9e3779b97f4a7c15ull * (index + 1));
    return Rng(splitmix64(x));
}

}  // namespace sacf
