#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

namespace avnft {

// splitmix64 finalizer, used to derive independent seeds from (seed, tag...)
// tuples. mt19937_64 output is specified by the standard, but the stdlib
// distributions are not, so uniform/normal mapping is done by hand to keep
// runs byte-reproducible.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t seed_combine(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x8C85E2A9F3D1B074ull;
    for (std::uint64_t p : parts) h = mix64(h ^ p);
    return h;
}

// string tags keep derived streams (priors, conflict noise, ...) disjoint
inline std::uint64_t tag64(const char* s) {
    std::uint64_t h = 1469598103934665603ull;
    for (; *s; ++s) h = (h ^ static_cast<std::uint64_t>(*s)) * 1099511628211ull;
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; no caching of the second deviate so draw order is obvious
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        return n <= 1 ? 0 : eng_() % n;
    }

    int sign() { return (eng_() & 1u) ? 1 : -1; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace avnft
