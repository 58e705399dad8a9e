#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rsc {

// Seed/stream derivation. Streams are counter-based: a stream is identified by
// (master seed, key tuple) and never depends on how many other streams exist,
// so enlarging an ensemble does not reshuffle existing samples.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t s = master ^ 0x5851f42d4c957f2dULL;
    std::uint64_t h = splitmix64(s);
    for (std::uint64_t k : keys) {
        s = h ^ (k + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
        h = splitmix64(s);
    }
    return h;
}

// Well-known stream name-spaces, to keep independent uses of the same master
// seed from colliding.
enum StreamKind : std::uint64_t {
    kStreamBrownian = 1,
    kStreamFuture = 2,
    kStreamFbm = 3,
    kStreamInitial = 4,
    kStreamMisc = 5,
};

class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : eng_(seed) {}
    RngStream(std::uint64_t master, std::initializer_list<std::uint64_t> keys)
        : eng_(derive_seed(master, keys)) {}

    double gaussian() { return normal_(eng_); }
    double uniform() { return unif_(eng_); }
    std::uint64_t bits() { return eng_(); }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
};

}  // namespace rsc
