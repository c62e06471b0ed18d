#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string_view>
#include <vector>

#include "fsel/common.hpp"

namespace fsel {

namespace detail {

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace detail

// Counter-based generator: the whole state is one u64, so streams are cheap
// to derive and checkpoints stay trivial. Every source of randomness in the
// project is an Rng keyed by (seed, label[, stream]).
class Rng {
public:
    Rng(std::uint64_t seed, std::string_view label, std::uint64_t stream = 0) {
        state_ = detail::mix64(seed ^ fnv1a64(label));
        state_ = detail::mix64(state_ ^ (stream * 0x9e3779b97f4a7c15ull + 1));
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return detail::mix64(state_);
    }

    // Strictly inside (0,1).
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Unbiased integer in [0, n).
    std::uint64_t uniform_below(std::uint64_t n) {
        const std::uint64_t rem = (UINT64_MAX % n + 1) % n;  // 2^64 mod n
        std::uint64_t x;
        do {
            x = next_u64();
        } while (rem != 0 && x > UINT64_MAX - rem);
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Uniform k-subset of {0,...,n-1}, returned sorted.
    std::vector<int> subset(int n, int k) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < k; ++i) {
            std::size_t j = static_cast<std::size_t>(i) +
                            static_cast<std::size_t>(uniform_below(static_cast<std::uint64_t>(n - i)));
            std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
        }
        idx.resize(static_cast<std::size_t>(k));
        std::sort(idx.begin(), idx.end());
        return idx;
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_ = 0;
};

}  // namespace fsel
