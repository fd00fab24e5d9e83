#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace twostage {

// Philox2x64-10 counter-based generator (Random123 constants).
//
// A generator instance is addressed by (seed, stream): the 64-bit master
// seed is the key, the stream id lives in the high counter word. Distinct
// streams never overlap, so per-cluster and per-replication draws are
// reproducible regardless of evaluation order or threading.
//
// Stream id conventions used across the library:
//   assignment ops       stream = caller-chosen (CLI: 0 for stage one,
//                        1 + cluster index for stage-two draws)
//   simulation           stream = mix_stream(purpose, replication, index)
class Philox {
   public:
    Philox(std::uint64_t seed, std::uint64_t stream)
        : key_(seed), ctr0_(0), ctr1_(stream) {}

    std::uint64_t next_u64() {
        if (have_ == 0) {
            block();
            have_ = 2;
        }
        return out_[--have_];
    }

    // 53-bit uniform in [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform on {0, ..., n-1}; rejection keeps it exactly unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return r % n;
    }

    // Standard normal via Box-Muller; the paired deviate is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform01();  // (0, 1]
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // m distinct values from {0..n-1}, in random order.
    std::vector<int> sample_without_replacement(int n, int m) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < m; ++i) {
            int j = i + static_cast<int>(below(static_cast<std::uint64_t>(n - i)));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        idx.resize(static_cast<std::size_t>(m));
        return idx;
    }

   private:
    static void mul128(std::uint64_t a, std::uint64_t b, std::uint64_t& hi,
                       std::uint64_t& lo) {
        unsigned __int128 p =
            static_cast<unsigned __int128>(a) * static_cast<unsigned __int128>(b);
        hi = static_cast<std::uint64_t>(p >> 64);
        lo = static_cast<std::uint64_t>(p);
    }

    void block() {
        constexpr std::uint64_t kMul = 0xD2B74407B1CE6E93ULL;
        constexpr std::uint64_t kWeyl = 0x9E3779B97F4A7C15ULL;
        std::uint64_t x0 = ctr0_, x1 = ctr1_, k = key_;
        for (int r = 0; r < 10; ++r) {
            std::uint64_t hi, lo;
            mul128(x0, kMul, hi, lo);
            x0 = hi ^ k ^ x1;
            x1 = lo;
            k += kWeyl;
        }
        out_[0] = x0;
        out_[1] = x1;
        ++ctr0_;
    }

    std::uint64_t key_;
    std::uint64_t ctr0_, ctr1_;
    std::uint64_t out_[2] = {0, 0};
    int have_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// SplitMix64 finalizer; used to hash heterogeneous ids into stream ids.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_stream(std::uint64_t purpose, std::uint64_t a,
                                std::uint64_t b) {
    return mix64(purpose ^ mix64(a ^ mix64(b)));
}

}  // namespace twostage
