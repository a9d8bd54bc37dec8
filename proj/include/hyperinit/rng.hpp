#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace hyperinit {

// std::mt19937_64 is bit-specified by the standard, but the std::*_distribution
// wrappers are not. Everything downstream needs run-to-run *and*
// compiler-to-compiler reproducibility, so the distributions live here.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stable sub-stream seed for (root, label, index) so independent components
// never share a stream.
inline uint64_t derive_seed(uint64_t root, std::string_view label, uint64_t index = 0) {
    uint64_t h = splitmix64(root);
    for (char c : label) h = splitmix64(h ^ static_cast<uint64_t>(static_cast<unsigned char>(c)));
    return splitmix64(h ^ index);
}

class Rng {
   public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int64_t uniform_int(int64_t n) { return static_cast<int64_t>(uniform() * static_cast<double>(n)); }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return mean + stddev * r * std::cos(a);
    }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = last - first;
        for (auto i = n - 1; i > 0; --i) {
            auto j = uniform_int(i + 1);
            std::swap(first[i], first[j]);
        }
    }

    // Weighted pick; weights need not be normalized.
    int pick_weighted(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double r = uniform() * total;
        double acc = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

   private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hyperinit
