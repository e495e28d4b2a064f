#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace msscanet {

// Deterministic random helpers. std::mt19937_64 is fully specified by the
// standard; the value transforms below replace std::*_distribution, whose
// outputs differ across standard libraries.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // [0,1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // Box-Muller; 1-uniform() keeps the log argument in (0,1].
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // [0,n); modulo bias is irrelevant for shuffling at these sizes.
    uint64_t below(uint64_t n) { return n == 0 ? 0 : eng_() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64 step; derives independent substream seeds.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace msscanet
