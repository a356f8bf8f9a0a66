#ifndef CSILOC_RNG_HPP
#define CSILOC_RNG_HPP

#include <cmath>
#include <complex>
#include <cstdint>

namespace csiloc {

// Small deterministic generator (splitmix64 core). Distributions are
// implemented here instead of <random> so that a (seed, stream) pair produces
// the same bytes on every platform and standard library.
class Rng {
  public:
    Rng() : Rng(0x9e3779b97f4a7c15ULL) {}
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Independent stream derived from (seed, stream_id). Streams with
    // different ids never share state, so per-record generation can run in
    // any order and still be reproducible.
    static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
        Rng r(mix(seed ^ mix(stream_id + 0x632be59bd9b4e019ULL)));
        return r;
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t uniform_index(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Circularly-symmetric complex normal with unit variance
    // (variance 1/2 per real component).
    std::complex<double> cnormal() {
        const double s = std::sqrt(0.5);
        const double re = s * normal();
        const double im = s * normal();
        return {re, im};
    }

  private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace csiloc

#endif
