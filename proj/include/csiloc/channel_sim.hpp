#ifndef CSILOC_CHANNEL_SIM_HPP
#define CSILOC_CHANNEL_SIM_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <utility>
#include <vector>

#include "csiloc/errors.hpp"
#include "csiloc/features.hpp"
#include "csiloc/probmap.hpp"
#include "csiloc/rng.hpp"

// Synthetic CSI: geometric multipath over a fixed per-seed scatterer layout,
// uniform-linear-array steering at the carrier, per-subcarrier delay phases,
// and controllable hardware impairments. Replaces measured datasets; there is
// deliberately no path-loss model (SNR is configured directly), so the
// line-of-sight path has unit gain and a closed form.

namespace csiloc {

struct Impairments {
    bool global_phase = false;          // uniform phase rotation per measurement
    double timing_offset_max = 0.0;     // fractional samples, uniform(-max, +max)
    double per_antenna_gain_jitter_db = 0.0; // std dev of per-antenna gain, dB
};

struct SimConfig {
    int m_r = 4;             // receive antennas
    int w = 64;              // occupied subcarriers
    double area_w = 4.0;     // meters
    double area_h = 4.0;
    int num_paths = 1;       // C >= 1
    bool los = true;         // LoS path present (dominant); else all paths scattered
    double snr_db = kNoiseless;
    Impairments imp;
    double antenna_spacing = 0.5; // wavelengths
    double carrier_hz = 915e6;
    double bandwidth_hz = 80e6;
    std::uint64_t seed = 1;

    static constexpr double kNoiseless = 1e9; // snr_db at or above this: no noise

    void validate() const {
        if (m_r < 1) throw ConfigError("sim: M_R must be >= 1");
        if (w < 2) throw ConfigError("sim: W must be >= 2");
        if (num_paths < 1) throw ConfigError("sim: C must be >= 1");
        if (!(area_w > 0) || !(area_h > 0)) throw ConfigError("sim: area must be positive");
        if (!(antenna_spacing > 0)) throw ConfigError("sim: antenna spacing must be positive");
        if (!(carrier_hz > 0) || !(bandwidth_hz > 0))
            throw ConfigError("sim: carrier and bandwidth must be positive");
        if (imp.timing_offset_max < 0 || imp.per_antenna_gain_jitter_db < 0)
            throw ConfigError("sim: impairment magnitudes must be nonnegative");
    }
};

struct CsiMeasurement {
    Cmat h;
    Vec2 position{0, 0};
    double timestamp = 0;
    std::uint32_t ue_id = 0;
};

struct TrajectoryParams {
    double speed = 0.25;          // m/s upper bound
    double interval = 0.1;        // s between measurements
    int samples_per_trajectory = 256;
    Vec2 lo{0, 0};                // walk bounds (defaults to the full area)
    Vec2 hi{-1, -1};              // negative means "use the area"
};

class ChannelSim {
  public:
    explicit ChannelSim(SimConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        // Fixed scatterer layout per seed: positions uniform over the area,
        // reflection coefficients of fixed magnitude and random phase. The
        // layout, not the measurement, owns this randomness so CSI varies
        // smoothly with position.
        Rng rng = Rng::stream(cfg_.seed, kStreamScatterers);
        const int n = cfg_.num_paths; // enough for both LoS and NLoS path splits
        scatter_pos_.resize(static_cast<std::size_t>(n));
        scatter_coef_.resize(static_cast<std::size_t>(n));
        const int n_scattered = cfg_.los ? cfg_.num_paths - 1 : cfg_.num_paths;
        const double amp = cfg_.los ? 0.35 / std::sqrt(double(std::max(1, n_scattered)))
                                    : 0.8 / std::sqrt(double(n_scattered));
        for (int s = 0; s < n; ++s) {
            scatter_pos_[s] = {rng.uniform(0, cfg_.area_w), rng.uniform(0, cfg_.area_h)};
            scatter_coef_[s] = std::polar(amp, rng.uniform(0, 2 * M_PI));
        }
    }

    const SimConfig &config() const { return cfg_; }

    // Array along the x axis, centered at the middle of the bottom edge;
    // boresight is +y.
    Vec2 array_position() const { return {cfg_.area_w / 2, 0.0}; }

    double subcarrier_hz(int w_idx) const {
        return cfg_.carrier_hz +
               (double(w_idx) - (cfg_.w - 1) / 2.0) * (cfg_.bandwidth_hz / cfg_.w);
    }

    CsiMeasurement synthesize(const Vec2 &pos, Rng &rng, double timestamp = 0.0,
                              std::uint32_t ue_id = 0) const {
        if (pos[0] < 0 || pos[0] > cfg_.area_w || pos[1] < 0 || pos[1] > cfg_.area_h)
            throw DomainError("synthesize: position outside the configured area");
        const Vec2 ap = array_position();
        Cmat h(cfg_.m_r, cfg_.w);

        struct Path {
            std::complex<double> gain;
            double sin_theta;
            double delay;
        };
        std::vector<Path> paths;
        paths.reserve(static_cast<std::size_t>(cfg_.num_paths));
        if (cfg_.los) paths.push_back({{1.0, 0.0}, sin_toward(ap, pos), dist(ap, pos) / kC});
        const int n_scattered = cfg_.los ? cfg_.num_paths - 1 : cfg_.num_paths;
        for (int s = 0; s < n_scattered; ++s)
            paths.push_back({scatter_coef_[s], sin_toward(ap, scatter_pos_[s]),
                             (dist(pos, scatter_pos_[s]) + dist(scatter_pos_[s], ap)) / kC});

        for (const auto &p : paths)
            for (int m = 0; m < cfg_.m_r; ++m) {
                const std::complex<double> steer =
                    std::polar(1.0, -2.0 * M_PI * cfg_.antenna_spacing * m * p.sin_theta);
                for (int k = 0; k < cfg_.w; ++k)
                    h.at(m, k) +=
                        p.gain * steer * std::polar(1.0, -2.0 * M_PI * subcarrier_hz(k) * p.delay);
            }

        // Impairments, in order: per-antenna gain jitter, timing-offset phase
        // ramp (shared across antennas), global phase, AWGN.
        if (cfg_.imp.per_antenna_gain_jitter_db > 0)
            for (int m = 0; m < cfg_.m_r; ++m) {
                const double factor =
                    std::pow(10.0, cfg_.imp.per_antenna_gain_jitter_db * rng.normal() / 20.0);
                for (int k = 0; k < cfg_.w; ++k) h.at(m, k) *= factor;
            }
        if (cfg_.imp.timing_offset_max > 0) {
            const double eps =
                rng.uniform(-cfg_.imp.timing_offset_max, cfg_.imp.timing_offset_max);
            for (int k = 0; k < cfg_.w; ++k) {
                const std::complex<double> ramp =
                    std::polar(1.0, -2.0 * M_PI * double(k) * eps / double(cfg_.w));
                for (int m = 0; m < cfg_.m_r; ++m) h.at(m, k) *= ramp;
            }
        }
        if (cfg_.imp.global_phase) {
            const std::complex<double> rot = std::polar(1.0, rng.uniform(0, 2 * M_PI));
            for (auto &z : h.v) z *= rot;
        }
        if (cfg_.snr_db < SimConfig::kNoiseless) {
            double mean_p = 0;
            for (const auto &z : h.v) mean_p += std::norm(z);
            mean_p /= double(h.v.size());
            const double sigma = std::sqrt(mean_p * std::pow(10.0, -cfg_.snr_db / 10.0));
            for (auto &z : h.v) z += sigma * rng.cnormal();
        }
        return {std::move(h), pos, timestamp, ue_id};
    }

    static constexpr std::uint64_t kStreamScatterers = 0;
    static constexpr std::uint64_t kStreamTrajectory = 1ull << 40;
    static constexpr std::uint64_t kStreamMeasurement = 2ull << 40;

  private:
    static constexpr double kC = 299792458.0;

    static double dist(const Vec2 &a, const Vec2 &b) {
        return std::hypot(a[0] - b[0], a[1] - b[1]);
    }
    // sine of the angle from the +y boresight at `from` toward `to`, measured
    // along the array (x) axis
    static double sin_toward(const Vec2 &from, const Vec2 &to) {
        const double d = dist(from, to);
        if (d == 0) return 0.0;
        return (to[0] - from[0]) / d;
    }

    SimConfig cfg_;
    std::vector<Vec2> scatter_pos_;
    std::vector<std::complex<double>> scatter_coef_;
};

// Bounded random walk with constant sampling interval. Measurement RNG
// streams are derived from the global measurement index so serial and
// parallel generation agree bit for bit.
inline std::vector<CsiMeasurement>
generate_trajectories(const ChannelSim &sim, int count, const TrajectoryParams &tp,
                      std::uint32_t first_ue_id, std::uint64_t measurement_base) {
    const SimConfig &cfg = sim.config();
    Vec2 lo = tp.lo, hi = tp.hi;
    if (hi[0] < 0 || hi[1] < 0) {
        lo = {0, 0};
        hi = {cfg.area_w, cfg.area_h};
    }
    if (!(hi[0] > lo[0]) || !(hi[1] > lo[1]))
        throw ConfigError("trajectory: empty walk bounds");
    const double step = tp.speed * tp.interval;
    if (!(tp.speed >= 0) || !(tp.interval > 0) || tp.samples_per_trajectory < 1)
        throw ConfigError("trajectory: speed/interval/samples invalid");
    if (step > std::min(hi[0] - lo[0], hi[1] - lo[1]))
        throw ConfigError("trajectory: area too small for the per-step spacing");

    std::vector<CsiMeasurement> out;
    out.reserve(static_cast<std::size_t>(count));
    int produced = 0;
    std::uint32_t ue = first_ue_id;
    while (produced < count) {
        Rng walk = Rng::stream(cfg.seed, ChannelSim::kStreamTrajectory + ue);
        Vec2 pos{walk.uniform(lo[0], hi[0]), walk.uniform(lo[1], hi[1])};
        double heading = walk.uniform(0, 2 * M_PI);
        const int n = std::min(tp.samples_per_trajectory, count - produced);
        for (int i = 0; i < n; ++i) {
            Rng meas =
                Rng::stream(cfg.seed, measurement_base + std::uint64_t(produced));
            out.push_back(sim.synthesize(pos, meas, double(i) * tp.interval, ue));
            ++produced;
            // next position: bounded-speed step, re-aim when the step exits
            heading += 0.3 * walk.normal();
            Vec2 next{pos[0] + step * std::cos(heading), pos[1] + step * std::sin(heading)};
            int tries = 0;
            while ((next[0] < lo[0] || next[0] > hi[0] || next[1] < lo[1] || next[1] > hi[1]) &&
                   tries < 64) {
                heading = walk.uniform(0, 2 * M_PI);
                next = {pos[0] + step * std::cos(heading), pos[1] + step * std::sin(heading)};
                ++tries;
            }
            if (tries < 64) pos = next; // else stay put (still within speed bound)
        }
        ++ue;
    }
    return out;
}

// Train/test sets from disjoint trajectories (disjoint UE ids and walks).
inline std::pair<std::vector<CsiMeasurement>, std::vector<CsiMeasurement>>
generate_dataset(const ChannelSim &sim, int num_train, int num_test, const TrajectoryParams &tp) {
    if (num_train <= 0 || num_test <= 0)
        throw ConfigError("dataset: train/test counts must be positive");
    auto train = generate_trajectories(sim, num_train, tp, 0, ChannelSim::kStreamMeasurement);
    const std::uint32_t test_ue0 =
        train.empty() ? 0 : train.back().ue_id + 1;
    auto test = generate_trajectories(sim, num_test, tp, test_ue0,
                                      ChannelSim::kStreamMeasurement + (1ull << 32));
    return {std::move(train), std::move(test)};
}

} // namespace csiloc

#endif
