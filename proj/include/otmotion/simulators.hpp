#ifndef OTMOTION_SIMULATORS_HPP
#define OTMOTION_SIMULATORS_HPP

// Synthetic moving-source data with ground truth: sources perform reflected
// Gaussian random walks, each with a Gaussian footprint and a rectified
// sinusoidal intensity trace.

#include "errors.hpp"
#include "factorization.hpp"
#include "ot_core.hpp"
#include "types.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace otmotion {

struct SimulationTruth {
    HistogramSeries data;
    std::vector<Matrix> true_footprints; ///< per component, d x T (each column sums to 1)
    Matrix true_traces;                  ///< K x T intensities before normalization
    std::vector<Matrix> positions;       ///< per component, n x T centers
};

/// trace(t) = baseline + max(0, sin(2 pi f t / T + phase)), f ~ U[freq_min, freq_max]
/// cycles per series, phase ~ U[0, 2 pi).
struct TraceSpec {
    double freq_min = 2.0;
    double freq_max = 10.0;
    double baseline = 0.1;
};

struct DriftParams {
    Index n_components = 5;
    Index n_bins = 100;
    Index frames = 200;
    double drift_sigma = 0.5;     ///< electrode spacings per step
    double footprint_sigma = 2.0; ///< electrode spacings
    TraceSpec trace;
    double noise = 0.0; ///< amplitude of additive U[0, noise] per bin and frame
    Seed seed = 0;
};

struct ParticleParams {
    Index n_particles = 5;
    Index width = 20;
    Index height = 20;
    Index frames = 100;
    double drift_sigma = 0.5;
    double footprint_sigma = 2.0;
    TraceSpec trace;
    double noise = 0.0;
    Seed seed = 0;
};

namespace detail {

inline double reflect(double x, double lo, double hi)
{
    const double span = hi - lo;
    if (span <= 0.0) return lo;
    if (x >= lo && x <= hi) return x;
    // fold onto [lo, lo + 2 span), then mirror the upper half
    double y = std::fmod(x - lo, 2.0 * span);
    if (y < 0.0) y += 2.0 * span;
    return lo + (y <= span ? y : 2.0 * span - y);
}

inline void check_common(Index sources, Index frames, double drift_sigma, double footprint_sigma,
                         const TraceSpec& trace, double noise)
{
    if (sources < 1) throw invalid_argument_error("simulate: need at least one source");
    if (frames < 2) throw invalid_argument_error("simulate: need T >= 2");
    if (!(drift_sigma >= 0.0)) throw invalid_argument_error("simulate: drift_sigma must be >= 0");
    if (!(footprint_sigma > 0.0)) throw invalid_argument_error("simulate: footprint_sigma must be > 0");
    if (!(trace.baseline >= 0.0)) throw invalid_argument_error("simulate: baseline must be >= 0");
    if (!(trace.freq_min >= 0.0) || !(trace.freq_max >= trace.freq_min)) {
        throw invalid_argument_error("simulate: invalid frequency range");
    }
    if (!(noise >= 0.0)) throw invalid_argument_error("simulate: noise must be >= 0");
}

// Shared generator. `start` holds the initial centers (n x K); `lo`/`hi`
// bound every coordinate.
inline SimulationTruth simulate(const Coords& coords, const Matrix& start, const Vector& lo, const Vector& hi,
                                Index frames, double drift_sigma, double footprint_sigma, const TraceSpec& trace,
                                double noise, std::mt19937_64& rng)
{
    const Index d = coords.rows();
    const Index n = coords.cols();
    const Index K = start.cols();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    SimulationTruth truth;
    truth.true_traces.resize(K, frames);
    for (Index k = 0; k < K; ++k) {
        const double freq = trace.freq_min + (trace.freq_max - trace.freq_min) * unif(rng);
        const double phase = 2.0 * std::numbers::pi * unif(rng);
        for (Index t = 0; t < frames; ++t) {
            const double angle =
                2.0 * std::numbers::pi * freq * static_cast<double>(t) / static_cast<double>(frames) + phase;
            truth.true_traces(k, t) = trace.baseline + std::max(0.0, std::sin(angle));
        }
    }

    truth.positions.assign(static_cast<std::size_t>(K), Matrix(n, frames));
    for (Index k = 0; k < K; ++k) {
        Matrix& pos = truth.positions[static_cast<std::size_t>(k)];
        pos.col(0) = start.col(k);
        for (Index t = 1; t < frames; ++t) {
            for (Index c = 0; c < n; ++c) {
                pos(c, t) = reflect(pos(c, t - 1) + drift_sigma * normal(rng), lo(c), hi(c));
            }
        }
    }

    const double inv_two_var = 1.0 / (2.0 * footprint_sigma * footprint_sigma);
    truth.true_footprints.assign(static_cast<std::size_t>(K), Matrix(d, frames));
    for (Index k = 0; k < K; ++k) {
        Matrix& fp = truth.true_footprints[static_cast<std::size_t>(k)];
        const Matrix& pos = truth.positions[static_cast<std::size_t>(k)];
        for (Index t = 0; t < frames; ++t) {
            for (Index i = 0; i < d; ++i) {
                fp(i, t) = std::exp(-(coords.row(i).transpose() - pos.col(t)).squaredNorm() * inv_two_var);
            }
            fp.col(t) /= fp.col(t).sum();
        }
    }

    Matrix X = Matrix::Zero(d, frames);
    for (Index t = 0; t < frames; ++t) {
        for (Index k = 0; k < K; ++k) {
            X.col(t) += truth.true_traces(k, t) * truth.true_footprints[static_cast<std::size_t>(k)].col(t);
        }
        if (noise > 0.0) {
            for (Index i = 0; i < d; ++i) X(i, t) += noise * unif(rng);
        }
        const double mass = X.col(t).sum();
        if (mass > 0.0) {
            X.col(t) /= mass;
        } else {
            // every trace is zero at this frame: fall back to equal intensities
            for (Index k = 0; k < K; ++k) X.col(t) += truth.true_footprints[static_cast<std::size_t>(k)].col(t);
            X.col(t) /= static_cast<double>(K);
        }
    }
    truth.data = HistogramSeries{std::move(X), coords};
    return truth;
}

} // namespace detail

/// Sources drifting along a line of electrodes at 0, 1, ..., n_bins - 1.
/// Initial centers are evenly spaced with a jitter of a quarter spacing.
inline SimulationTruth simulate_electrode_drift(const DriftParams& p)
{
    if (p.n_bins < 2) throw invalid_argument_error("simulate_electrode_drift: need n_bins >= 2");
    detail::check_common(p.n_components, p.frames, p.drift_sigma, p.footprint_sigma, p.trace, p.noise);
    std::mt19937_64 rng(p.seed);
    std::uniform_real_distribution<double> unif(-0.25, 0.25);
    const double hi = static_cast<double>(p.n_bins - 1);
    const double spacing = hi / static_cast<double>(p.n_components);
    Matrix start(1, p.n_components);
    for (Index k = 0; k < p.n_components; ++k) {
        start(0, k) = detail::reflect((static_cast<double>(k) + 0.5 + unif(rng)) * spacing, 0.0, hi);
    }
    return detail::simulate(line_coords(p.n_bins), start, Vector::Zero(1), Vector::Constant(1, hi), p.frames,
                            p.drift_sigma, p.footprint_sigma, p.trace, p.noise, rng);
}

/// Particles on a W x H pixel grid (bin y * W + x at (x, y)). Initial
/// positions are uniform, re-drawn (up to 100 times) to keep them at least
/// three footprint widths apart.
inline SimulationTruth simulate_particles_2d(const ParticleParams& p)
{
    if (p.width < 2 || p.height < 2) throw invalid_argument_error("simulate_particles_2d: grid must be at least 2x2");
    detail::check_common(p.n_particles, p.frames, p.drift_sigma, p.footprint_sigma, p.trace, p.noise);
    std::mt19937_64 rng(p.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vector lo = Vector::Zero(2);
    Vector hi(2);
    hi << static_cast<double>(p.width - 1), static_cast<double>(p.height - 1);
    Matrix start(2, p.n_particles);
    const double min_sep = 3.0 * p.footprint_sigma;
    for (Index k = 0; k < p.n_particles; ++k) {
        for (int attempt = 0; attempt < 100; ++attempt) {
            start(0, k) = hi(0) * unif(rng);
            start(1, k) = hi(1) * unif(rng);
            bool ok = true;
            for (Index j = 0; j < k && ok; ++j) ok = (start.col(k) - start.col(j)).norm() >= min_sep;
            if (ok) break;
        }
    }
    return detail::simulate(grid_coords(p.width, p.height), start, lo, hi, p.frames, p.drift_sigma,
                            p.footprint_sigma, p.trace, p.noise, rng);
}

} // namespace otmotion

#endif // OTMOTION_SIMULATORS_HPP
