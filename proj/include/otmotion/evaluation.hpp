#ifndef OTMOTION_EVALUATION_HPP
#define OTMOTION_EVALUATION_HPP

// Component matching and the spatial / temporal accuracy scores.
// Both scores are Pearson correlations, so they ignore the arbitrary scale
// and offset of the recovered factors.

#include "errors.hpp"
#include "simulators.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace otmotion {

/// Pearson correlation; 0 when either input has zero variance.
inline double pearson(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y)
{
    if (x.size() != y.size()) {
        throw invalid_argument_error("pearson: length mismatch");
    }
    if (x.size() < 2) return 0.0;
    const Eigen::ArrayXd xc = x.array() - x.mean();
    const Eigen::ArrayXd yc = y.array() - y.mean();
    const double sxx = xc.square().sum();
    const double syy = yc.square().sum();
    if (!(sxx > 0.0) || !(syy > 0.0)) return 0.0;
    const double r = (xc * yc).sum() / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

struct Score {
    double mean = 0.0;
    double std = 0.0; ///< population standard deviation
};

inline Score summarize(const Eigen::Ref<const Vector>& values)
{
    if (values.size() == 0) return {};
    const double m = values.mean();
    return {m, std::sqrt((values.array() - m).square().mean())};
}

/// Maximum-weight perfect matching on a square score matrix (Hungarian
/// algorithm). Returns assignment[row] = column.
inline std::vector<Index> optimal_assignment(const Matrix& score)
{
    const Index n = score.rows();
    if (score.cols() != n) {
        throw invalid_argument_error("optimal_assignment: score matrix must be square");
    }
    constexpr double inf = std::numeric_limits<double>::infinity();
    // 1-based potentials formulation, minimizing -score
    std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
    for (Index i = 1; i <= n; ++i) {
        p[0] = i;
        Index j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
        std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const Index i0 = p[static_cast<std::size_t>(j0)];
            double delta = inf;
            Index j1 = 0;
            for (Index j = 1; j <= n; ++j) {
                const auto sj = static_cast<std::size_t>(j);
                if (used[sj]) continue;
                const double cur = -score(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[sj];
                if (cur < minv[sj]) {
                    minv[sj] = cur;
                    way[sj] = j0;
                }
                if (minv[sj] < delta) {
                    delta = minv[sj];
                    j1 = j;
                }
            }
            for (Index j = 0; j <= n; ++j) {
                const auto sj = static_cast<std::size_t>(j);
                if (used[sj]) {
                    u[static_cast<std::size_t>(p[sj])] += delta;
                    v[sj] -= delta;
                } else {
                    minv[sj] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const Index j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<Index> assignment(static_cast<std::size_t>(n), 0);
    for (Index j = 1; j <= n; ++j) {
        assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    }
    return assignment;
}

struct MatchResult {
    std::vector<Index> permutation; ///< permutation[estimated] = truth component
    Vector spatial_scores;          ///< per estimated component
    Vector temporal_scores;         ///< filled by temporal_accuracy
};

/// Score of estimated component e against truth j: Pearson correlation of the
/// footprints averaged over frames.
inline Matrix spatial_score_matrix(const std::vector<Matrix>& estimated, const std::vector<Matrix>& truth)
{
    const auto K = static_cast<Index>(estimated.size());
    if (static_cast<Index>(truth.size()) != K) {
        throw invalid_argument_error("match_components: " + std::to_string(K) + " estimated components vs " +
                                     std::to_string(truth.size()) + " true components");
    }
    Matrix s(K, K);
    for (Index e = 0; e < K; ++e) {
        const Matrix& est = estimated[static_cast<std::size_t>(e)];
        for (Index j = 0; j < K; ++j) {
            const Matrix& tru = truth[static_cast<std::size_t>(j)];
            if (est.rows() != tru.rows() || est.cols() != tru.cols()) {
                throw invalid_argument_error("match_components: footprint shapes differ");
            }
            double acc = 0.0;
            for (Index t = 0; t < est.cols(); ++t) acc += pearson(est.col(t), tru.col(t));
            s(e, j) = est.cols() ? acc / static_cast<double>(est.cols()) : 0.0;
        }
    }
    return s;
}

inline MatchResult match_components(const std::vector<Matrix>& estimated, const std::vector<Matrix>& truth)
{
    const Matrix s = spatial_score_matrix(estimated, truth);
    MatchResult m;
    m.permutation = optimal_assignment(s);
    m.spatial_scores.resize(s.rows());
    for (Index e = 0; e < s.rows(); ++e) {
        m.spatial_scores(e) = s(e, m.permutation[static_cast<std::size_t>(e)]);
    }
    return m;
}

inline MatchResult match_components(const std::vector<Matrix>& estimated, const SimulationTruth& truth)
{
    return match_components(estimated, truth.true_footprints);
}

inline Score spatial_accuracy(const MatchResult& match)
{
    return summarize(match.spatial_scores);
}

/// Per-pair Pearson correlation of matched traces (rows of K x T matrices).
inline Vector temporal_scores(const MatchResult& match, const Matrix& estimated_traces, const Matrix& true_traces)
{
    const auto K = static_cast<Index>(match.permutation.size());
    if (estimated_traces.rows() != K || true_traces.rows() != K) {
        throw invalid_argument_error("temporal_accuracy: component count mismatch");
    }
    if (estimated_traces.cols() != true_traces.cols()) {
        throw invalid_argument_error("temporal_accuracy: frame count mismatch");
    }
    Vector s(K);
    for (Index e = 0; e < K; ++e) {
        s(e) = pearson(estimated_traces.row(e).transpose(),
                       true_traces.row(match.permutation[static_cast<std::size_t>(e)]).transpose());
    }
    return s;
}

inline Score temporal_accuracy(MatchResult& match, const Matrix& estimated_traces, const Matrix& true_traces)
{
    match.temporal_scores = temporal_scores(match, estimated_traces, true_traces);
    return summarize(match.temporal_scores);
}

/// Static footprints (d x K) repeated over T frames, for evaluating NMF.
inline std::vector<Matrix> tile_footprints(const Matrix& D, Index frames)
{
    std::vector<Matrix> out;
    for (Index k = 0; k < D.cols(); ++k) {
        out.push_back(D.col(k).replicate(1, frames));
    }
    return out;
}

} // namespace otmotion

#endif // OTMOTION_EVALUATION_HPP
