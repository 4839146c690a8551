#ifndef OTMOTION_MP_REDUCE_HPP
#define OTMOTION_MP_REDUCE_HPP

// Greedy matching-pursuit reduction of frames to weighted Gaussian atoms.
// Candidate atoms sit on the bins themselves, share one isotropic width and
// are truncated at four widths.

#include "errors.hpp"
#include "factorization.hpp"
#include "ot_core.hpp"
#include "parallel.hpp"
#include "types.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace otmotion {

inline constexpr Index default_atoms = 500;
inline constexpr double default_atom_sigma = 2.0;
inline constexpr double atom_truncation = 4.0;

/// Unit-L2 Gaussian atoms, one per bin, as the columns of a sparse d x d matrix.
struct AtomDictionary {
    Eigen::SparseMatrix<double> atoms;
    Eigen::SparseMatrix<double> gram;
    Vector l1_norms;
    double sigma = 0.0;
};

inline AtomDictionary build_atoms(const Coords& coords, double sigma)
{
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw invalid_argument_error("build_atoms: sigma must be > 0");
    const Index d = coords.rows();
    const double radius2 = atom_truncation * atom_truncation * sigma * sigma;
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    std::vector<Eigen::Triplet<double>> entries;
    AtomDictionary dict;
    dict.sigma = sigma;
    dict.l1_norms.resize(d);
    std::vector<std::pair<Index, double>> col;
    for (Index j = 0; j < d; ++j) {
        col.clear();
        double sq = 0.0;
        for (Index i = 0; i < d; ++i) {
            const double r2 = (coords.row(i) - coords.row(j)).squaredNorm();
            if (i != j && r2 > radius2) continue;
            const double v = std::exp(-r2 * inv_two_var);
            if (v <= 0.0 && i != j) continue;
            col.emplace_back(i, v);
            sq += v * v;
        }
        const double norm = std::sqrt(sq);
        double l1 = 0.0;
        for (const auto& [i, v] : col) {
            entries.emplace_back(i, j, v / norm);
            l1 += v / norm;
        }
        dict.l1_norms(j) = l1;
    }
    dict.atoms.resize(d, d);
    dict.atoms.setFromTriplets(entries.begin(), entries.end());
    dict.gram = (dict.atoms.transpose() * dict.atoms).pruned();
    return dict;
}

struct FrameAtoms {
    std::vector<Index> centers; ///< bin index of each selected atom, in selection order
    std::vector<double> coefficients;
    std::vector<double> weights;        ///< coefficient times the atom's L1 mass
    std::vector<double> residual_norms; ///< entry k is the residual norm after k atoms
};

inline FrameAtoms matching_pursuit_reduce(const Eigen::Ref<const Vector>& frame, const AtomDictionary& dict,
                                          Index n_atoms)
{
    const Index d = dict.atoms.rows();
    if (frame.size() != d) throw invalid_argument_error("matching_pursuit_reduce: frame length mismatch");
    if (n_atoms < 1) throw invalid_argument_error("matching_pursuit_reduce: n_atoms must be >= 1");
    if (!frame.allFinite() || (frame.array() < 0.0).any()) {
        throw invalid_argument_error("matching_pursuit_reduce: frame must be finite and non-negative");
    }
    FrameAtoms out;
    Vector residual = frame;
    Vector corr = dict.atoms.transpose() * residual;
    out.residual_norms.push_back(residual.norm());
    for (Index k = 0; k < n_atoms; ++k) {
        Index j = 0;
        const double coef = corr.maxCoeff(&j);
        if (!(coef > 0.0)) break;
        for (Eigen::SparseMatrix<double>::InnerIterator it(dict.atoms, j); it; ++it) {
            residual(it.row()) -= coef * it.value();
        }
        for (Eigen::SparseMatrix<double>::InnerIterator it(dict.gram, j); it; ++it) {
            corr(it.row()) -= coef * it.value();
        }
        out.centers.push_back(j);
        out.coefficients.push_back(coef);
        out.weights.push_back(coef * dict.l1_norms(j));
        out.residual_norms.push_back(residual.norm());
    }
    return out;
}

inline FrameAtoms matching_pursuit_reduce(const Eigen::Ref<const Vector>& frame, const Coords& coords, Index n_atoms,
                                          double sigma)
{
    return matching_pursuit_reduce(frame, build_atoms(coords, sigma), n_atoms);
}

struct ReducedSeries {
    HistogramSeries data;              ///< frames over the pooled atom centers
    GroundCost cost;                   ///< distances between atom centers
    std::vector<Index> bins;           ///< original bin of each reduced bin
    std::vector<std::vector<Index>> frame_atoms; ///< reduced bins used by each frame
    std::vector<FrameAtoms> atoms;
    Coords source_coords;
    double sigma = 0.0;
};

inline ReducedSeries reduce_series(const HistogramSeries& series, Index n_atoms = default_atoms,
                                   double sigma = default_atom_sigma, std::size_t jobs = 1)
{
    validate_series(series);
    const AtomDictionary dict = build_atoms(series.coords, sigma);
    const Index T = series.length();
    ReducedSeries out;
    out.atoms.resize(static_cast<std::size_t>(T));
    parallel_for(static_cast<std::size_t>(T), jobs, [&](std::size_t t) {
        out.atoms[t] = matching_pursuit_reduce(series.frames.col(static_cast<Index>(t)), dict, n_atoms);
    });

    std::map<Index, Index> slot;
    for (const auto& fa : out.atoms) {
        for (const Index c : fa.centers) slot.emplace(c, 0);
    }
    for (auto& [bin, s] : slot) {
        s = static_cast<Index>(out.bins.size());
        out.bins.push_back(bin);
    }
    const auto m = static_cast<Index>(out.bins.size());
    if (m == 0) throw invalid_argument_error("reduce_series: no atoms selected");

    Matrix X = Matrix::Zero(m, T);
    out.frame_atoms.resize(static_cast<std::size_t>(T));
    for (Index t = 0; t < T; ++t) {
        const FrameAtoms& fa = out.atoms[static_cast<std::size_t>(t)];
        auto& used = out.frame_atoms[static_cast<std::size_t>(t)];
        for (std::size_t a = 0; a < fa.centers.size(); ++a) {
            const Index s = slot.at(fa.centers[a]);
            X(s, t) += fa.weights[a];
            used.push_back(s);
        }
        std::sort(used.begin(), used.end());
        used.erase(std::unique(used.begin(), used.end()), used.end());
        const double mass = X.col(t).sum();
        if (!(mass > 0.0)) throw invalid_argument_error("reduce_series: frame " + std::to_string(t) + " has zero mass");
        X.col(t) /= mass;
    }

    Coords centers(m, series.coords.cols());
    for (Index s = 0; s < m; ++s) centers.row(s) = series.coords.row(out.bins[static_cast<std::size_t>(s)]);
    out.cost = build_ground_cost(centers);
    out.data = HistogramSeries{std::move(X), std::move(centers)};
    out.source_coords = series.coords;
    out.sigma = sigma;
    return out;
}

/// Spreads columns over reduced bins back onto the original bins, each
/// reduced bin as its L1-normalized Gaussian atom.
inline Matrix expand_to_bins(const Matrix& values, const ReducedSeries& reduced)
{
    const auto m = static_cast<Index>(reduced.bins.size());
    if (values.rows() != m) throw invalid_argument_error("expand_to_bins: row count mismatch");
    const Index d = reduced.source_coords.rows();
    const double inv_two_var = 1.0 / (2.0 * reduced.sigma * reduced.sigma);
    const double radius2 = atom_truncation * atom_truncation * reduced.sigma * reduced.sigma;
    Matrix spread = Matrix::Zero(d, m);
    for (Index s = 0; s < m; ++s) {
        const auto c = reduced.source_coords.row(reduced.bins[static_cast<std::size_t>(s)]);
        for (Index i = 0; i < d; ++i) {
            const double r2 = (reduced.source_coords.row(i) - c).squaredNorm();
            if (r2 <= radius2) spread(i, s) = std::exp(-r2 * inv_two_var);
        }
        spread.col(s) /= spread.col(s).sum();
    }
    return spread * values;
}

} // namespace otmotion

#endif // OTMOTION_MP_REDUCE_HPP
