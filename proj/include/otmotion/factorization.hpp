#ifndef OTMOTION_FACTORIZATION_HPP
#define OTMOTION_FACTORIZATION_HPP

// NMF, Wasserstein NMF and temporal Wasserstein NMF.
//
// The temporal model splits the T frames into L contiguous blocks, each with
// its own dictionary D_l (d x K) and coefficients C_l (K x |T_l|), and
// minimizes
//
//   sum_t W(x_t, D_l c_t) + lambda_T sum_{l<L} sum_k W(D_l^k, D_{l+1}^k)
//     - lambda_D H(D) - lambda_C H(C),      H(V) = -sum(v log v - v)
//
// with W the entropic transport cost. Gradients come from the Sinkhorn duals;
// each outer iteration takes one projected step on the dictionaries and one
// on the coefficients, each with its own backtracked step size.

#include "errors.hpp"
#include "log.hpp"
#include "ot_core.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace otmotion {

/// Data matrix X (d x T) with one histogram per frame, and the bin positions.
struct HistogramSeries {
    Matrix frames;
    Coords coords;

    Index bins() const { return frames.rows(); }
    Index length() const { return frames.cols(); }
};

inline void validate_series(const HistogramSeries& series, double tol = 1e-9)
{
    if (series.bins() < 1 || series.length() < 1) {
        throw invalid_argument_error("histogram series is empty");
    }
    if (series.coords.rows() != series.bins()) {
        throw invalid_argument_error("histogram series: " + std::to_string(series.coords.rows()) +
                                     " coordinates for " + std::to_string(series.bins()) + " bins");
    }
    for (Index t = 0; t < series.length(); ++t) {
        const std::string name = "frame " + std::to_string(t);
        validate_histogram(series.frames.col(t), name.c_str(), tol);
    }
}

/// Scales every column to unit sum. Throws on an all-zero column.
inline Matrix normalize_columns(Matrix m, const char* what = "column")
{
    for (Index c = 0; c < m.cols(); ++c) {
        const double s = m.col(c).sum();
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw numerical_error(std::string("degenerate ") + what, what + std::string(" ") + std::to_string(c));
        }
        m.col(c) /= s;
    }
    return m;
}

/// Half-open frame range [begin, begin + length).
struct Block {
    Index begin = 0;
    Index length = 0;

    Index end() const { return begin + length; }
};

/// L contiguous blocks of near-equal length; the remainder goes to the
/// leading blocks.
inline std::vector<Block> partition_blocks(Index frames, Index blocks)
{
    if (blocks < 1 || blocks > frames) {
        throw invalid_argument_error("partition_blocks: need 1 <= L <= T");
    }
    std::vector<Block> out;
    const Index base = frames / blocks;
    const Index extra = frames % blocks;
    Index start = 0;
    for (Index l = 0; l < blocks; ++l) {
        const Index len = base + (l < extra ? 1 : 0);
        out.push_back({start, len});
        start += len;
    }
    return out;
}

struct BlockFactorization {
    std::vector<Matrix> dictionaries; ///< L matrices, d x K
    std::vector<Matrix> coefficients; ///< L matrices, K x |T_l|
    std::vector<Block> blocks;

    Index blocks_count() const { return static_cast<Index>(blocks.size()); }
    Index components() const { return dictionaries.empty() ? 0 : dictionaries.front().cols(); }
    Index bins() const { return dictionaries.empty() ? 0 : dictionaries.front().rows(); }
    Index frames() const { return blocks.empty() ? 0 : blocks.back().end(); }

    Index block_of(Index t) const
    {
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            if (t >= blocks[l].begin && t < blocks[l].end()) return static_cast<Index>(l);
        }
        throw invalid_argument_error("frame " + std::to_string(t) + " is outside the block map");
    }

    /// K x T concatenation of the per-block coefficients.
    Matrix coefficient_matrix() const
    {
        Matrix c(components(), frames());
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            c.middleCols(blocks[l].begin, blocks[l].length) = coefficients[l];
        }
        return c;
    }
};

/// Throws unless the block map is a contiguous ordered cover and all factors
/// are non-negative with unit column sums (within `tol`).
inline void validate_factorization(const BlockFactorization& f, double tol = 1e-6)
{
    const std::size_t L = f.blocks.size();
    if (L == 0 || f.dictionaries.size() != L || f.coefficients.size() != L) {
        throw invalid_argument_error("factorization: inconsistent block count");
    }
    Index expect = 0;
    for (std::size_t l = 0; l < L; ++l) {
        const Block& b = f.blocks[l];
        if (b.begin != expect || b.length < 1) {
            throw invalid_argument_error("factorization: block map is not a contiguous ordered cover");
        }
        expect = b.end();
        const Matrix& D = f.dictionaries[l];
        const Matrix& C = f.coefficients[l];
        if (D.rows() != f.bins() || D.cols() != f.components() || C.rows() != f.components() ||
            C.cols() != b.length) {
            throw invalid_argument_error("factorization: factor shapes disagree in block " + std::to_string(l));
        }
        for (const Matrix* m : {&D, &C}) {
            if (!m->allFinite() || m->minCoeff() < 0.0) {
                throw invalid_argument_error("factorization: negative or non-finite entry in block " +
                                             std::to_string(l));
            }
            if ((m->colwise().sum().array() - 1.0).abs().maxCoeff() > tol) {
                throw invalid_argument_error("factorization: column sums are not 1 in block " + std::to_string(l));
            }
        }
    }
}

/// Rescales every dictionary column and every coefficient column to unit sum.
inline BlockFactorization normalize_factors(BlockFactorization f)
{
    for (std::size_t l = 0; l < f.blocks.size(); ++l) {
        for (Matrix* m : {&f.dictionaries[l], &f.coefficients[l]}) {
            if (!m->allFinite() || (m->size() && m->minCoeff() < 0.0)) {
                throw invalid_argument_error("normalize_factors: entries must be finite and non-negative");
            }
        }
        for (Index k = 0; k < f.dictionaries[l].cols(); ++k) {
            const double s = f.dictionaries[l].col(k).sum();
            if (!(s > 0.0)) {
                throw numerical_error("normalize_factors: all-zero dictionary column",
                                      "block " + std::to_string(l) + ", component " + std::to_string(k));
            }
            f.dictionaries[l].col(k) /= s;
        }
        for (Index t = 0; t < f.coefficients[l].cols(); ++t) {
            const double s = f.coefficients[l].col(t).sum();
            if (!(s > 0.0)) {
                throw numerical_error("normalize_factors: all-zero coefficient column",
                                      "block " + std::to_string(l) + ", frame " +
                                          std::to_string(f.blocks[l].begin + t));
            }
            f.coefficients[l].col(t) /= s;
        }
    }
    return f;
}

enum class StepRule { exponentiated, projected };

struct TwnmfConfig {
    Index K = 5;
    Index L = 10;
    double gamma = 1.0;
    double lambda_T = 1.0;
    double lambda_D = 0.0; ///< weight of sum(D log D - D); negative values favour compact footprints
    double lambda_C = 0.0;
    double step = 0.5;
    int outer_iters = 200;
    double sinkhorn_tol = 1e-6;
    int sinkhorn_max_iter = 10000;
    Seed seed = 0;
    /// Uniform mass mixed into reconstructions before transport so the duals
    /// stay finite on empty bins.
    double mass_floor = 1e-12;
    int max_halvings = 5;
    double step_growth = 1.2;
    double min_step = 1e-4; ///< lower bound on the adapted step sizes
    StepRule step_rule = StepRule::exponentiated;
    /// Leading iterations (counted in outer_iters) run as one uncoupled block;
    /// its dictionary then seeds every block. Ignored with an initial factorization.
    int warmup_iters = 0;

    void validate(Index bins, Index frames) const
    {
        if (K < 1 || K > bins) throw invalid_argument_error("config: need 1 <= K <= d");
        if (L < 1 || L > frames) throw invalid_argument_error("config: need 1 <= L <= T");
        if (!(gamma > 0.0) || !std::isfinite(gamma)) throw invalid_argument_error("config: gamma must be > 0");
        if (!(step > 0.0)) throw invalid_argument_error("config: step must be > 0");
        if (!(lambda_T >= 0.0)) throw invalid_argument_error("config: lambda_T must be >= 0");
        if (!std::isfinite(lambda_D) || !std::isfinite(lambda_C)) {
            throw invalid_argument_error("config: entropy weights must be finite");
        }
        if (outer_iters < 0) throw invalid_argument_error("config: outer_iters must be >= 0");
        if (warmup_iters < 0) throw invalid_argument_error("config: warmup_iters must be >= 0");
        if (!(sinkhorn_tol > 0.0) || sinkhorn_max_iter < 1) {
            throw invalid_argument_error("config: invalid Sinkhorn controls");
        }
        if (!(mass_floor >= 0.0)) throw invalid_argument_error("config: mass_floor must be >= 0");
        if (max_halvings < 0 || !(step_growth >= 1.0) || !(min_step > 0.0)) {
            throw invalid_argument_error("config: invalid step control");
        }
    }
};

/// Objective terms at one iterate. Entropies are H(V) = -sum(v log v - v).
struct FitRecord {
    double data_term = 0.0;
    double coupling_term = 0.0; ///< unweighted sum of boundary transport costs
    double entropy_D = 0.0;
    double entropy_C = 0.0;
    double total = 0.0;
    double step_D = 0.0;
    double step_C = 0.0;
    int reseeded = 0; ///< columns re-drawn after clamping emptied them
};

using FitTrace = std::vector<FitRecord>;

/// Lagrange multipliers of the marginal constraints: alpha/beta per frame
/// (d x T) and psi/omega per block boundary (L-1 matrices of d x K).
struct LagrangeDuals {
    Matrix alpha;
    Matrix beta;
    std::vector<Matrix> psi;
    std::vector<Matrix> omega;
};

/// Entropic transport plans stored through their potentials: column t holds
/// f = gamma log u and g = gamma log v of one solve.
struct PlanSet {
    Matrix potential_a;
    Matrix potential_b;
    double gamma = 1.0;

    Index size() const { return potential_a.cols(); }

    Matrix plan(Index t, const GroundCost& cost) const
    {
        if (t < 0 || t >= size()) {
            throw invalid_argument_error("missing transport plan for index " + std::to_string(t));
        }
        const Index d = cost.size();
        Matrix p(d, d);
        for (Index j = 0; j < d; ++j) {
            for (Index i = 0; i < d; ++i) {
                const double e = potential_a(i, t) + potential_b(j, t) - cost.M(i, j);
                p(i, j) = std::isinf(e) ? 0.0 : std::exp(e / gamma);
            }
        }
        return p;
    }
};

namespace detail {

inline double entropy(const Matrix& m)
{
    double h = 0.0;
    for (Index j = 0; j < m.cols(); ++j) {
        for (Index i = 0; i < m.rows(); ++i) {
            const double v = m(i, j);
            if (v > 0.0) h -= v * std::log(v) - v;
        }
    }
    return h;
}

inline Matrix floor_mass(Matrix m, double floor)
{
    if (floor > 0.0) {
        m = (m.array() + floor).matrix();
        for (Index c = 0; c < m.cols(); ++c) m.col(c) /= m.col(c).sum();
    }
    return m;
}

inline Matrix reconstruct(const BlockFactorization& f)
{
    Matrix r(f.bins(), f.frames());
    for (std::size_t l = 0; l < f.blocks.size(); ++l) {
        r.middleCols(f.blocks[l].begin, f.blocks[l].length).noalias() = f.dictionaries[l] * f.coefficients[l];
    }
    return r;
}

struct Evaluation {
    FitRecord record;
    LagrangeDuals duals;
    TransportBatch frames;
    TransportBatch boundaries; ///< column l*K + k couples D_l^k and D_{l+1}^k
};

// Residual above which an unconverged inner solve aborts the fit; below it
// the duals are used with a warning.
inline constexpr double max_inner_residual = 1e-3;

inline void require_converged(const TransportBatch& batch, const std::function<std::string(Index)>& where)
{
    int stalled = 0;
    for (Index c = 0; c < batch.size(); ++c) {
        if (batch.converged[static_cast<std::size_t>(c)]) continue;
        if (!(batch.marginal_residual(c) <= max_inner_residual)) {
            throw numerical_error("inner Sinkhorn solve did not converge (marginal residual " +
                                      std::to_string(batch.marginal_residual(c)) + ")",
                                  where(c));
        }
        ++stalled;
    }
    if (stalled) {
        log::warn(stalled, " inner Sinkhorn solve(s) stopped at max_iter with residual <= ", max_inner_residual);
    }
}

inline Evaluation evaluate(const Matrix& X, const GroundCost& cost, const BlockFactorization& f,
                           const TwnmfConfig& cfg, const Evaluation* warm)
{
    const SinkhornOptions opt{cfg.gamma, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter};
    const Index K = f.components();
    const Index L = f.blocks_count();
    const Index d = f.bins();

    Evaluation ev;
    const Matrix recon = floor_mass(reconstruct(f), cfg.mass_floor);
    ev.frames = sinkhorn_batch(X, recon, cost, opt, warm ? &warm->frames.potential_b : nullptr);
    require_converged(ev.frames, [&](Index t) {
        return "block " + std::to_string(f.block_of(t)) + ", frame " + std::to_string(t);
    });
    ev.duals.alpha = ev.frames.alpha;
    ev.duals.beta = ev.frames.beta;
    ev.record.data_term = ev.frames.regularized_objective.sum();

    if (L > 1) {
        Matrix first(d, K * (L - 1));
        Matrix second(d, K * (L - 1));
        for (Index l = 0; l + 1 < L; ++l) {
            first.middleCols(l * K, K) = f.dictionaries[static_cast<std::size_t>(l)];
            second.middleCols(l * K, K) = f.dictionaries[static_cast<std::size_t>(l + 1)];
        }
        ev.boundaries = sinkhorn_batch(floor_mass(first, cfg.mass_floor), floor_mass(second, cfg.mass_floor), cost,
                                       opt, warm && warm->boundaries.size() ? &warm->boundaries.potential_b : nullptr);
        require_converged(ev.boundaries, [&](Index c) {
            return "boundary " + std::to_string(c / K) + "/" + std::to_string(c / K + 1) + ", component " +
                   std::to_string(c % K);
        });
        for (Index l = 0; l + 1 < L; ++l) {
            ev.duals.psi.push_back(ev.boundaries.alpha.middleCols(l * K, K));
            ev.duals.omega.push_back(ev.boundaries.beta.middleCols(l * K, K));
        }
        ev.record.coupling_term = ev.boundaries.regularized_objective.sum();
    }

    for (std::size_t l = 0; l < f.blocks.size(); ++l) {
        ev.record.entropy_D += entropy(f.dictionaries[l]);
        ev.record.entropy_C += entropy(f.coefficients[l]);
    }
    ev.record.total = ev.record.data_term + cfg.lambda_T * ev.record.coupling_term -
                      cfg.lambda_D * ev.record.entropy_D - cfg.lambda_C * ev.record.entropy_C;
    return ev;
}

// log with the argument clamped away from zero, for entropy gradients
inline Matrix safe_log(const Matrix& m)
{
    return m.array().max(1e-12).log().matrix();
}

} // namespace detail

/// Data-fidelity, coupling and entropy terms of the temporal objective.
inline FitRecord objective_value(const HistogramSeries& X, const GroundCost& cost, const BlockFactorization& f,
                                 const TwnmfConfig& cfg)
{
    validate_factorization(f);
    if (X.bins() != f.bins() || X.length() != f.frames() || cost.size() != f.bins()) {
        throw invalid_argument_error("objective_value: data, cost and factorization shapes differ");
    }
    return detail::evaluate(X.frames, cost, f, cfg, nullptr).record;
}

struct Gradients {
    std::vector<Matrix> dictionaries; ///< per block, d x K
    std::vector<Matrix> coefficients; ///< per block, K x |T_l|
};

/// Gradients of the temporal objective read off the Lagrangian:
///   dD_l   = -sum_{t in T_l} beta_t c_t^T - lambda_T (psi_l + omega_{l-1}) + lambda_D log D_l
///   dc_t   = -D_l^T beta_t + lambda_C log c_t
/// scaled by 1 / (1 + d * mass_floor) on the transport terms to account for
/// the floor mixed into the transported histograms.
inline Gradients twnmf_gradients(const BlockFactorization& f, const LagrangeDuals& duals, const TwnmfConfig& cfg)
{
    const Index L = f.blocks_count();
    const Index d = f.bins();
    if (duals.beta.rows() != d || duals.beta.cols() != f.frames()) {
        throw invalid_argument_error("twnmf_gradients: frame duals have the wrong shape");
    }
    if (L > 1 && (static_cast<Index>(duals.psi.size()) != L - 1 || static_cast<Index>(duals.omega.size()) != L - 1)) {
        throw invalid_argument_error("twnmf_gradients: need one psi/omega pair per block boundary");
    }
    if (!duals.beta.allFinite()) {
        throw numerical_error("twnmf_gradients: non-finite frame duals");
    }
    const double scale = 1.0 / (1.0 + static_cast<double>(d) * cfg.mass_floor);
    Gradients g;
    for (Index l = 0; l < L; ++l) {
        const auto sl = static_cast<std::size_t>(l);
        const Block& b = f.blocks[sl];
        const Matrix& D = f.dictionaries[sl];
        const Matrix& C = f.coefficients[sl];
        const auto beta = duals.beta.middleCols(b.begin, b.length);

        Matrix gD = -scale * (beta * C.transpose());
        if (cfg.lambda_T != 0.0) {
            if (l + 1 < L) {
                if (!duals.psi[sl].allFinite()) throw numerical_error("twnmf_gradients: non-finite psi");
                gD -= cfg.lambda_T * scale * duals.psi[sl];
            }
            if (l > 0) {
                if (!duals.omega[sl - 1].allFinite()) throw numerical_error("twnmf_gradients: non-finite omega");
                gD -= cfg.lambda_T * scale * duals.omega[sl - 1];
            }
        }
        if (cfg.lambda_D != 0.0) {
            gD += cfg.lambda_D * detail::safe_log(D);
        }
        Matrix gC = -scale * (D.transpose() * beta);
        if (cfg.lambda_C != 0.0) {
            gC += cfg.lambda_C * detail::safe_log(C);
        }
        if (!gD.allFinite() || !gC.allFinite()) {
            throw numerical_error("twnmf_gradients: non-finite gradient", "block " + std::to_string(l));
        }
        g.dictionaries.push_back(std::move(gD));
        g.coefficients.push_back(std::move(gC));
    }
    return g;
}

struct TwnmfResult {
    BlockFactorization factors;
    FitRecord initial;
    FitTrace trace;
    LagrangeDuals duals;
    PlanSet frame_plans;    ///< column t: plan between x_t (rows) and D_l c_t (columns)
    PlanSet boundary_plans; ///< column l*K + k: plan between D_l^k and D_{l+1}^k
};

/// Optional inputs to the solvers.
struct FitHooks {
    const BlockFactorization* initial = nullptr;
    std::function<void(int iteration, const BlockFactorization&, const FitRecord&)> on_iteration;
};

namespace detail {

template <typename Rng>
inline Matrix uniform_matrix(Index rows, Index cols, Rng& rng)
{
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) m(i, j) = unif(rng);
    }
    return m;
}

inline constexpr double max_exponent_step = 30.0;

// One step on every column of `m`, followed by renormalization. The gradient
// is centred (tangent to the simplex) and made unit-free:
//   projected:     m - step * (max m / max|g|) * g, clamped at zero
//   exponentiated: m * exp(-step * g / sum(m |g|)), exponent clipped to +-30
// Columns emptied by the clamp are re-drawn from Unif[0,1].
template <typename Rng>
inline Matrix column_step(const Matrix& m, const Matrix& grad, double step, StepRule rule, Rng& rng, int& reseeded)
{
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Matrix out(m.rows(), m.cols());
    for (Index c = 0; c < m.cols(); ++c) {
        const Eigen::ArrayXd centred = grad.col(c).array() - grad.col(c).mean();
        if (rule == StepRule::projected) {
            const double g_max = centred.abs().maxCoeff();
            const double scale = g_max > 0.0 ? m.col(c).maxCoeff() / g_max : 0.0;
            out.col(c) = (m.col(c).array() - step * scale * centred).max(0.0);
        } else {
            const double s = (m.col(c).array() * centred.abs()).sum();
            const Eigen::ArrayXd z = s > 0.0 ? Eigen::ArrayXd((step * centred / s).max(-max_exponent_step).min(max_exponent_step))
                                             : Eigen::ArrayXd::Zero(m.rows());
            out.col(c) = m.col(c).array() * (-z).exp();
        }
        double total = out.col(c).sum();
        if (!(total > 0.0)) {
            for (Index i = 0; i < m.rows(); ++i) out(i, c) = unif(rng);
            total = out.col(c).sum();
            ++reseeded;
        }
        out.col(c) /= total;
    }
    return out;
}

} // namespace detail

/// Uniform random initialization: one dictionary draw shared by every block
/// (so component labels start aligned across blocks), then coefficients.
inline BlockFactorization random_factorization(Index bins, Index frames, Index K, Index L, Seed seed)
{
    std::mt19937_64 rng(seed);
    BlockFactorization f;
    f.blocks = partition_blocks(frames, L);
    const Matrix D0 = normalize_columns(detail::uniform_matrix(bins, K, rng));
    const Matrix C0 = normalize_columns(detail::uniform_matrix(K, frames, rng));
    for (const Block& b : f.blocks) {
        f.dictionaries.push_back(D0);
        f.coefficients.push_back(C0.middleCols(b.begin, b.length));
    }
    return f;
}

namespace detail {

struct StepState {
    double step_D = 0.0;
    double step_C = 0.0;
};

// Runs `iters` outer iterations from `f`, appending to result.trace.
template <typename Rng>
inline void run_iterations(const HistogramSeries& X, const GroundCost& cost, const TwnmfConfig& cfg, int iters,
                           int iter_offset, BlockFactorization& f, Evaluation& current, StepState& steps, Rng& rng,
                           const FitHooks& hooks, TwnmfResult& result)
{
    auto descend = [&](bool dictionaries, double& step) {
        const Gradients g = twnmf_gradients(f, current.duals, cfg);
        int reseeded = 0;
        for (int attempt = 0;; ++attempt) {
            BlockFactorization trial = f;
            for (std::size_t l = 0; l < f.blocks.size(); ++l) {
                if (dictionaries) {
                    trial.dictionaries[l] =
                        column_step(f.dictionaries[l], g.dictionaries[l], step, cfg.step_rule, rng, reseeded);
                } else {
                    trial.coefficients[l] =
                        column_step(f.coefficients[l], g.coefficients[l], step, cfg.step_rule, rng, reseeded);
                }
            }
            Evaluation ev = evaluate(X.frames, cost, trial, cfg, &current);
            if (ev.record.total <= current.record.total || attempt >= cfg.max_halvings) {
                if (attempt == 0) step *= cfg.step_growth;
                step = std::max(step, cfg.min_step);
                f = std::move(trial);
                current = std::move(ev);
                return reseeded;
            }
            step *= 0.5;
            reseeded = 0;
        }
    };

    for (int i = 0; i < iters; ++i) {
        const int iter = iter_offset + i;
        // dictionaries, then coefficients with duals at the updated dictionaries
        const int reseeded = descend(true, steps.step_D) + descend(false, steps.step_C);
        FitRecord rec = current.record;
        rec.step_D = steps.step_D;
        rec.step_C = steps.step_C;
        rec.reseeded = reseeded;
        if (reseeded) {
            log::info("twnmf: iteration ", iter, " re-seeded ", reseeded, " empty column(s)");
        }
        log::debug("twnmf: iteration ", iter, " objective ", rec.total, " data ", rec.data_term, " coupling ",
                   rec.coupling_term);
        result.trace.push_back(rec);
        if (hooks.on_iteration) {
            hooks.on_iteration(iter, f, rec);
        }
    }
}

// Copies a single-block factorization into `L` blocks.
inline BlockFactorization split_blocks(const BlockFactorization& single, Index L)
{
    BlockFactorization f;
    f.blocks = partition_blocks(single.frames(), L);
    for (const Block& b : f.blocks) {
        f.dictionaries.push_back(single.dictionaries.front());
        f.coefficients.push_back(single.coefficients.front().middleCols(b.begin, b.length));
    }
    return f;
}

} // namespace detail

namespace detail {

struct FitState {
    BlockFactorization f;
    Evaluation current;
    StepState steps;
    std::mt19937_64 rng;
    TwnmfResult result;
};

inline void check_inputs(const HistogramSeries& X, const GroundCost& cost, const TwnmfConfig& cfg)
{
    validate_series(X);
    if (cost.size() != X.bins()) {
        throw invalid_argument_error("twnmf_fit: ground cost has " + std::to_string(cost.size()) + " bins, data has " +
                                     std::to_string(X.bins()));
    }
    cfg.validate(X.bins(), X.length());
}

inline FitState start_fit(const HistogramSeries& X, const GroundCost& cost, const TwnmfConfig& cfg,
                          BlockFactorization f)
{
    FitState s{std::move(f), {}, {cfg.step, cfg.step}, std::mt19937_64(cfg.seed ^ 0x9e3779b97f4a7c15ULL), {}};
    s.current = evaluate(X.frames, cost, s.f, cfg, nullptr);
    s.result.initial = s.current.record;
    return s;
}

inline void run(const HistogramSeries& X, const GroundCost& cost, const TwnmfConfig& cfg, int iters, FitState& s,
                const FitHooks& hooks)
{
    run_iterations(X, cost, cfg, iters, static_cast<int>(s.result.trace.size()), s.f, s.current, s.steps, s.rng,
                   hooks, s.result);
}

// Replaces the single-block state by its L-block copy under `cfg`.
inline void split(const HistogramSeries& X, const GroundCost& cost, const TwnmfConfig& cfg, FitState& s)
{
    s.f = split_blocks(s.f, cfg.L);
    Evaluation next = evaluate(X.frames, cost, s.f, cfg, &s.current);
    s.current = std::move(next);
}

inline TwnmfResult finish(const TwnmfConfig& cfg, FitState&& s)
{
    TwnmfResult r = std::move(s.result);
    r.factors = std::move(s.f);
    r.duals = s.current.duals;
    r.frame_plans = PlanSet{s.current.frames.potential_a, s.current.frames.potential_b, cfg.gamma};
    if (s.current.boundaries.size()) {
        r.boundary_plans = PlanSet{s.current.boundaries.potential_a, s.current.boundaries.potential_b, cfg.gamma};
    }
    return r;
}

inline TwnmfConfig single_block(TwnmfConfig cfg)
{
    cfg.L = 1;
    cfg.lambda_T = 0.0;
    return cfg;
}

inline int warmup_length(const TwnmfConfig& cfg)
{
    return cfg.L > 1 ? std::min(cfg.warmup_iters, cfg.outer_iters) : 0;
}

} // namespace detail

/// Temporal Wasserstein NMF. Each outer iteration re-solves every frame and
/// boundary transport problem, steps the dictionaries (halving the step up
/// to `max_halvings` times while the objective increases, then accepting),
/// re-solves, and steps the coefficients the same way.
inline TwnmfResult twnmf_fit(const HistogramSeries& X, const GroundCost& cost, const TwnmfConfig& cfg,
                             const FitHooks& hooks = {})
{
    detail::check_inputs(X, cost, cfg);
    if (hooks.initial) {
        BlockFactorization f = *hooks.initial;
        if (f.blocks_count() != cfg.L || f.components() != cfg.K || f.bins() != X.bins() ||
            f.frames() != X.length()) {
            throw invalid_argument_error("twnmf_fit: initial factorization does not match the configuration");
        }
        f = normalize_factors(std::move(f));
        validate_factorization(f);
        detail::FitState s = detail::start_fit(X, cost, cfg, std::move(f));
        detail::run(X, cost, cfg, cfg.outer_iters, s, hooks);
        return detail::finish(cfg, std::move(s));
    }
    const int warmup = detail::warmup_length(cfg);
    if (warmup == 0) {
        detail::FitState s =
            detail::start_fit(X, cost, cfg, random_factorization(X.bins(), X.length(), cfg.K, cfg.L, cfg.seed));
        detail::run(X, cost, cfg, cfg.outer_iters, s, hooks);
        return detail::finish(cfg, std::move(s));
    }
    const TwnmfConfig single = detail::single_block(cfg);
    detail::FitState s =
        detail::start_fit(X, cost, single, random_factorization(X.bins(), X.length(), cfg.K, 1, cfg.seed));
    detail::run(X, cost, single, warmup, s, hooks);
    detail::split(X, cost, cfg, s);
    detail::run(X, cost, cfg, cfg.outer_iters - warmup, s, hooks);
    return detail::finish(cfg, std::move(s));
}

/// WNMF and TWNMF fits sharing the single-block warm-up: equal to
/// `wnmf_fit` on the single-block form of `cfg` and to `twnmf_fit` on `cfg`.
inline std::pair<TwnmfResult, TwnmfResult> wnmf_twnmf_fit(const HistogramSeries& X, const GroundCost& cost,
                                                          const TwnmfConfig& cfg)
{
    detail::check_inputs(X, cost, cfg);
    const TwnmfConfig single = detail::single_block(cfg);
    const int warmup = detail::warmup_length(cfg);
    detail::FitState s =
        detail::start_fit(X, cost, single, random_factorization(X.bins(), X.length(), cfg.K, 1, cfg.seed));
    detail::run(X, cost, single, warmup, s, {});
    if (warmup == 0) {
        detail::FitState w = s;
        detail::run(X, cost, single, cfg.outer_iters, w, {});
        TwnmfResult wr = detail::finish(single, std::move(w));
        return {std::move(wr), twnmf_fit(X, cost, cfg)};
    }
    detail::FitState t = s;
    detail::run(X, cost, single, cfg.outer_iters - warmup, s, {});
    detail::split(X, cost, cfg, t);
    detail::run(X, cost, cfg, cfg.outer_iters - warmup, t, {});
    return {detail::finish(single, std::move(s)), detail::finish(cfg, std::move(t))};
}

/// Wasserstein NMF: the single-block, uncoupled case of `twnmf_fit`.
inline TwnmfResult wnmf_fit(const HistogramSeries& X, const GroundCost& cost, const TwnmfConfig& cfg,
                            const FitHooks& hooks = {})
{
    if (cfg.L != 1 || cfg.lambda_T != 0.0) {
        throw invalid_argument_error("wnmf_fit: requires L = 1 and lambda_T = 0");
    }
    return twnmf_fit(X, cost, cfg, hooks);
}

namespace detail {

template <typename PlanFor>
std::vector<Matrix> extract_tracks_impl(const BlockFactorization& f, Index frames, PlanFor&& plan_for)
{
    const Index K = f.components();
    const Index d = f.bins();
    if (frames < f.frames()) {
        throw invalid_argument_error("extract_tracks: missing plan for frame " + std::to_string(frames));
    }
    std::vector<Matrix> tracks(static_cast<std::size_t>(K), Matrix::Zero(d, f.frames()));
    for (std::size_t l = 0; l < f.blocks.size(); ++l) {
        const Block& b = f.blocks[l];
        const Matrix& D = f.dictionaries[l];
        for (Index s = 0; s < b.length; ++s) {
            const Index t = b.begin + s;
            const Matrix plan = plan_for(t);
            if (plan.rows() != d || plan.cols() != d) {
                throw invalid_argument_error("extract_tracks: plan for frame " + std::to_string(t) +
                                             " has the wrong shape");
            }
            // reconstruction-side bins route their mass back to data bins
            // through the column-normalized plan
            const Vector col_mass = plan.colwise().sum().transpose();
            const Vector c = f.coefficients[l].col(s);
            const Vector recon = D * c;
            Matrix share(d, K);
            for (Index j = 0; j < d; ++j) {
                for (Index k = 0; k < K; ++k) {
                    const double part = recon(j) > 0.0 ? D(j, k) * c(k) / recon(j) : 1.0 / static_cast<double>(K);
                    share(j, k) = col_mass(j) > 0.0 ? part : 0.0;
                }
            }
            const Matrix footprints = plan * share;
            for (Index k = 0; k < K; ++k) {
                tracks[static_cast<std::size_t>(k)].col(t) = footprints.col(k);
            }
        }
    }
    return tracks;
}

} // namespace detail

/// Per-component footprints on the data bins: frame t's plan carries the
/// component's share of D_l c_t back to the data, so footprint (k, t) has
/// mass ~c_t[k] and the footprints of a frame sum to the plan's data marginal.
inline std::vector<Matrix> extract_tracks(const BlockFactorization& f, std::span<const Matrix> plans)
{
    return detail::extract_tracks_impl(f, static_cast<Index>(plans.size()),
                                       [&](Index t) -> const Matrix& { return plans[static_cast<std::size_t>(t)]; });
}

inline std::vector<Matrix> extract_tracks(const BlockFactorization& f, const PlanSet& plans, const GroundCost& cost)
{
    return detail::extract_tracks_impl(f, plans.size(), [&](Index t) { return plans.plan(t, cost); });
}

struct NmfResult {
    Matrix D;                   ///< d x K, columns scaled to unit sum
    Matrix C;                   ///< K x T
    std::vector<double> errors; ///< ||X - DC||_F after each iteration
};

/// Lee-Seung multiplicative updates for ||X - DC||_F^2.
inline NmfResult nmf_fit(const Matrix& X, Index K, int iters, Seed seed)
{
    if (K < 1 || K > std::min(X.rows(), X.cols())) {
        throw invalid_argument_error("nmf_fit: need 1 <= K <= min(d, T)");
    }
    if (!X.allFinite() || X.minCoeff() < 0.0) {
        throw invalid_argument_error("nmf_fit: data must be finite and non-negative");
    }
    constexpr double tiny = 1e-300;
    std::mt19937_64 rng(seed);
    NmfResult r;
    r.D = detail::uniform_matrix(X.rows(), K, rng);
    r.C = detail::uniform_matrix(K, X.cols(), rng);
    r.errors.reserve(static_cast<std::size_t>(std::max(iters, 0)));
    for (int it = 0; it < iters; ++it) {
        const Matrix DtX = r.D.transpose() * X;
        const Matrix DtDC = (r.D.transpose() * r.D) * r.C;
        r.C = r.C.cwiseProduct(DtX).cwiseQuotient((DtDC.array() + tiny).matrix());
        const Matrix XCt = X * r.C.transpose();
        const Matrix DCCt = r.D * (r.C * r.C.transpose());
        r.D = r.D.cwiseProduct(XCt).cwiseQuotient((DCCt.array() + tiny).matrix());
        r.errors.push_back((X - r.D * r.C).norm());
    }
    for (Index k = 0; k < K; ++k) {
        const double s = r.D.col(k).sum();
        if (s > 0.0) {
            r.D.col(k) /= s;
            r.C.row(k) *= s;
        }
    }
    return r;
}

inline NmfResult nmf_fit(const HistogramSeries& X, Index K, int iters, Seed seed)
{
    return nmf_fit(X.frames, K, iters, seed);
}

} // namespace otmotion

#endif // OTMOTION_FACTORIZATION_HPP
