#ifndef OTMOTION_OT_CORE_HPP
#define OTMOTION_OT_CORE_HPP

// Ground costs, entropic Sinkhorn transport with dual extraction, the exact
// 1D transport distance, and plan push-forwards.
//
// Plan convention: plan(i, j) is the mass moved from bin i of the first
// histogram to bin j of the second. Rows sum to `a`, columns sum to `b`.
//
// Kernel convention: K = exp(-M / gamma), so gamma carries the units of the
// cost and multiplies the entropy term of the regularized objective
//     <P, M> + gamma * sum(P log P - P).
// Duals follow the Lagrangian sign: alpha = -gamma log u, beta = -gamma log v.
// The gradient of the regularized objective with respect to `b` is therefore
// -beta (up to a constant, which is invisible on the simplex).

#include "errors.hpp"
#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace otmotion {

struct GroundCost {
    Coords coords; ///< d x n bin positions
    Matrix M;      ///< d x d Euclidean distances

    Index size() const { return M.rows(); }
    double max_cost() const { return M.size() ? M.maxCoeff() : 0.0; }
};

/// Pairwise Euclidean cost between the rows of `coords`.
inline GroundCost build_ground_cost(const Coords& coords)
{
    if (coords.rows() < 1) {
        throw invalid_argument_error("build_ground_cost: empty coordinate list");
    }
    if (coords.cols() < 1) {
        throw invalid_argument_error("build_ground_cost: points must have dimension >= 1");
    }
    if (!coords.allFinite()) {
        throw invalid_argument_error("build_ground_cost: non-finite coordinate");
    }
    const Index d = coords.rows();
    GroundCost cost{coords, Matrix::Zero(d, d)};
    for (Index i = 0; i < d; ++i) {
        for (Index j = i + 1; j < d; ++j) {
            const double dist = (coords.row(i) - coords.row(j)).norm();
            cost.M(i, j) = dist;
            cost.M(j, i) = dist;
        }
    }
    return cost;
}

/// Overload for ragged input; rejects points of differing dimension.
inline GroundCost build_ground_cost(const std::vector<std::vector<double>>& points)
{
    if (points.empty()) {
        throw invalid_argument_error("build_ground_cost: empty coordinate list");
    }
    const std::size_t n = points.front().size();
    Coords coords(static_cast<Index>(points.size()), static_cast<Index>(n));
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].size() != n) {
            throw invalid_argument_error("build_ground_cost: point " + std::to_string(i) + " has dimension " +
                                         std::to_string(points[i].size()) + ", expected " + std::to_string(n));
        }
        for (std::size_t c = 0; c < n; ++c) {
            coords(static_cast<Index>(i), static_cast<Index>(c)) = points[i][c];
        }
    }
    return build_ground_cost(coords);
}

/// d collinear bins at 0, spacing, 2*spacing, ...
inline Coords line_coords(Index d, double spacing = 1.0)
{
    Coords c(d, 1);
    for (Index i = 0; i < d; ++i) {
        c(i, 0) = spacing * static_cast<double>(i);
    }
    return c;
}

/// Row-major W x H pixel grid: bin y * W + x sits at (x, y).
inline Coords grid_coords(Index width, Index height)
{
    Coords c(width * height, 2);
    for (Index y = 0; y < height; ++y) {
        for (Index x = 0; x < width; ++x) {
            c(y * width + x, 0) = static_cast<double>(x);
            c(y * width + x, 1) = static_cast<double>(y);
        }
    }
    return c;
}

/// Throws unless `h` is finite, non-negative and sums to 1 within `tol`.
inline void validate_histogram(const Eigen::Ref<const Vector>& h, const char* name, double tol = 1e-9)
{
    if (!h.allFinite()) {
        throw invalid_argument_error(std::string(name) + ": non-finite entry");
    }
    if (h.size() && h.minCoeff() < 0.0) {
        throw invalid_argument_error(std::string(name) + ": negative entry");
    }
    const double mass = h.sum();
    if (mass <= 0.0) {
        throw invalid_argument_error(std::string(name) + ": zero-mass histogram");
    }
    if (std::abs(mass - 1.0) > tol) {
        throw invalid_argument_error(std::string(name) + ": mass " + std::to_string(mass) + " is not 1");
    }
}

inline double total_variation(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q)
{
    return 0.5 * (p - q).cwiseAbs().sum();
}

struct SinkhornOptions {
    double gamma = 1.0;
    double tol = 1e-6;
    int max_iter = 10000;
};

struct TransportResult {
    Matrix plan;
    Vector alpha;
    Vector beta;
    int iterations = 0;
    double marginal_residual = 0.0;
    bool converged = false;
    bool log_domain = false; ///< the stabilized path was used
};

/// Column-wise results of `sinkhorn_batch`. Plans are not materialized; the
/// potentials f = gamma log u and g = gamma log v (-inf on zero-mass bins)
/// define them as exp((f_i + g_j - M_ij) / gamma).
struct TransportBatch {
    Matrix potential_a;
    Matrix potential_b;
    Matrix alpha;
    Matrix beta;
    Vector transport_cost;
    Vector regularized_objective;
    Vector marginal_residual;
    std::vector<int> iterations;
    std::vector<char> converged;
    std::vector<char> log_domain;
    double gamma = 1.0;

    Index size() const { return potential_a.cols(); }

    Matrix plan(Index col, const GroundCost& cost) const
    {
        const Index d = cost.size();
        Matrix p(d, d);
        for (Index j = 0; j < d; ++j) {
            for (Index i = 0; i < d; ++i) {
                const double e = potential_a(i, col) + potential_b(j, col) - cost.M(i, j);
                p(i, j) = std::isinf(e) ? 0.0 : std::exp(e / gamma);
            }
        }
        return p;
    }
};

namespace detail {

inline constexpr double scaling_floor = 1e-30;
inline constexpr double scaling_ceil = 1e30;
inline constexpr double max_kernel_exponent = 700.0;
inline constexpr int standard_iterations = 2000;
inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

// log sum_j exp(values_j); -inf when every value is -inf.
inline double log_sum_exp(const Eigen::Ref<const Vector>& values)
{
    const double m = values.maxCoeff();
    if (std::isinf(m)) {
        return m;
    }
    return m + std::log((values.array() - m).exp().sum());
}

struct LogState {
    Vector f;
    Vector g;
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;
};

// Row marginal error of the plan defined by (f, g) at regularization eps;
// fills row_lse with log sum_j exp((g_j - M_ij) / eps).
inline double log_row_residual(const Vector& a, const Vector& f, const Vector& g, const Matrix& M, double eps,
                               Vector& row_lse)
{
    const Index d = a.size();
    double residual = 0.0;
    Vector scratch(d);
    for (Index i = 0; i < d; ++i) {
        scratch = (g - M.row(i).transpose()) / eps;
        row_lse(i) = log_sum_exp(scratch);
        const double marginal = std::isinf(f(i)) ? 0.0 : std::exp(f(i) / eps + row_lse(i));
        residual = std::max(residual, std::abs(marginal - a(i)));
    }
    return residual;
}

// Log-domain Sinkhorn with gamma-scaling warm start. Potentials live in
// state.f/state.g; when `warm` is false they are reset and the
// regularization is annealed from the cost diameter down to gamma.
// Updates are over-relaxed (f <- f + w (f_sinkhorn - f)); a stage whose
// residual grows past its starting value restarts with plain updates.
inline void sinkhorn_log_domain(const Vector& a, const Vector& b, const Matrix& M, const SinkhornOptions& opt,
                                bool warm, LogState& state)
{
    constexpr double relaxation = 1.8;
    constexpr int stage_iterations = 1000;
    constexpr double stage_tolerance = 1e-5;

    const Index d = a.size();
    const Vector log_a = a.array().log();
    const Vector log_b = b.array().log();
    if (!warm) {
        state.f = Vector::Zero(d);
        state.g = Vector::Zero(d);
    }
    for (Index i = 0; i < d; ++i) {
        state.f(i) = a(i) > 0.0 ? (std::isfinite(state.f(i)) ? state.f(i) : 0.0) : neg_inf;
        state.g(i) = b(i) > 0.0 ? (std::isfinite(state.g(i)) ? state.g(i) : 0.0) : neg_inf;
    }
    const double diameter = M.maxCoeff();
    double eps = warm ? opt.gamma : std::max(opt.gamma, diameter);
    Vector row_lse(d);
    Vector scratch(d);
    state.iterations = 0;
    state.converged = false;
    for (;;) {
        const bool final_stage = eps <= opt.gamma;
        const double stage_tol = final_stage ? opt.tol : std::max(opt.tol, stage_tolerance);
        const int stage_cap = final_stage ? opt.max_iter - state.iterations
                                          : std::min(stage_iterations, opt.max_iter - state.iterations);
        const Vector f0 = state.f;
        const Vector g0 = state.g;
        double omega = relaxation;
        double start_residual = -1.0;
        for (int it = 0;; ++it) {
            state.residual = log_row_residual(a, state.f, state.g, M, eps, row_lse);
            if (start_residual < 0.0) {
                start_residual = state.residual;
            }
            if (it > 0 && state.residual <= stage_tol && final_stage && omega != 1.0) {
                // relaxed columns are inexact; finish with a plain column update
                for (Index j = 0; j < d; ++j) {
                    if (b(j) <= 0.0) continue;
                    scratch = (state.f - M.col(j)) / eps;
                    state.g(j) = eps * (log_b(j) - log_sum_exp(scratch));
                }
                state.residual = log_row_residual(a, state.f, state.g, M, eps, row_lse);
            }
            if (it > 0 && state.residual <= stage_tol) {
                if (final_stage) state.converged = true;
                break;
            }
            if (it >= stage_cap) {
                break;
            }
            if (omega > 1.0 && !(state.residual <= start_residual)) {
                omega = 1.0;
                state.f = f0;
                state.g = g0;
                state.residual = log_row_residual(a, state.f, state.g, M, eps, row_lse);
            }
            for (Index i = 0; i < d; ++i) {
                if (a(i) > 0.0) {
                    state.f(i) += omega * (eps * (log_a(i) - row_lse(i)) - state.f(i));
                }
            }
            for (Index j = 0; j < d; ++j) {
                if (b(j) <= 0.0) continue;
                scratch = (state.f - M.col(j)) / eps;
                state.g(j) += omega * (eps * (log_b(j) - log_sum_exp(scratch)) - state.g(j));
            }
            ++state.iterations;
            for (Index i = 0; i < d; ++i) {
                if ((a(i) > 0.0 && !std::isfinite(state.f(i))) || (b(i) > 0.0 && !std::isfinite(state.g(i)))) {
                    throw numerical_error("sinkhorn: potentials left the floating-point range; gamma too small");
                }
            }
        }
        if (final_stage) {
            break;
        }
        if (state.iterations >= opt.max_iter) {
            // budget spent while annealing; report against the target gamma
            state.residual = log_row_residual(a, state.f, state.g, M, opt.gamma, row_lse);
            break;
        }
        eps = std::max(opt.gamma, eps * 0.5);
    }
}

// Potential shifted to zero mean over its finite entries; non-finite entries
// become 0. Scalings absorb the constant, so the plan is unchanged.
inline Vector centred_potential(const Eigen::Ref<const Vector>& g)
{
    double sum = 0.0;
    Index count = 0;
    for (Index i = 0; i < g.size(); ++i) {
        if (std::isfinite(g(i))) {
            sum += g(i);
            ++count;
        }
    }
    const double mean = count ? sum / static_cast<double>(count) : 0.0;
    Vector out(g.size());
    for (Index i = 0; i < g.size(); ++i) out(i) = std::isfinite(g(i)) ? g(i) - mean : 0.0;
    return out;
}

// Sinkhorn on the stabilized kernel exp((f_i + g_j - M_ij) / eps). The
// scalings u, v are folded into the potentials whenever they leave
// [scaling_floor, scaling_ceil], so each iteration is two matrix-vector
// products. Stages anneal eps from the cost diameter (cold) or start at gamma
// (warm); updates are over-relaxed as in `sinkhorn_log_domain`. Returns false
// when a kernel row or column carrying mass underflows to zero.
inline bool sinkhorn_stabilized(const Vector& a, const Vector& b, const Matrix& M, const SinkhornOptions& opt,
                                bool warm, LogState& state)
{
    constexpr double relaxation = 1.8;
    constexpr int stage_iterations = 1000;
    constexpr double stage_tolerance = 1e-5;

    const Index d = a.size();
    const double diameter = M.maxCoeff();
    double eps = warm ? opt.gamma : std::max(opt.gamma, diameter);
    if (!warm) {
        state.f = Vector::Zero(d);
        state.g = Vector::Zero(d);
    }
    for (Index i = 0; i < d; ++i) {
        if (!(b(i) > 0.0)) state.g(i) = neg_inf;
        else if (!std::isfinite(state.g(i))) state.g(i) = 0.0;
    }
    // f from one exact row update, so the first kernel is balanced
    Vector scratch(d);
    for (Index i = 0; i < d; ++i) {
        if (a(i) > 0.0) {
            scratch = (state.g - M.row(i).transpose()) / eps;
            state.f(i) = eps * (std::log(a(i)) - log_sum_exp(scratch));
            if (!std::isfinite(state.f(i))) return false;
        } else {
            state.f(i) = neg_inf;
        }
    }

    Matrix kernel(d, d);
    Vector u(d), v(d), Kv(d), Ktu(d);
    auto rebuild = [&] {
        for (Index j = 0; j < d; ++j) {
            for (Index i = 0; i < d; ++i) {
                const double e = state.f(i) + state.g(j) - M(i, j);
                kernel(i, j) = std::isinf(e) ? 0.0 : std::exp(e / eps);
            }
        }
        u = (a.array() > 0.0).cast<double>();
        v = (b.array() > 0.0).cast<double>();
    };
    auto absorb = [&] {
        for (Index i = 0; i < d; ++i) {
            if (a(i) > 0.0) state.f(i) += eps * std::log(u(i));
            if (b(i) > 0.0) state.g(i) += eps * std::log(v(i));
        }
    };
    auto in_range = [](const Vector& s, const Vector& mass) {
        for (Index i = 0; i < s.size(); ++i) {
            if (mass(i) > 0.0 && !(s(i) >= scaling_floor && s(i) <= scaling_ceil)) return false;
        }
        return true;
    };

    state.iterations = 0;
    state.converged = false;
    for (;;) {
        const bool final_stage = eps <= opt.gamma;
        const double stage_tol = final_stage ? opt.tol : std::max(opt.tol, stage_tolerance);
        const int stage_cap = final_stage ? opt.max_iter - state.iterations
                                          : std::min(stage_iterations, opt.max_iter - state.iterations);
        const Vector f0 = state.f;
        const Vector g0 = state.g;
        double omega = relaxation;
        double start_residual = -1.0;
        rebuild();
        for (int it = 0;; ++it) {
            Kv.noalias() = kernel * v;
            state.residual = (u.cwiseProduct(Kv) - a).cwiseAbs().maxCoeff();
            if (start_residual < 0.0) start_residual = state.residual;
            if (it > 0 && state.residual <= stage_tol && final_stage && omega != 1.0) {
                // relaxed columns are inexact; finish with a plain column update
                Ktu.noalias() = kernel.transpose() * u;
                for (Index j = 0; j < d; ++j) {
                    if (b(j) > 0.0 && Ktu(j) > 0.0) v(j) = b(j) / Ktu(j);
                }
                Kv.noalias() = kernel * v;
                state.residual = (u.cwiseProduct(Kv) - a).cwiseAbs().maxCoeff();
            }
            if (it > 0 && state.residual <= stage_tol) {
                if (final_stage) state.converged = true;
                break;
            }
            if (it >= stage_cap) break;
            if (omega > 1.0 && !(state.residual <= start_residual)) {
                omega = 1.0;
                state.f = f0;
                state.g = g0;
                rebuild();
                Kv.noalias() = kernel * v;
            }
            for (Index i = 0; i < d; ++i) {
                if (!(a(i) > 0.0)) continue;
                if (!(Kv(i) > 0.0)) return false;
                const double target = a(i) / Kv(i);
                u(i) = omega == 1.0 ? target : std::exp((1.0 - omega) * std::log(u(i)) + omega * std::log(target));
            }
            Ktu.noalias() = kernel.transpose() * u;
            for (Index j = 0; j < d; ++j) {
                if (!(b(j) > 0.0)) continue;
                if (!(Ktu(j) > 0.0)) return false;
                const double target = b(j) / Ktu(j);
                v(j) = omega == 1.0 ? target : std::exp((1.0 - omega) * std::log(v(j)) + omega * std::log(target));
            }
            ++state.iterations;
            if (!in_range(u, a) || !in_range(v, b)) {
                absorb();
                if (!state.f.allFinite() && (state.f.array() > neg_inf).any()) {
                    for (Index i = 0; i < d; ++i) {
                        if (a(i) > 0.0 && !std::isfinite(state.f(i))) return false;
                    }
                }
                for (Index j = 0; j < d; ++j) {
                    if (b(j) > 0.0 && !std::isfinite(state.g(j))) return false;
                }
                rebuild();
            }
        }
        absorb();
        if (final_stage) break;
        if (state.iterations >= opt.max_iter) {
            Vector row_lse(d);
            state.residual = log_row_residual(a, state.f, state.g, M, opt.gamma, row_lse);
            break;
        }
        eps = std::max(opt.gamma, eps * 0.5);
    }
    for (Index i = 0; i < d; ++i) {
        if ((a(i) > 0.0 && !std::isfinite(state.f(i))) || (b(i) > 0.0 && !std::isfinite(state.g(i)))) return false;
    }
    return true;
}

// Soft c-transform used as the dual on zero-mass bins:
// -gamma log sum_j exp((other_j - M_ij) / gamma), along rows (row = true) or columns.
inline double soft_c_transform(const Vector& other, const Matrix& M, Index i, double gamma, bool row)
{
    Vector v = row ? Vector((other - M.row(i).transpose()) / gamma) : Vector((other - M.col(i)) / gamma);
    return -gamma * log_sum_exp(v);
}

// Fills duals (gauge mean(alpha) = 0), costs and marginal residual for column c.
inline void finalize_column(const Vector& a, const Vector& b, const GroundCost& cost, TransportBatch& out, Index c)
{
    const double gamma = out.gamma;
    const Index d = a.size();
    const Vector f = out.potential_a.col(c);
    const Vector g = out.potential_b.col(c);
    Vector alpha(d), beta(d);
    for (Index i = 0; i < d; ++i) {
        alpha(i) = a(i) > 0.0 ? -f(i) : -soft_c_transform(g, cost.M, i, gamma, true);
        beta(i) = b(i) > 0.0 ? -g(i) : -soft_c_transform(f, cost.M, i, gamma, false);
    }
    const double shift = alpha.mean();
    out.alpha.col(c) = alpha.array() - shift;
    out.beta.col(c) = beta.array() + shift;

    double transport = 0.0;
    double mass = 0.0;
    Vector rows = Vector::Zero(d);
    Vector cols = Vector::Zero(d);
    for (Index j = 0; j < d; ++j) {
        if (std::isinf(g(j))) continue;
        for (Index i = 0; i < d; ++i) {
            if (std::isinf(f(i))) continue;
            const double p = std::exp((f(i) + g(j) - cost.M(i, j)) / gamma);
            transport += p * cost.M(i, j);
            rows(i) += p;
            cols(j) += p;
            mass += p;
        }
    }
    // Dual value <f, a> + <g, b> - gamma * mass: equal to the primal
    // objective at convergence, with error quadratic in the marginal residual.
    double potential_term = 0.0;
    for (Index i = 0; i < d; ++i) {
        if (a(i) > 0.0) potential_term += f(i) * a(i);
        if (b(i) > 0.0) potential_term += g(i) * b(i);
    }
    out.transport_cost(c) = transport;
    out.regularized_objective(c) = potential_term - gamma * mass;
    out.marginal_residual(c) = std::max((rows - a).cwiseAbs().maxCoeff(), (cols - b).cwiseAbs().maxCoeff());
}

} // namespace detail

/// Solves the entropic transport problem for every column pair (A.col(c),
/// B.col(c)). `warm_potential_b`, when given, seeds g from a previous solve.
/// Columns whose scalings leave [1e-30, 1e30], or any problem whose kernel
/// would underflow, are solved in the log domain.
inline TransportBatch sinkhorn_batch(const Matrix& A, const Matrix& B, const GroundCost& cost,
                                     const SinkhornOptions& opt, const Matrix* warm_potential_b = nullptr)
{
    const Index d = cost.size();
    const Index n = A.cols();
    if (!(opt.gamma > 0.0) || !std::isfinite(opt.gamma)) {
        throw invalid_argument_error("sinkhorn: gamma must be positive and finite");
    }
    if (!(opt.tol > 0.0) || opt.max_iter < 1) {
        throw invalid_argument_error("sinkhorn: tol must be positive and max_iter >= 1");
    }
    if (opt.gamma < std::numeric_limits<double>::min()) {
        throw numerical_error("sinkhorn: gamma is subnormal; the kernel cannot be represented");
    }
    if (A.rows() != d || B.rows() != d || B.cols() != n) {
        throw invalid_argument_error("sinkhorn: histogram dimensions do not match the ground cost");
    }
    for (Index c = 0; c < n; ++c) {
        validate_histogram(A.col(c), "sinkhorn: a");
        validate_histogram(B.col(c), "sinkhorn: b");
    }
    if (warm_potential_b && (warm_potential_b->rows() != d || warm_potential_b->cols() != n)) {
        throw invalid_argument_error("sinkhorn: warm start has the wrong shape");
    }

    TransportBatch out;
    out.gamma = opt.gamma;
    out.potential_a = Matrix::Zero(d, n);
    out.potential_b = Matrix::Zero(d, n);
    out.alpha = Matrix::Zero(d, n);
    out.beta = Matrix::Zero(d, n);
    out.transport_cost = Vector::Zero(n);
    out.regularized_objective = Vector::Zero(n);
    out.marginal_residual = Vector::Zero(n);
    out.iterations.assign(static_cast<std::size_t>(n), 0);
    out.converged.assign(static_cast<std::size_t>(n), 0);
    out.log_domain.assign(static_cast<std::size_t>(n), 0);

    const bool kernel_underflows = cost.max_cost() / opt.gamma > detail::max_kernel_exponent;
    std::vector<Index> fallback;
    // g at the moment a column left the standard domain
    Matrix handoff = Matrix::Zero(d, n);
    std::vector<char> has_handoff(static_cast<std::size_t>(n), 0);

    if (kernel_underflows) {
        for (Index c = 0; c < n; ++c) fallback.push_back(c);
    } else {
        const Matrix K = (-cost.M / opt.gamma).array().exp().matrix();
        Matrix U = Matrix::Ones(d, n);
        Matrix V = Matrix::Ones(d, n);
        if (warm_potential_b) {
            for (Index c = 0; c < n; ++c) {
                const Vector g = detail::centred_potential(warm_potential_b->col(c));
                V.col(c) = (g / opt.gamma).array().exp().matrix();
            }
        }
        const int standard_budget = std::min(opt.max_iter, detail::standard_iterations);
        std::vector<Index> active(static_cast<std::size_t>(n));
        for (Index c = 0; c < n; ++c) active[static_cast<std::size_t>(c)] = c;

        for (int it = 0; !active.empty(); ++it) {
            const Matrix V_act = V(Eigen::all, active);
            const Matrix KV = K * V_act;
            std::vector<Index> still;
            for (std::size_t p = 0; p < active.size(); ++p) {
                const Index c = active[p];
                const auto sc = static_cast<std::size_t>(c);
                if (it > 0) {
                    const double res = (U.col(c).cwiseProduct(KV.col(static_cast<Index>(p))) - A.col(c))
                                           .cwiseAbs()
                                           .maxCoeff();
                    out.marginal_residual(c) = res;
                    if (res <= opt.tol) {
                        out.converged[sc] = 1;
                        continue;
                    }
                    if (it >= standard_budget) {
                        // slow plain iterations; continue with the relaxed solver
                        fallback.push_back(c);
                        handoff.col(c) = (opt.gamma * V.col(c).array().log()).matrix();
                        has_handoff[sc] = 1;
                        continue;
                    }
                }
                bool in_range = true;
                for (Index i = 0; i < d; ++i) {
                    if (A(i, c) > 0.0) {
                        const double u = A(i, c) / KV(i, static_cast<Index>(p));
                        if (!(u >= detail::scaling_floor && u <= detail::scaling_ceil)) in_range = false;
                        U(i, c) = u;
                    } else {
                        U(i, c) = 0.0; // 0/0 = 0
                    }
                }
                if (!in_range) {
                    fallback.push_back(c);
                    handoff.col(c) = (opt.gamma * V.col(c).array().log()).matrix();
                    has_handoff[sc] = 1;
                    continue;
                }
                still.push_back(c);
            }
            if (still.empty()) break;
            const Matrix KtU = K.transpose() * U(Eigen::all, still);
            for (std::size_t p = 0; p < still.size(); ++p) {
                const Index c = still[p];
                bool in_range = true;
                const Vector v_prev = V.col(c);
                for (Index j = 0; j < d; ++j) {
                    if (B(j, c) > 0.0) {
                        const double v = B(j, c) / KtU(j, static_cast<Index>(p));
                        if (!(v >= detail::scaling_floor && v <= detail::scaling_ceil)) in_range = false;
                        V(j, c) = v;
                    } else {
                        V(j, c) = 0.0;
                    }
                }
                out.iterations[static_cast<std::size_t>(c)] = it + 1;
                if (!in_range) {
                    fallback.push_back(c);
                    handoff.col(c) = (opt.gamma * v_prev.array().log()).matrix();
                    has_handoff[static_cast<std::size_t>(c)] = 1;
                }
            }
            std::vector<Index> next;
            for (Index c : still) {
                if (std::find(fallback.begin(), fallback.end(), c) == fallback.end()) next.push_back(c);
            }
            active = std::move(next);
        }
        // potentials for the columns solved in the standard domain
        for (Index c = 0; c < n; ++c) {
            if (std::find(fallback.begin(), fallback.end(), c) != fallback.end()) continue;
            for (Index i = 0; i < d; ++i) {
                out.potential_a(i, c) = A(i, c) > 0.0 ? opt.gamma * std::log(U(i, c)) : detail::neg_inf;
                out.potential_b(i, c) = B(i, c) > 0.0 ? opt.gamma * std::log(V(i, c)) : detail::neg_inf;
            }
        }
    }

    for (Index c : fallback) {
        const auto sc = static_cast<std::size_t>(c);
        detail::LogState state;
        const Vector a = A.col(c);
        const Vector b = B.col(c);
        const bool warm = has_handoff[sc] || warm_potential_b != nullptr;
        if (warm) {
            state.f = Vector::Zero(d);
            state.g = has_handoff[sc] ? Vector(handoff.col(c)) : detail::centred_potential(warm_potential_b->col(c));
            for (Index j = 0; j < d; ++j) {
                if (!std::isfinite(state.g(j))) state.g(j) = 0.0;
            }
        }
        bool ok = detail::sinkhorn_stabilized(a, b, cost.M, opt, warm, state);
        out.iterations[sc] += state.iterations;
        if (warm && !(ok && state.converged)) {
            // the warm start was too far off; anneal from scratch
            ok = detail::sinkhorn_stabilized(a, b, cost.M, opt, false, state);
            out.iterations[sc] += state.iterations;
        }
        if (!ok) {
            // the stabilized kernel underflowed: pure log-sum-exp updates
            detail::sinkhorn_log_domain(a, b, cost.M, opt, false, state);
            out.iterations[sc] += state.iterations;
        }
        out.potential_a.col(c) = state.f;
        out.potential_b.col(c) = state.g;
        out.converged[sc] = state.converged ? 1 : 0;
        out.log_domain[sc] = 1;
    }

    for (Index c = 0; c < n; ++c) {
        detail::finalize_column(A.col(c), B.col(c), cost, out, c);
        if (!out.alpha.col(c).allFinite() || !out.beta.col(c).allFinite()) {
            throw numerical_error("sinkhorn: non-finite duals", "column " + std::to_string(c));
        }
    }
    return out;
}

/// Entropic transport between histograms a and b:
/// plan = diag(u) K diag(v) with marginals (a, b) within `tol`.
inline TransportResult sinkhorn(const Vector& a, const Vector& b, const GroundCost& cost, double gamma,
                                double tol = 1e-6, int max_iter = 10000)
{
    const TransportBatch batch = sinkhorn_batch(a, b, cost, SinkhornOptions{gamma, tol, max_iter});
    TransportResult r;
    r.plan = batch.plan(0, cost);
    r.alpha = batch.alpha.col(0);
    r.beta = batch.beta.col(0);
    r.iterations = batch.iterations[0];
    r.marginal_residual = batch.marginal_residual(0);
    r.converged = batch.converged[0] != 0;
    r.log_domain = batch.log_domain[0] != 0;
    return r;
}

struct EntropicCost {
    double transport_cost = 0.0;
    double regularized_objective = 0.0;
};

/// <P, M> and <P, M> + gamma * sum(P log P - P), with 0 log 0 = 0.
inline EntropicCost entropic_cost(const Matrix& plan, const GroundCost& cost, double gamma)
{
    if (plan.rows() != cost.size() || plan.cols() != cost.size()) {
        throw invalid_argument_error("entropic_cost: plan dimensions do not match the ground cost");
    }
    EntropicCost out;
    double entropy = 0.0;
    for (Index j = 0; j < plan.cols(); ++j) {
        for (Index i = 0; i < plan.rows(); ++i) {
            const double p = plan(i, j);
            out.transport_cost += p * cost.M(i, j);
            if (p > 0.0) entropy += p * std::log(p) - p;
        }
    }
    out.regularized_objective = out.transport_cost + gamma * entropy;
    return out;
}

inline EntropicCost entropic_cost(const TransportResult& result, const GroundCost& cost, double gamma)
{
    return entropic_cost(result.plan, cost, gamma);
}

/// Exact unregularized W1 on the line: sum_i |CDF_a(i) - CDF_b(i)| * (x_{i+1} - x_i).
inline double wasserstein_1d_exact(const Vector& a, const Vector& b, std::span<const double> positions)
{
    const auto d = static_cast<Index>(positions.size());
    if (a.size() != d || b.size() != d) {
        throw invalid_argument_error("wasserstein_1d_exact: length mismatch");
    }
    for (Index i = 1; i < d; ++i) {
        if (!(positions[static_cast<std::size_t>(i)] > positions[static_cast<std::size_t>(i - 1)])) {
            throw invalid_argument_error("wasserstein_1d_exact: positions must be strictly increasing");
        }
    }
    validate_histogram(a, "wasserstein_1d_exact: a");
    validate_histogram(b, "wasserstein_1d_exact: b");
    double cdf_a = 0.0;
    double cdf_b = 0.0;
    double total = 0.0;
    for (Index i = 0; i + 1 < d; ++i) {
        cdf_a += a(i);
        cdf_b += b(i);
        const auto s = static_cast<std::size_t>(i);
        total += std::abs(cdf_a - cdf_b) * (positions[s + 1] - positions[s]);
    }
    return total;
}

/// Transports `column` (mass on the plan's source bins) through the
/// row-normalized plan: out_j = sum_i column_i * plan_ij / sum_k plan_ik.
/// Mass on a source bin whose plan row is empty stays in place.
inline Vector push_forward(const Matrix& plan, const Vector& column)
{
    if (plan.rows() != column.size() || plan.cols() != column.size()) {
        throw invalid_argument_error("push_forward: plan and column dimensions differ");
    }
    if (!column.allFinite() || (column.size() && column.minCoeff() < 0.0)) {
        throw invalid_argument_error("push_forward: column must be finite and non-negative");
    }
    if (column.sum() <= 0.0) {
        throw invalid_argument_error("push_forward: zero-mass column");
    }
    const Vector row_mass = plan.rowwise().sum();
    Vector out = Vector::Zero(column.size());
    for (Index i = 0; i < plan.rows(); ++i) {
        if (column(i) == 0.0) continue;
        if (row_mass(i) <= 0.0) {
            out(i) += column(i);
            continue;
        }
        out += (column(i) / row_mass(i)) * plan.row(i).transpose();
    }
    return out;
}

} // namespace otmotion

#endif // OTMOTION_OT_CORE_HPP
