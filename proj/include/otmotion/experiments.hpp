#ifndef OTMOTION_EXPERIMENTS_HPP
#define OTMOTION_EXPERIMENTS_HPP

// Multi-seed comparison of NMF, WNMF and TWNMF on the electrode drift
// simulation.
//
// Spatial scores: NMF footprints are its static dictionary columns; WNMF and
// TWNMF footprints are their tracks (frame plans pushed onto the data).
// Temporal scores: rows of the coefficient matrix against the true traces.

#include "evaluation.hpp"
#include "factorization.hpp"
#include "log.hpp"
#include "ot_core.hpp"
#include "parallel.hpp"
#include "simulators.hpp"
#include "types.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace otmotion {

enum class Method { nmf, wnmf, twnmf };

inline std::string_view method_name(Method m)
{
    switch (m) {
    case Method::nmf: return "nmf";
    case Method::wnmf: return "wnmf";
    case Method::twnmf: return "twnmf";
    }
    return "?";
}

inline std::optional<Method> parse_method(std::string_view s)
{
    if (s == "nmf") return Method::nmf;
    if (s == "wnmf") return Method::wnmf;
    if (s == "twnmf") return Method::twnmf;
    return std::nullopt;
}

struct SweepConfig {
    DriftParams simulation;
    TwnmfConfig fit;     ///< shared by WNMF (forced to L = 1, lambda_T = 0) and TWNMF
    int nmf_iters = 500;
    std::vector<Seed> seeds;
    std::vector<Method> methods{Method::nmf, Method::wnmf, Method::twnmf};
    std::size_t jobs = 1; ///< concurrent runs
};

/// Settings used for the method comparison on the drift simulation.
inline SweepConfig table_protocol()
{
    SweepConfig c;
    c.fit.K = 5;
    c.fit.L = 10;
    c.fit.gamma = 2.0;
    c.fit.lambda_T = 0.1;
    c.fit.outer_iters = 70;
    c.fit.warmup_iters = 40;
    c.fit.sinkhorn_tol = 1e-5;
    c.fit.step_growth = 1.2;
    c.nmf_iters = 500;
    return c;
}

/// One method on one simulated seed.
struct RunOutcome {
    Method method = Method::nmf;
    Seed seed = 0;
    MatchResult match;
    double seconds = 0.0;
};

struct MethodSummary {
    Method method = Method::nmf;
    std::vector<RunOutcome> runs;
    Score spatial_components; ///< mean and std over every (seed, component) score
    Score temporal_components;
    Score spatial_seeds; ///< mean and std of the per-seed means
    Score temporal_seeds;
};

inline TwnmfConfig method_config(Method m, const TwnmfConfig& base, Seed seed)
{
    TwnmfConfig c = base;
    c.seed = seed;
    if (m == Method::wnmf) {
        c.L = 1;
        c.lambda_T = 0.0;
    }
    return c;
}

/// Footprints scored for a transport fit: the tracks of its final plans.
inline std::vector<Matrix> fit_footprints(const TwnmfResult& r, const GroundCost& cost)
{
    return extract_tracks(r.factors, r.frame_plans, cost);
}

inline RunOutcome score_transport_fit(Method m, const TwnmfResult& r, const SimulationTruth& truth,
                                      const GroundCost& cost, Seed seed, double seconds)
{
    RunOutcome out;
    out.method = m;
    out.seed = seed;
    out.match = match_components(fit_footprints(r, cost), truth);
    temporal_accuracy(out.match, r.factors.coefficient_matrix(), truth.true_traces);
    out.seconds = seconds;
    return out;
}

inline RunOutcome run_method(Method m, const SimulationTruth& truth, const GroundCost& cost, const SweepConfig& cfg,
                             Seed seed)
{
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    if (m == Method::nmf) {
        RunOutcome out;
        out.method = m;
        out.seed = seed;
        const NmfResult r = nmf_fit(truth.data, cfg.fit.K, cfg.nmf_iters, seed);
        out.match = match_components(tile_footprints(r.D, truth.data.length()), truth);
        temporal_accuracy(out.match, r.C, truth.true_traces);
        out.seconds = elapsed();
        return out;
    }
    const TwnmfResult r = twnmf_fit(truth.data, cost, method_config(m, cfg.fit, seed));
    return score_transport_fit(m, r, truth, cost, seed, elapsed());
}

inline MethodSummary summarize_runs(Method m, std::vector<RunOutcome> runs)
{
    MethodSummary s;
    s.method = m;
    Index pooled = 0;
    for (const auto& r : runs) pooled += r.match.spatial_scores.size();
    Vector sp(pooled), tp(pooled);
    Vector sp_seed(static_cast<Index>(runs.size())), tp_seed(static_cast<Index>(runs.size()));
    Index at = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const MatchResult& mr = runs[i].match;
        const Index K = mr.spatial_scores.size();
        sp.segment(at, K) = mr.spatial_scores;
        tp.segment(at, K) = mr.temporal_scores;
        at += K;
        sp_seed(static_cast<Index>(i)) = mr.spatial_scores.mean();
        tp_seed(static_cast<Index>(i)) = mr.temporal_scores.mean();
    }
    s.spatial_components = summarize(sp);
    s.temporal_components = summarize(tp);
    s.spatial_seeds = summarize(sp_seed);
    s.temporal_seeds = summarize(tp_seed);
    s.runs = std::move(runs);
    return s;
}

/// Runs every (method, seed) pair; simulation seed and fit seed coincide.
/// When both WNMF and TWNMF are requested they share the single-block
/// warm-up (`wnmf_twnmf_fit`); each is then timed as half the joint run.
inline std::vector<MethodSummary> run_sweep(const SweepConfig& cfg)
{
    if (cfg.seeds.empty()) throw invalid_argument_error("run_sweep: no seeds");
    const std::size_t n_seeds = cfg.seeds.size();
    std::vector<SimulationTruth> truths(n_seeds);
    std::vector<GroundCost> costs(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) {
        DriftParams p = cfg.simulation;
        p.seed = cfg.seeds[s];
        truths[s] = simulate_electrode_drift(p);
        costs[s] = build_ground_cost(truths[s].data.coords);
    }
    const auto has = [&](Method m) { return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end(); };
    const bool paired = has(Method::wnmf) && has(Method::twnmf);

    struct Job {
        Method method;
        std::size_t seed;
    };
    std::vector<Job> jobs;
    for (const Method m : cfg.methods) {
        if (paired && m == Method::twnmf) continue;
        for (std::size_t s = 0; s < n_seeds; ++s) jobs.push_back({m, s});
    }
    std::map<std::pair<Method, std::size_t>, RunOutcome> outcomes;
    std::mutex lock;
    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) {
        const Job& job = jobs[i];
        const Seed seed = cfg.seeds[job.seed];
        const SimulationTruth& truth = truths[job.seed];
        const GroundCost& cost = costs[job.seed];
        std::vector<RunOutcome> done;
        if (paired && job.method == Method::wnmf) {
            const auto t0 = std::chrono::steady_clock::now();
            TwnmfConfig c = cfg.fit;
            c.seed = seed;
            const auto [w, t] = wnmf_twnmf_fit(truth.data, cost, c);
            const double half = 0.5 * std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            done.push_back(score_transport_fit(Method::wnmf, w, truth, cost, seed, half));
            done.push_back(score_transport_fit(Method::twnmf, t, truth, cost, seed, half));
        } else {
            done.push_back(run_method(job.method, truth, cost, cfg, seed));
        }
        const std::scoped_lock guard(lock);
        for (RunOutcome& o : done) {
            log::info("sweep: ", method_name(o.method), " seed ", o.seed, " spatial ", o.match.spatial_scores.mean(),
                      " temporal ", o.match.temporal_scores.mean(), " (", o.seconds, " s)");
            outcomes[{o.method, job.seed}] = std::move(o);
        }
    });
    std::vector<MethodSummary> out;
    for (const Method m : cfg.methods) {
        std::vector<RunOutcome> runs;
        for (std::size_t s = 0; s < n_seeds; ++s) runs.push_back(std::move(outcomes.at({m, s})));
        out.push_back(summarize_runs(m, std::move(runs)));
    }
    return out;
}

} // namespace otmotion

#endif // OTMOTION_EXPERIMENTS_HPP
