// Acceptance checks. Usage: acceptance [--criterion N]; prints one
// "criterion N: PASS|FAIL ..." line per criterion run.

#include <otmotion/evaluation.hpp>
#include <otmotion/experiments.hpp>
#include <otmotion/factorization.hpp>
#include <otmotion/io.hpp>
#include <otmotion/mp_reduce.hpp>
#include <otmotion/ot_core.hpp>
#include <otmotion/simulators.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace otmotion;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

Vector random_histogram(Index d, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector h(d);
    for (Index i = 0; i < d; ++i) h(i) = u(rng);
    return h / h.sum();
}

double max_marginal_residual(const Matrix& plan, const Vector& a, const Vector& b)
{
    const double ra = (plan.rowwise().sum() - a).cwiseAbs().maxCoeff();
    const double rb = (plan.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
    return std::max(ra, rb);
}

// ---- 1: worked example ----
Outcome worked_example()
{
    const auto t0 = Clock::now();
    Matrix M(3, 3);
    M << 0, 1, 2, 1, 0, 1, 2, 1, 0;
    GroundCost cost;
    cost.M = M;
    cost.coords = line_coords(3);
    Vector a(3), b(3), c(3);
    a << 1, 0, 0;
    b << 0, 1, 0;
    c << 0, 0, 1;
    const TransportResult ab = sinkhorn(a, b, cost, 1e-3);
    const TransportResult ac = sinkhorn(a, c, cost, 1e-3);
    const double wab = ab.plan.cwiseProduct(M).sum();
    const double wac = ac.plan.cwiseProduct(M).sum();
    const double secs = seconds_since(t0);
    const bool ok = std::abs(wab - 1.0) <= 1e-2 && std::abs(wac - 2.0) <= 1e-2 && secs < 1.0;
    return {ok, "W(a,b) = " + fmt("%.6f", wab) + ", W(a,c) = " + fmt("%.6f", wac) + ", " + fmt("%.3f", secs) + " s"};
}

// ---- 2: marginal feasibility ----
Outcome marginal_feasibility()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    const Index d = 50;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Coords coords(d, 2);
    for (Index i = 0; i < d; ++i) coords.row(i) << 10.0 * u(rng), 10.0 * u(rng);
    const GroundCost cost = build_ground_cost(coords);
    double worst = 0.0;
    int converged = 0;
    for (double gamma : {0.01, 0.1, 1.0}) {
        for (int pair = 0; pair < 100; ++pair) {
            const Vector a = random_histogram(d, rng);
            const Vector b = random_histogram(d, rng);
            const TransportResult r = sinkhorn(a, b, cost, gamma);
            if (!r.converged) continue;
            ++converged;
            worst = std::max(worst, max_marginal_residual(r.plan, a, b));
        }
    }
    const double secs = seconds_since(t0);
    // unconverged solves are flagged by the solver and excluded
    const bool ok = converged > 0 && worst <= 1e-6 && secs < 10.0;
    return {ok, std::to_string(converged) + "/300 converged, max residual " + fmt("%.3e", worst) + ", " +
                    fmt("%.2f", secs) + " s"};
}

// ---- 3: 1D oracle ----
// W1 on a line is the integral of |F_a - F_b|; brute force over sorted positions.
double cdf_oracle(const Vector& a, const Vector& b, const std::vector<double>& x)
{
    double w = 0.0, fa = 0.0, fb = 0.0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        fa += a(static_cast<Index>(i));
        fb += b(static_cast<Index>(i));
        w += std::abs(fa - fb) * (x[i + 1] - x[i]);
    }
    return w;
}

Outcome line_oracle()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Index d = 16;
    std::vector<double> x(static_cast<std::size_t>(d));
    double at = 0.0;
    for (auto& xi : x) xi = (at += 0.5 + u(rng));
    Coords coords(d, 1);
    for (Index i = 0; i < d; ++i) coords(i, 0) = x[static_cast<std::size_t>(i)];
    const GroundCost cost = build_ground_cost(coords);
    double worst = 0.0;
    for (int pair = 0; pair < 50; ++pair) {
        const Vector a = random_histogram(d, rng);
        const Vector b = random_histogram(d, rng);
        const TransportResult r = sinkhorn(a, b, cost, 1e-3);
        worst = std::max(worst, std::abs(r.plan.cwiseProduct(cost.M).sum() - cdf_oracle(a, b, x)));
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-2 && secs < 10.0, "max |<pi,M> - W1| = " + fmt("%.3e", worst) + ", " + fmt("%.2f", secs) + " s"};
}

// ---- 4: gradient check ----
Matrix tangent(Index rows, Index cols, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
    return m.rowwise() - m.colwise().mean();
}

Outcome gradient_check()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Index d = 6, K = 2, T = 4, L = 2;
    double worst = 0.0;
    for (int inst = 0; inst < 10; ++inst) {
        Coords coords(d, 1);
        for (Index i = 0; i < d; ++i) coords(i, 0) = 3.0 * u(rng);
        const GroundCost cost = build_ground_cost(coords);
        Matrix X(d, T);
        for (Index t = 0; t < T; ++t) X.col(t) = random_histogram(d, rng);
        const HistogramSeries series{X, coords};

        TwnmfConfig cfg;
        cfg.K = K;
        cfg.L = L;
        cfg.gamma = 0.3 + u(rng);
        cfg.lambda_T = 0.5 + u(rng);
        cfg.lambda_D = 0.1 * u(rng);
        cfg.lambda_C = 0.1 * u(rng);
        cfg.sinkhorn_tol = 1e-13;
        cfg.sinkhorn_max_iter = 200000;
        cfg.mass_floor = 0.0;

        BlockFactorization f = random_factorization(d, T, K, L, static_cast<Seed>(100 + inst));
        for (auto& D : f.dictionaries) D = ((D.array() + 0.2).rowwise() / (D.array() + 0.2).colwise().sum()).matrix();
        for (auto& C : f.coefficients) C = ((C.array() + 0.2).rowwise() / (C.array() + 0.2).colwise().sum()).matrix();

        const detail::Evaluation ev = detail::evaluate(series.frames, cost, f, cfg, nullptr);
        const Gradients g = twnmf_gradients(f, ev.duals, cfg);

        for (int dir = 0; dir < 3; ++dir) {
            BlockFactorization step = f;
            double analytic = 0.0;
            for (std::size_t l = 0; l < f.blocks.size(); ++l) {
                step.dictionaries[l] = tangent(d, K, rng);
                step.coefficients[l] = tangent(K, f.blocks[l].length, rng);
                analytic += g.dictionaries[l].cwiseProduct(step.dictionaries[l]).sum() +
                            g.coefficients[l].cwiseProduct(step.coefficients[l]).sum();
            }
            const double h = 1e-5;
            auto moved = [&](double s) {
                BlockFactorization m = f;
                for (std::size_t l = 0; l < f.blocks.size(); ++l) {
                    m.dictionaries[l] += s * step.dictionaries[l];
                    m.coefficients[l] += s * step.coefficients[l];
                }
                return objective_value(series, cost, m, cfg).total;
            };
            const double fd = (moved(h) - moved(-h)) / (2.0 * h);
            worst = std::max(worst, std::abs(fd - analytic) / std::max(std::abs(fd), 1e-8));
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-2 && secs < 60.0, "max relative error " + fmt("%.3e", worst) + ", " + fmt("%.1f", secs) + " s"};
}

// ---- 5: method comparison ----
Outcome method_comparison()
{
    const auto t0 = Clock::now();
    SweepConfig cfg = table_protocol();
    for (Seed s = 0; s < 10; ++s) cfg.seeds.push_back(s);
    const std::vector<MethodSummary> rows = run_sweep(cfg);
    const double secs = seconds_since(t0);
    const MethodSummary& nmf = rows[0];
    const MethodSummary& wnmf = rows[1];
    const MethodSummary& twnmf = rows[2];
    std::ostringstream s;
    for (const MethodSummary& r : rows) {
        s << method_name(r.method) << " spatial " << fmt("%.3f", r.spatial_components.mean) << " ± "
          << fmt("%.3f", r.spatial_components.std) << " temporal " << fmt("%.3f", r.temporal_components.mean)
          << " ± " << fmt("%.3f", r.temporal_components.std) << "; ";
    }
    const bool spatial_order = twnmf.spatial_components.mean > wnmf.spatial_components.mean &&
                               wnmf.spatial_components.mean > nmf.spatial_components.mean;
    const bool temporal_order = twnmf.temporal_components.mean > wnmf.temporal_components.mean &&
                                wnmf.temporal_components.mean > nmf.temporal_components.mean;
    const bool bands = twnmf.spatial_components.mean >= 0.70 && nmf.temporal_components.mean <= 0.35;
    s << "spatial order " << (spatial_order ? "ok" : "violated") << ", temporal order "
      << (temporal_order ? "ok" : "violated") << ", bands " << (bands ? "ok" : "violated") << ", "
      << fmt("%.0f", secs) << " s";
    return {spatial_order && temporal_order && bands && secs <= 900.0, s.str()};
}

// ---- 6: special case ----
Outcome special_case()
{
    const auto t0 = Clock::now();
    DriftParams p;
    const SimulationTruth truth = simulate_electrode_drift(p);
    const GroundCost cost = build_ground_cost(truth.data.coords);
    TwnmfConfig cfg = table_protocol().fit;
    cfg.L = 1;
    cfg.lambda_T = 0.0;
    cfg.outer_iters = 15;
    cfg.seed = 6;
    std::vector<BlockFactorization> a, b;
    twnmf_fit(truth.data, cost, cfg, FitHooks{nullptr, [&](int, const BlockFactorization& f, const FitRecord&) {
                                                  a.push_back(f);
                                              }});
    wnmf_fit(truth.data, cost, cfg, FitHooks{nullptr, [&](int, const BlockFactorization& f, const FitRecord&) {
                                                 b.push_back(f);
                                             }});
    double diff = a.size() == b.size() ? 0.0 : 1.0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        diff = std::max(diff, (a[i].dictionaries[0] - b[i].dictionaries[0]).cwiseAbs().maxCoeff());
        diff = std::max(diff, (a[i].coefficients[0] - b[i].coefficients[0]).cwiseAbs().maxCoeff());
    }
    const double secs = seconds_since(t0);
    return {diff == 0.0 && !a.empty() && secs < 60.0,
            std::to_string(a.size()) + " iterates, max abs difference " + fmt("%.3e", diff) + ", " +
                fmt("%.1f", secs) + " s"};
}

// ---- 7: factor invariants ----
Outcome factor_invariants()
{
    DriftParams p;
    const SimulationTruth truth = simulate_electrode_drift(p);
    const GroundCost cost = build_ground_cost(truth.data.coords);
    const TwnmfConfig cfg = table_protocol().fit;
    double worst_sum = 0.0, most_negative = 0.0;
    int iterations = 0;
    auto check = [&](const Matrix& m) {
        worst_sum = std::max(worst_sum, (m.colwise().sum().array() - 1.0).abs().maxCoeff());
        most_negative = std::min(most_negative, m.minCoeff());
    };
    const TwnmfResult r = twnmf_fit(truth.data, cost, cfg,
                                    FitHooks{nullptr, [&](int, const BlockFactorization& f, const FitRecord&) {
                                                 ++iterations;
                                                 for (const Matrix& D : f.dictionaries) check(D);
                                                 for (const Matrix& C : f.coefficients) check(C);
                                             }});
    const double initial = r.initial.total;
    const double final = r.trace.back().total;
    const bool ok = iterations == cfg.outer_iters && worst_sum <= 1e-6 && most_negative >= 0.0 && final < initial;
    return {ok, std::to_string(iterations) + " iterations, max |colsum - 1| " + fmt("%.2e", worst_sum) +
                    ", min entry " + fmt("%.2e", most_negative) + ", objective " + fmt("%.3f", initial) + " -> " +
                    fmt("%.3f", final)};
}

// ---- 8: track conservation ----
Outcome track_conservation()
{
    ParticleParams p;
    const SimulationTruth truth = simulate_particles_2d(p);
    const GroundCost cost = build_ground_cost(truth.data.coords);
    TwnmfConfig cfg = table_protocol().fit;
    cfg.outer_iters = 10;
    cfg.warmup_iters = 5;
    const TwnmfResult r = twnmf_fit(truth.data, cost, cfg);
    const std::vector<Matrix> tracks = extract_tracks(r.factors, r.frame_plans, cost);
    double worst = 0.0;
    for (Index t = 0; t < truth.data.length(); ++t) {
        const Vector marginal = r.frame_plans.plan(t, cost).rowwise().sum();
        Vector total = Vector::Zero(marginal.size());
        for (const Matrix& tr : tracks) total += tr.col(t);
        worst = std::max(worst, (total - marginal).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-6, "max per-bin deviation " + fmt("%.3e", worst) + " over " +
                               std::to_string(truth.data.length()) + " frames"};
}

// ---- 9: matching pursuit fidelity ----
Outcome reduction_fidelity()
{
    const auto t0 = Clock::now();
    const std::vector<Seed> seeds{0, 1, 2};
    double full_sum = 0.0, reduced_sum = 0.0;
    std::ostringstream s;
    for (const Seed seed : seeds) {
        ParticleParams p;
        p.seed = seed;
        const SimulationTruth truth = simulate_particles_2d(p);
        TwnmfConfig cfg = table_protocol().fit;
        cfg.seed = seed;

        const GroundCost cost = build_ground_cost(truth.data.coords);
        const TwnmfResult full = twnmf_fit(truth.data, cost, cfg);
        const double full_acc =
            spatial_accuracy(match_components(extract_tracks(full.factors, full.frame_plans, cost), truth)).mean;

        const ReducedSeries red = reduce_series(truth.data, 50, default_atom_sigma);
        const TwnmfResult small = twnmf_fit(red.data, red.cost, cfg);
        std::vector<Matrix> tracks = extract_tracks(small.factors, small.frame_plans, red.cost);
        for (Matrix& tr : tracks) tr = expand_to_bins(tr, red);
        const double red_acc = spatial_accuracy(match_components(tracks, truth)).mean;

        full_sum += full_acc;
        reduced_sum += red_acc;
        s << "seed " << seed << ": full " << fmt("%.3f", full_acc) << ", reduced " << fmt("%.3f", red_acc) << " ("
          << red.bins.size() << " bins); ";
    }
    const double n = static_cast<double>(seeds.size());
    const double drop = (full_sum - reduced_sum) / n;
    const double secs = seconds_since(t0);
    s << "mean drop " << fmt("%.3f", drop) << ", " << fmt("%.0f", secs) << " s";
    return {drop <= 0.1 && secs <= 600.0, s.str()};
}

// ---- 10: determinism and I/O ----
std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(OTMOTION_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism_io()
{
    const fs::path root = fs::temp_directory_path() / "otmotion_acceptance_10";
    fs::remove_all(root);
    const fs::path work = root / "run";
    const std::string w = work.string();
    const std::vector<std::string> commands{
        "simulate drift --bins 40 --frames 30 --components 3 --noise 0.01 --seed 11 --out " + w + "/sim",
        "simulate particles --grid 10x8 --frames 12 --components 2 --seed 11 --out " + w + "/sim2d",
        "fit nmf --data " + w + "/sim/data.csv --K 3 --nmf-iters 50 --seed 11 --out " + w + "/nmf",
        "fit wnmf --data " + w + "/sim/data.csv --K 3 --gamma 2 --iters 6 --seed 11 --out " + w + "/wnmf",
        "fit twnmf --data " + w + "/sim/data.csv --K 3 --L 3 --gamma 2 --lambda-T 0.1 --iters 6 --warmup 2 " +
            "--seed 11 --out " + w + "/twnmf",
        "eval --truth " + w + "/sim --fit " + w + "/twnmf",
        "tracks --fit " + w + "/twnmf",
        "reduce --data " + w + "/sim2d/data.csv --atoms 10 --out " + w + "/reduced",
    };
    std::vector<std::map<std::string, std::string>> snapshots;
    for (int rep = 0; rep < 2; ++rep) {
        fs::remove_all(work);
        for (const auto& c : commands) {
            if (run_cli(c) != 0) return {false, "command failed: " + c};
        }
        std::map<std::string, std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(work)) {
            if (!e.is_regular_file()) continue;
            std::string bytes = slurp(e.path());
            if (e.path().filename() == "manifest.json") {
                io::json j = io::json::parse(bytes);
                j.erase("duration_seconds");
                bytes = j.dump();
            }
            files[fs::relative(e.path(), work).string()] = std::move(bytes);
        }
        snapshots.push_back(std::move(files));
    }
    std::size_t differing = 0;
    for (const auto& [name, bytes] : snapshots[0]) {
        const auto it = snapshots[1].find(name);
        if (it == snapshots[1].end() || it->second != bytes) ++differing;
    }
    if (snapshots[0].size() != snapshots[1].size()) ++differing;

    // every written matrix parses and re-serializes to the same bytes and values
    std::size_t matrices = 0, broken = 0;
    for (const auto& e : fs::recursive_directory_iterator(work)) {
        if (e.path().extension() != ".csv" || e.path().filename() == "tracks_long.csv") continue;
        ++matrices;
        const Matrix m = io::read_csv(e.path());
        std::ostringstream again;
        io::write_csv(again, m);
        std::istringstream back(again.str());
        const Matrix m2 = io::read_csv(back);
        const bool same_values =
            m.size() == m2.size() && std::memcmp(m.data(), m2.data(), static_cast<std::size_t>(m.size()) * 8) == 0;
        if (again.str() != slurp(e.path()) || !same_values) ++broken;
    }
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    Matrix r(17, 9);
    for (Index j = 0; j < 9; ++j)
        for (Index i = 0; i < 17; ++i) r(i, j) = u(rng) * std::pow(10.0, static_cast<double>((i % 9) * 30 - 120));
    for (const char* name : {"random.csv", "random.bin"}) {
        ++matrices;
        io::write_matrix(root / name, r);
        const Matrix back = io::read_matrix(root / name);
        if (back.size() != r.size() ||
            std::memcmp(back.data(), r.data(), static_cast<std::size_t>(r.size()) * 8) != 0) {
            ++broken;
        }
    }
    return {differing == 0 && broken == 0 && matrices > 2,
            std::to_string(snapshots[0].size()) + " output files, " + std::to_string(differing) + " differ; " +
                std::to_string(matrices) + " matrices, " + std::to_string(broken) + " fail to round-trip"};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"sinkhorn worked example", worked_example},
        {"sinkhorn marginal feasibility", marginal_feasibility},
        {"1D oracle equivalence", line_oracle},
        {"gradient check", gradient_check},
        {"method comparison on drift simulation", method_comparison},
        {"special-case equivalence", special_case},
        {"factor invariants", factor_invariants},
        {"track conservation", track_conservation},
        {"matching pursuit reduction fidelity", reduction_fidelity},
        {"determinism and I/O", determinism_io},
    };
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
    }
    if (only < 0 || only > static_cast<int>(criteria.size())) {
        std::fprintf(stderr, "acceptance: no criterion %d\n", only);
        return 2;
    }
    int failed = 0;
    for (std::size_t n = 1; n <= criteria.size(); ++n) {
        if (only && static_cast<int>(n) != only) continue;
        Outcome o;
        try {
            o = criteria[n - 1].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("criterion %zu (%s): %s  %s\n", n, criteria[n - 1].first, o.pass ? "PASS" : "FAIL",
                    o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    return failed ? 1 : 0;
}
