// otmotion command-line interface.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

#include <otmotion/evaluation.hpp>
#include <otmotion/experiments.hpp>
#include <otmotion/factorization.hpp>
#include <otmotion/io.hpp>
#include <otmotion/log.hpp>
#include <otmotion/mp_reduce.hpp>
#include <otmotion/ot_core.hpp>
#include <otmotion/simulators.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace otmotion;
using io::json;

namespace {

struct Manifest {
    std::string command;
    json config = json::object();
    Seed seed = 0;
    json inputs = json::object();
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void write(const fs::path& dir) const
    {
        json j;
        j["command"] = command;
        j["config"] = config;
        j["seed"] = seed;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["duration_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        j["version"] = OTMOTION_VERSION;
        io::write_json(dir / "manifest.json", j);
    }
};

struct Output {
    fs::path dir;
    Manifest* manifest;

    void matrix(const std::string& name, const Matrix& m) const
    {
        io::write_csv(dir / name, m);
        manifest->outputs.push_back(name);
    }
    void json_file(const std::string& name, const json& j) const
    {
        io::write_json(dir / name, j);
        manifest->outputs.push_back(name);
    }
};

std::string joined_command(int argc, char** argv)
{
    std::string s;
    for (int i = 1; i < argc; ++i) {
        if (i > 1) s += ' ';
        s += argv[i];
    }
    return s;
}

json config_json(const TwnmfConfig& c)
{
    return {{"K", c.K},
            {"L", c.L},
            {"gamma", c.gamma},
            {"lambda_T", c.lambda_T},
            {"lambda_D", c.lambda_D},
            {"lambda_C", c.lambda_C},
            {"step", c.step},
            {"outer_iters", c.outer_iters},
            {"warmup_iters", c.warmup_iters},
            {"step_growth", c.step_growth},
            {"step_rule", c.step_rule == StepRule::exponentiated ? "exponentiated" : "projected"},
            {"sinkhorn_tol", c.sinkhorn_tol},
            {"sinkhorn_max_iter", c.sinkhorn_max_iter},
            {"seed", c.seed}};
}

json score_json(const Score& s) { return {{"mean", s.mean}, {"std", s.std}}; }

std::string fixed(double x, int digits = 2)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

std::string plus_minus(const Score& s) { return fixed(s.mean) + " ± " + fixed(s.std); }

// Stacks per-component d x T footprints into a (K d) x T matrix.
Matrix stack_footprints(const std::vector<Matrix>& fp)
{
    if (fp.empty()) return {};
    const Index d = fp.front().rows();
    Matrix out(d * static_cast<Index>(fp.size()), fp.front().cols());
    for (std::size_t k = 0; k < fp.size(); ++k) out.middleRows(static_cast<Index>(k) * d, d) = fp[k];
    return out;
}

std::vector<Matrix> unstack_footprints(const Matrix& m, Index K, const std::string& name)
{
    if (K < 1 || m.rows() % K != 0) {
        throw invalid_argument_error(name + ": " + std::to_string(m.rows()) + " rows do not split into " +
                                     std::to_string(K) + " components");
    }
    const Index d = m.rows() / K;
    std::vector<Matrix> out;
    for (Index k = 0; k < K; ++k) out.push_back(m.middleRows(k * d, d));
    return out;
}

HistogramSeries load_series(const fs::path& data, const std::string& coords_flag)
{
    Matrix X = io::read_matrix(data);
    Coords coords;
    const fs::path sibling = data.parent_path() / "coords.csv";
    if (!coords_flag.empty()) coords = io::read_matrix(coords_flag);
    else if (fs::exists(sibling)) coords = io::read_matrix(sibling);
    else coords = line_coords(X.rows());
    if (coords.rows() != X.rows()) {
        throw invalid_argument_error("coordinates list " + std::to_string(coords.rows()) + " bins, data has " +
                                     std::to_string(X.rows()));
    }
    HistogramSeries s{std::move(X), std::move(coords)};
    validate_series(s, 1e-6);
    s.frames = normalize_columns(s.frames, "frame");
    return s;
}

// ---- simulate ----

struct SimulateArgs {
    std::string out;
    Index bins = 100;
    Index components = 5;
    std::string grid = "20x20";
    Index frames = 0;
    double drift_sigma = 0.5;
    double footprint_sigma = 2.0;
    double noise = 0.0;
    Seed seed = 0;
};

void write_truth(const SimulationTruth& truth, const Output& out)
{
    out.matrix("data.csv", truth.data.frames);
    out.matrix("coords.csv", truth.data.coords);
    out.matrix("truth_traces.csv", truth.true_traces);
    out.matrix("truth_footprints.csv", stack_footprints(truth.true_footprints));
    out.matrix("positions.csv", stack_footprints(truth.positions));
}

int run_simulate(const std::string& kind, const SimulateArgs& a, Manifest& man)
{
    const fs::path dir = a.out;
    const Output out{dir, &man};
    man.seed = a.seed;
    SimulationTruth truth;
    if (kind == "drift") {
        DriftParams p;
        p.n_components = a.components;
        p.n_bins = a.bins;
        p.frames = a.frames > 0 ? a.frames : 200;
        p.drift_sigma = a.drift_sigma;
        p.footprint_sigma = a.footprint_sigma;
        p.noise = a.noise;
        p.seed = a.seed;
        truth = simulate_electrode_drift(p);
        man.config = {{"kind", kind},         {"bins", p.n_bins},           {"components", p.n_components},
                      {"frames", p.frames},   {"drift_sigma", p.drift_sigma}, {"footprint_sigma", p.footprint_sigma},
                      {"noise", p.noise}};
    } else {
        ParticleParams p;
        char x = 0;
        std::istringstream gs(a.grid);
        if (!(gs >> p.width >> x >> p.height) || x != 'x' || !gs.eof()) {
            throw invalid_argument_error("--grid expects WxH, got '" + a.grid + "'");
        }
        p.n_particles = a.components;
        p.frames = a.frames > 0 ? a.frames : 100;
        p.drift_sigma = a.drift_sigma;
        p.footprint_sigma = a.footprint_sigma;
        p.noise = a.noise;
        p.seed = a.seed;
        truth = simulate_particles_2d(p);
        man.config = {{"kind", kind},         {"width", p.width},           {"height", p.height},
                      {"components", p.n_particles}, {"frames", p.frames}, {"drift_sigma", p.drift_sigma},
                      {"footprint_sigma", p.footprint_sigma}, {"noise", p.noise}};
    }
    write_truth(truth, out);
    man.write(dir);
    return 0;
}

// ---- fit ----

struct FitArgs {
    std::string data;
    std::string coords;
    std::string out;
    TwnmfConfig cfg;
    int nmf_iters = 500;
    std::size_t jobs = 1;
};

Matrix trace_matrix(const FitTrace& trace)
{
    Matrix m(static_cast<Index>(trace.size()), 9);
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const FitRecord& r = trace[i];
        m.row(static_cast<Index>(i)) << static_cast<double>(i), r.data_term, r.coupling_term, r.entropy_D,
            r.entropy_C, r.total, r.step_D, r.step_C, static_cast<double>(r.reseeded);
    }
    return m;
}

int run_fit(const std::string& method, FitArgs a, Manifest& man)
{
    const HistogramSeries X = load_series(a.data, a.coords);
    const fs::path dir = a.out;
    const Output out{dir, &man};
    man.seed = a.cfg.seed;
    man.inputs = {{"data", a.data}, {"coords", a.coords}};

    if (method == "nmf") {
        const NmfResult r = nmf_fit(X, a.cfg.K, a.nmf_iters, a.cfg.seed);
        const double final_error = r.errors.empty() ? (X.frames - r.D * r.C).norm() : r.errors.back();
        man.config = {{"method", method}, {"K", a.cfg.K}, {"iters", a.nmf_iters}, {"seed", a.cfg.seed}};
        man.config["final_error"] = final_error;
        man.config["relative_error"] = final_error / X.frames.norm();
        out.matrix("dictionary_0.csv", r.D);
        out.matrix("coefficients.csv", r.C);
        Matrix trace(static_cast<Index>(r.errors.size()), 2);
        for (std::size_t i = 0; i < r.errors.size(); ++i) trace.row(static_cast<Index>(i)) << static_cast<double>(i), r.errors[i];
        out.matrix("fit_trace.csv", trace);
        man.write(dir);
        std::cout << "nmf: final error " << io::format_double(final_error) << '\n';
        return 0;
    }

    TwnmfConfig cfg = a.cfg;
    if (method == "wnmf") {
        cfg.L = 1;
        cfg.lambda_T = 0.0;
    }
    const GroundCost cost = build_ground_cost(X.coords);
    const TwnmfResult r = method == "wnmf" ? wnmf_fit(X, cost, cfg) : twnmf_fit(X, cost, cfg);
    man.config = config_json(cfg);
    man.config["method"] = method;
    man.config["trace_columns"] = {"iteration", "data_term", "coupling_term", "entropy_D", "entropy_C",
                                   "total",     "step_D",    "step_C",        "reseeded"};
    man.config["initial_objective"] = r.initial.total;
    man.config["final_objective"] = r.trace.empty() ? r.initial.total : r.trace.back().total;

    for (std::size_t l = 0; l < r.factors.blocks.size(); ++l) {
        out.matrix("dictionary_" + std::to_string(l) + ".csv", r.factors.dictionaries[l]);
    }
    out.matrix("coefficients.csv", r.factors.coefficient_matrix());
    Matrix blocks(r.factors.blocks_count(), 2);
    for (std::size_t l = 0; l < r.factors.blocks.size(); ++l) {
        blocks.row(static_cast<Index>(l)) << static_cast<double>(r.factors.blocks[l].begin),
            static_cast<double>(r.factors.blocks[l].length);
    }
    out.matrix("blocks.csv", blocks);
    out.matrix("fit_trace.csv", trace_matrix(r.trace));
    out.matrix("plan_potential_a.csv", r.frame_plans.potential_a);
    out.matrix("plan_potential_b.csv", r.frame_plans.potential_b);
    if (r.boundary_plans.size()) {
        out.matrix("boundary_potential_a.csv", r.boundary_plans.potential_a);
        out.matrix("boundary_potential_b.csv", r.boundary_plans.potential_b);
    }
    out.matrix("tracks.csv", stack_footprints(extract_tracks(r.factors, r.frame_plans, cost)));
    man.write(dir);
    std::cout << method << ": objective " << io::format_double(r.initial.total) << " -> "
              << io::format_double(man.config["final_objective"].get<double>()) << '\n';
    return 0;
}

// ---- tracks ----

int run_tracks(const std::string& fit_dir, const std::string& out_flag, Manifest& man)
{
    const fs::path fdir = fit_dir;
    const json fm = io::read_json(fdir / "manifest.json");
    const std::string method = fm.at("config").value("method", "");
    if (method != "wnmf" && method != "twnmf") {
        throw invalid_argument_error("tracks: " + fit_dir + " holds a '" + method + "' fit, not wnmf/twnmf");
    }
    const HistogramSeries X = load_series(fm.at("inputs").at("data").get<std::string>(),
                                          fm.at("inputs").value("coords", std::string{}));
    const GroundCost cost = build_ground_cost(X.coords);
    for (const char* name : {"plan_potential_a.csv", "plan_potential_b.csv"}) {
        if (!fs::exists(fdir / name)) throw invalid_argument_error("tracks: missing plans: " + (fdir / name).string());
    }
    const double gamma = fm.at("config").at("gamma").get<double>();
    const PlanSet plans{io::read_matrix(fdir / "plan_potential_a.csv"), io::read_matrix(fdir / "plan_potential_b.csv"),
                        gamma};
    const Matrix blocks = io::read_matrix(fdir / "blocks.csv");
    const Matrix C = io::read_matrix(fdir / "coefficients.csv");
    BlockFactorization f;
    for (Index l = 0; l < blocks.rows(); ++l) {
        const Block b{static_cast<Index>(blocks(l, 0)), static_cast<Index>(blocks(l, 1))};
        f.blocks.push_back(b);
        f.dictionaries.push_back(io::read_matrix(fdir / ("dictionary_" + std::to_string(l) + ".csv")));
        f.coefficients.push_back(C.middleCols(b.begin, b.length));
    }
    validate_factorization(f);
    if (plans.potential_a.rows() != X.bins() || plans.potential_b.rows() != X.bins()) {
        throw invalid_argument_error("tracks: plan potentials do not match the data bins");
    }
    const std::vector<Matrix> tracks = extract_tracks(f, plans, cost);

    const fs::path dir = out_flag.empty() ? fdir / "tracks" : fs::path(out_flag);
    const Output out{dir, &man};
    man.inputs = {{"fit", fit_dir}};
    man.config = {{"method", method}, {"gamma", gamma}};
    const Index K = f.components();
    const Index T = f.frames();
    for (Index t = 0; t < T; ++t) {
        Matrix frame(X.bins(), K);
        for (Index k = 0; k < K; ++k) frame.col(k) = tracks[static_cast<std::size_t>(k)].col(t);
        out.matrix("frame_" + std::to_string(t) + ".csv", frame);
    }
    std::vector<Index> active;
    for (Index i = 0; i < X.bins(); ++i) {
        if ((X.frames.row(i).array() > 0.0).any()) active.push_back(i);
    }
    io::detail::ensure_parent(dir / "tracks_long.csv");
    std::ofstream lf(dir / "tracks_long.csv", std::ios::binary);
    if (!lf) throw invalid_argument_error("cannot open " + (dir / "tracks_long.csv").string() + " for writing");
    lf << "frame,component,bin,mass\n";
    for (Index t = 0; t < T; ++t) {
        for (Index k = 0; k < K; ++k) {
            for (const Index i : active) {
                lf << t << ',' << k << ',' << i << ',' << io::format_double(tracks[static_cast<std::size_t>(k)](i, t))
                   << '\n';
            }
        }
    }
    if (!lf) throw invalid_argument_error("write failed: " + (dir / "tracks_long.csv").string());
    man.outputs.push_back("tracks_long.csv");
    man.config["active_bins"] = active.size();
    man.write(dir);
    return 0;
}

// ---- eval ----

struct EvalArgs {
    std::string truth;
    std::string fit;
    std::string out;
    int seeds = 0;
    std::string methods = "nmf,wnmf,twnmf";
    FitArgs fit_args;
};

json match_json(const MatchResult& m)
{
    json j;
    j["permutation"] = m.permutation;
    j["spatial_scores"] = std::vector<double>(m.spatial_scores.data(), m.spatial_scores.data() + m.spatial_scores.size());
    j["temporal_scores"] =
        std::vector<double>(m.temporal_scores.data(), m.temporal_scores.data() + m.temporal_scores.size());
    j["spatial"] = score_json(summarize(m.spatial_scores));
    j["temporal"] = score_json(summarize(m.temporal_scores));
    return j;
}

int run_eval_pair(const EvalArgs& a, Manifest& man)
{
    const fs::path tdir = a.truth;
    const fs::path fdir = a.fit;
    const json fm = io::read_json(fdir / "manifest.json");
    const std::string method = fm.at("config").value("method", "");
    const Matrix true_traces = io::read_matrix(tdir / "truth_traces.csv");
    const Index K = true_traces.rows();
    const std::vector<Matrix> truth_fp = unstack_footprints(io::read_matrix(tdir / "truth_footprints.csv"), K,
                                                            (tdir / "truth_footprints.csv").string());
    const Matrix C = io::read_matrix(fdir / "coefficients.csv");
    if (C.rows() != K) {
        throw invalid_argument_error("eval: fit has " + std::to_string(C.rows()) + " components, truth has " +
                                     std::to_string(K));
    }
    std::vector<Matrix> est;
    if (method == "nmf") {
        est = tile_footprints(io::read_matrix(fdir / "dictionary_0.csv"), true_traces.cols());
    } else {
        est = unstack_footprints(io::read_matrix(fdir / "tracks.csv"), K, (fdir / "tracks.csv").string());
    }
    MatchResult m = match_components(est, truth_fp);
    temporal_accuracy(m, C, true_traces);

    const fs::path dir = a.out.empty() ? fdir / "eval" : fs::path(a.out);
    const Output out{dir, &man};
    man.inputs = {{"truth", a.truth}, {"fit", a.fit}};
    man.config = {{"method", method}};
    json j = match_json(m);
    j["method"] = method;
    out.json_file("eval.json", j);
    man.write(dir);
    std::cout << method << "  spatial " << plus_minus(summarize(m.spatial_scores)) << "  temporal "
              << plus_minus(summarize(m.temporal_scores)) << '\n';
    return 0;
}

int run_eval_sweep(const EvalArgs& a, Manifest& man)
{
    SweepConfig cfg = table_protocol();
    cfg.fit = a.fit_args.cfg;
    cfg.simulation.n_components = cfg.fit.K;
    cfg.nmf_iters = a.fit_args.nmf_iters;
    cfg.jobs = a.fit_args.jobs;
    cfg.methods.clear();
    std::stringstream ms(a.methods);
    for (std::string item; std::getline(ms, item, ',');) {
        const auto m = parse_method(item);
        if (!m) throw invalid_argument_error("--methods: unknown method '" + item + "'");
        cfg.methods.push_back(*m);
    }
    if (a.seeds < 1) throw invalid_argument_error("--seeds must be >= 1");
    for (int s = 0; s < a.seeds; ++s) cfg.seeds.push_back(static_cast<Seed>(s));

    const std::vector<MethodSummary> rows = run_sweep(cfg);

    const fs::path dir = a.out.empty() ? fs::path("eval_sweep") : fs::path(a.out);
    const Output out{dir, &man};
    man.config = config_json(cfg.fit);
    man.config["seeds"] = a.seeds;
    man.config["methods"] = a.methods;
    man.config["nmf_iters"] = cfg.nmf_iters;
    json table = json::array();
    std::ostringstream text;
    text << "method  spatial (components)  temporal (components)  spatial (seeds)  temporal (seeds)\n";
    for (const MethodSummary& r : rows) {
        json row;
        row["method"] = std::string(method_name(r.method));
        row["spatial_over_components"] = score_json(r.spatial_components);
        row["temporal_over_components"] = score_json(r.temporal_components);
        row["spatial_over_seeds"] = score_json(r.spatial_seeds);
        row["temporal_over_seeds"] = score_json(r.temporal_seeds);
        json runs = json::array();
        for (const RunOutcome& o : r.runs) {
            json rj = match_json(o.match);
            rj["seed"] = o.seed;
            rj["seconds"] = o.seconds;
            runs.push_back(rj);
        }
        row["runs"] = runs;
        table.push_back(row);
        char line[256];
        std::snprintf(line, sizeof line, "%-6s  %-20s  %-21s  %-15s  %s\n", std::string(method_name(r.method)).c_str(),
                      plus_minus(r.spatial_components).c_str(), plus_minus(r.temporal_components).c_str(),
                      plus_minus(r.spatial_seeds).c_str(), plus_minus(r.temporal_seeds).c_str());
        text << line;
    }
    out.json_file("table.json", table);
    {
        std::ofstream tf(dir / "table.txt", std::ios::binary);
        tf << text.str();
        man.outputs.push_back("table.txt");
    }
    man.write(dir);
    std::cout << text.str();
    return 0;
}

// ---- reduce ----

struct ReduceArgs {
    std::string data;
    std::string coords;
    std::string out;
    Index atoms = default_atoms;
    double sigma = default_atom_sigma;
    std::size_t jobs = 1;
};

int run_reduce(const ReduceArgs& a, Manifest& man)
{
    const HistogramSeries X = load_series(a.data, a.coords);
    const ReducedSeries r = reduce_series(X, a.atoms, a.sigma, a.jobs);
    const fs::path dir = a.out;
    const Output out{dir, &man};
    man.inputs = {{"data", a.data}, {"coords", a.coords}};
    man.config = {{"atoms", a.atoms}, {"sigma", a.sigma}, {"reduced_bins", r.bins.size()}};
    out.matrix("data.csv", r.data.frames);
    out.matrix("coords.csv", r.data.coords);
    Matrix bins(static_cast<Index>(r.bins.size()), 1);
    for (std::size_t s = 0; s < r.bins.size(); ++s) bins(static_cast<Index>(s), 0) = static_cast<double>(r.bins[s]);
    out.matrix("atom_bins.csv", bins);
    Matrix residual(1, X.length());
    for (Index t = 0; t < X.length(); ++t) residual(0, t) = r.atoms[static_cast<std::size_t>(t)].residual_norms.back();
    out.matrix("residual_norms.csv", residual);
    man.write(dir);
    return 0;
}

void add_fit_flags(CLI::App* cmd, FitArgs& f)
{
    cmd->add_option("--K", f.cfg.K, "Number of components")->capture_default_str();
    cmd->add_option("--L", f.cfg.L, "Number of temporal blocks")->capture_default_str();
    cmd->add_option("--gamma", f.cfg.gamma, "Entropic regularization")->capture_default_str();
    cmd->add_option("--lambda-T", f.cfg.lambda_T, "Temporal coupling weight")->capture_default_str();
    cmd->add_option("--lambda-D", f.cfg.lambda_D, "Dictionary entropy weight")->capture_default_str();
    cmd->add_option("--lambda-C", f.cfg.lambda_C, "Coefficient entropy weight")->capture_default_str();
    cmd->add_option("--step", f.cfg.step, "Initial gradient step")->capture_default_str();
    cmd->add_option("--iters", f.cfg.outer_iters, "Outer iterations")->capture_default_str();
    cmd->add_option("--warmup", f.cfg.warmup_iters, "Leading single-block iterations (twnmf)")->capture_default_str();
    cmd->add_option("--step-growth", f.cfg.step_growth, "Step factor after an accepted first try")
        ->capture_default_str();
    cmd->add_option("--step-rule", f.cfg.step_rule, "Factor update: exponentiated or projected")
        ->transform(CLI::CheckedTransformer(
            std::map<std::string, StepRule>{{"exponentiated", StepRule::exponentiated},
                                            {"projected", StepRule::projected}}))
        ->capture_default_str();
    cmd->add_option("--nmf-iters", f.nmf_iters, "NMF iterations")->capture_default_str();
    cmd->add_option("--sinkhorn-tol", f.cfg.sinkhorn_tol, "Inner marginal tolerance")->capture_default_str();
    cmd->add_option("--seed", f.cfg.seed, "Random seed")->capture_default_str();
    cmd->add_option("--jobs", f.jobs, "Parallel runs")->capture_default_str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Temporal Wasserstein NMF for moving sources"};
    app.set_version_flag("--version", std::string(OTMOTION_VERSION));
    app.require_subcommand(1);

    Manifest man;
    man.command = joined_command(argc, argv);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Generate synthetic data with ground truth");
    simulate->require_subcommand(1);
    for (const char* kind : {"drift", "particles"}) {
        auto* s = simulate->add_subcommand(kind, kind == std::string("drift") ? "Sources drifting along a line"
                                                                              : "Particles on a 2D grid");
        s->add_option("--out", sim.out, "Output directory")->required();
        if (kind == std::string("drift")) s->add_option("--bins", sim.bins, "Electrodes")->capture_default_str();
        else s->add_option("--grid", sim.grid, "Grid size WxH")->capture_default_str();
        s->add_option("--components", sim.components, "Sources")->capture_default_str();
        s->add_option("--frames", sim.frames, "Frames (default 200 drift, 100 particles)");
        s->add_option("--drift-sigma", sim.drift_sigma, "Random walk step")->capture_default_str();
        s->add_option("--footprint-sigma", sim.footprint_sigma, "Footprint width")->capture_default_str();
        s->add_option("--noise", sim.noise, "Uniform noise amplitude")->capture_default_str();
        s->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
    }

    FitArgs fit;
    auto* fitc = app.add_subcommand("fit", "Factorize a histogram series");
    fitc->require_subcommand(1);
    for (const char* m : {"nmf", "wnmf", "twnmf"}) {
        auto* s = fitc->add_subcommand(m, std::string("Fit ") + m);
        s->add_option("--data", fit.data, "Data matrix (d x T)")->required();
        s->add_option("--coords", fit.coords, "Bin coordinates (d x n); default coords.csv beside the data");
        s->add_option("--out", fit.out, "Output directory")->required();
        add_fit_flags(s, fit);
    }

    EvalArgs ev;
    ev.fit_args.cfg = table_protocol().fit;
    ev.fit_args.nmf_iters = table_protocol().nmf_iters;
    auto* evalc = app.add_subcommand("eval", "Score fits against ground truth");
    evalc->add_option("--truth", ev.truth, "Simulation directory");
    evalc->add_option("--fit", ev.fit, "Fit directory");
    evalc->add_option("--out", ev.out, "Output directory");
    evalc->add_option("--seeds", ev.seeds, "Run a drift sweep over seeds 0..N-1");
    evalc->add_option("--methods", ev.methods, "Methods for the sweep")->capture_default_str();
    add_fit_flags(evalc, ev.fit_args);

    std::string tracks_fit, tracks_out;
    auto* tracksc = app.add_subcommand("tracks", "Write per-frame component footprints of a transport fit");
    tracksc->add_option("--fit", tracks_fit, "Fit directory")->required();
    tracksc->add_option("--out", tracks_out, "Output directory (default <fit>/tracks)");

    ReduceArgs red;
    auto* reducec = app.add_subcommand("reduce", "Matching-pursuit reduction to Gaussian atoms");
    reducec->add_option("--data", red.data, "Data matrix (d x T)")->required();
    reducec->add_option("--coords", red.coords, "Bin coordinates");
    reducec->add_option("--out", red.out, "Output directory")->required();
    reducec->add_option("--atoms", red.atoms, "Atoms per frame")->capture_default_str();
    reducec->add_option("--sigma", red.sigma, "Atom width")->capture_default_str();
    reducec->add_option("--jobs", red.jobs, "Parallel frames")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (simulate->parsed()) {
            for (auto* s : simulate->get_subcommands()) return run_simulate(s->get_name(), sim, man);
        }
        if (fitc->parsed()) {
            for (auto* s : fitc->get_subcommands()) return run_fit(s->get_name(), fit, man);
        }
        if (evalc->parsed()) {
            if (ev.seeds > 0) return run_eval_sweep(ev, man);
            if (ev.truth.empty() || ev.fit.empty()) {
                throw invalid_argument_error("eval: give --truth and --fit, or --seeds");
            }
            return run_eval_pair(ev, man);
        }
        if (tracksc->parsed()) return run_tracks(tracks_fit, tracks_out, man);
        if (reducec->parsed()) {
            red.jobs = std::max<std::size_t>(red.jobs, 1);
            return run_reduce(red, man);
        }
    } catch (const numerical_error& e) {
        std::cerr << "otmotion: numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const error& e) {
        std::cerr << "otmotion: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "otmotion: malformed manifest: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "otmotion: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
