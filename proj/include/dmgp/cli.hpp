#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "baselines.hpp"
#include "experiments.hpp"
#include "inference.hpp"
#include "io.hpp"
#include "prediction.hpp"
#include "rl.hpp"
#include "tuning.hpp"

namespace dmgp::cli {

using nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reads keys from a JSON object, remembering which were consumed so leftovers can be rejected.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object())
            throw ConfigError(where() + "must be an object");
    }

    template <class T>
    void operator()(const char* key, T& v)
    {
        seen_.insert(key);
        if (!j_.contains(key))
            return;
        try {
            v = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config key '" + path_ + key + "': " + e.what());
        }
    }

    template <class F>
    void section(const char* key, F&& f)
    {
        seen_.insert(key);
        if (!j_.contains(key))
            return;
        Reader sub(j_.at(key), path_ + key + ".");
        f(sub);
        sub.finish();
    }

    void finish() const
    {
        for (const auto& [k, v] : j_.items())
            if (!seen_.contains(k))
                throw ConfigError("unknown config key '" + path_ + k + "'");
    }

private:
    std::string where() const { return path_.empty() ? "config " : "config section '" + path_ + "' "; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

/// Writes every visited key; the output is the fully resolved configuration.
class Writer {
public:
    explicit Writer(json& j) : j_(j) { j_ = json::object(); }

    template <class T>
    void operator()(const char* key, T& v)
    {
        j_[key] = v;
    }

    template <class F>
    void section(const char* key, F&& f)
    {
        json sub;
        Writer w(sub);
        f(w);
        j_[key] = sub;
    }

private:
    json& j_;
};

struct SpikeSlabSettings {
    double nu0 = 0.02;
    std::string slab = "hard";
    double nu1 = 0.1;
    double rho = 0.9;
    double eta = 0.5;

    SpikeSlabConfig get() const
    {
        SpikeSlabConfig ss;
        ss.nu0 = nu0;
        ss.eta = eta;
        if (slab == "hard")
            ss.slab = HardSlab{nu1};
        else if (slab == "soft")
            ss.slab = SoftSlab{nu1, rho};
        else
            throw ConfigError("spike_slab.slab must be 'hard' or 'soft'");
        ss.validate();
        return ss;
    }

    static SpikeSlabSettings from(const SpikeSlabConfig& ss)
    {
        return {ss.nu0, ss.is_soft() ? "soft" : "hard", ss.nu1(), ss.is_soft() ? ss.rho() : 0.9, ss.eta};
    }
};

/// Every run is described by one of these; unknown keys are rejected.
struct RunConfig {
    std::string command; // informational in resolved configs; must match the subcommand when set
    unsigned long long seed = 0;
    int jobs = 1;
    std::string out = "out";

    // inputs
    std::string data;
    int target_id = -1; // -1: largest output id
    std::string model;
    std::string queries;

    // simulate / benchmark data
    std::string generator = "case"; // case | segmented
    CaseSpec case_spec;
    SegmentSpec segment;

    SpikeSlabSettings spike_slab;
    FitConfig fit;
    GpConfig gp;
    MgpL1Config mgp;

    // tune
    std::vector<double> ratios = TuningGrid::example_hard().ratios;
    std::vector<double> slab_values = TuningGrid::example_hard().slab_values;
    int cell_k_in = 200;
    bool refit = true;

    // benchmark
    std::vector<std::string> methods{"GP", "MGP-L1", "DMGP-SS"};
    int replications = 10;

    // rl
    std::vector<std::string> rl_models{"GP", "MGP", "DMGP-SS"};
    int rl_seeds = 5;
    RlConfig rl;

    template <class V>
    void visit(V& v)
    {
        v("command", command);
        v("seed", seed);
        v("jobs", jobs);
        v("out", out);
        v("data", data);
        v("target_id", target_id);
        v("model", model);
        v("queries", queries);
        v("generator", generator);
        v.section("case", [&](auto& s) {
            s("case", case_spec.case_id);
            s("k", case_spec.k);
            s("n", case_spec.n);
            s("noise", case_spec.noise);
            s("phase_sd", case_spec.phase_sd);
            s("coef_sd", case_spec.coef_sd);
            s("gap_length", case_spec.gap_length);
            s("gap_windows", case_spec.gap_windows);
        });
        v.section("segment", [&](auto& s) {
            s("outputs", segment.outputs);
            s("segments", segment.segments);
            s("segment_length", segment.segment_length);
            s("gap_length", segment.gap_length);
            s("noise", segment.noise);
        });
        v.section("spike_slab", [&](auto& s) { visit_spike_slab(s, spike_slab); });
        v.section("fit", [&](auto& s) { visit_fit(s, fit); });
        v.section("gp", [&](auto& s) {
            s("epochs", gp.epochs);
            s("step", gp.step);
        });
        v.section("mgp", [&](auto& s) { visit_mgp(s, mgp); });
        v.section("tune", [&](auto& s) {
            s("ratios", ratios);
            s("slab_values", slab_values);
            s("cell_k_in", cell_k_in);
            s("refit", refit);
        });
        v.section("benchmark", [&](auto& s) {
            s("methods", methods);
            s("replications", replications);
        });
        v.section("rl", [&](auto& s) {
            s("models", rl_models);
            s("seeds", rl_seeds);
            s("grid", rl.grid);
            s("actions", rl.actions);
            s("hold", rl.hold);
            s("integrate_position", rl.integrate_position);
            s("discount", rl.discount);
            s("tolerance", rl.tolerance);
            s("max_sweeps", rl.max_sweeps);
            s("max_steps", rl.max_steps);
            s("source_samples", rl.source_samples);
            s("target_before", rl.target_before);
            s("target_after", rl.target_after);
            s("test_samples", rl.test_samples);
            s("init_pos_min", rl.init_pos_min);
            s("init_pos_max", rl.init_pos_max);
            s.section("spike_slab", [&](auto& t) {
                auto st = SpikeSlabSettings::from(rl.ss);
                visit_spike_slab(t, st);
                rl.ss = st.get();
            });
            s.section("fit", [&](auto& t) { visit_fit(t, rl.fit); });
        });
    }

    template <class V>
    static void visit_spike_slab(V& s, SpikeSlabSettings& ss)
    {
        s("nu0", ss.nu0);
        s("slab", ss.slab);
        s("nu1", ss.nu1);
        s("rho", ss.rho);
        s("eta", ss.eta);
    }

    template <class V>
    static void visit_fit(V& s, FitConfig& f)
    {
        s("k_out", f.k_out);
        s("k_in", f.k_in);
        s("batches", f.batches);
        s("step", f.adam.step);
        s("beta1", f.adam.beta1);
        s("beta2", f.adam.beta2);
        s("epsilon", f.adam.eps);
        s("gamma_init", f.gamma_init);
        s("tie_sources", f.tie_sources);
        s("warm_start_epochs", f.warm_start_epochs);
        s("warm_start_step", f.warm_start_step);
        s("increments", f.increments);
        s("own_amp_init", f.own_amp_init);
    }

    template <class V>
    static void visit_mgp(V& s, MgpL1Config& m)
    {
        s("lambdas", m.lambdas);
        s("folds", m.folds);
        s("epochs", m.epochs);
        s("cv_epochs", m.cv_epochs);
        s("step", m.step);
        s("warm_start_epochs", m.warm_start_epochs);
    }

    json to_json()
    {
        json j;
        Writer w(j);
        visit(w);
        return j;
    }

    void load(const json& j)
    {
        Reader r(j, "");
        visit(r);
        r.finish();
    }
};

/// Defaults that depend on the subcommand: the synthetic benchmark settings.
inline RunConfig defaults_for(const std::string& cmd)
{
    RunConfig c;
    c.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (cmd == "benchmark" || cmd == "fit" || cmd == "tune") {
        const MethodSettings m = case_settings(1);
        c.fit = m.fit;
    }
    return c;
}

namespace detail {

inline std::filesystem::path out_dir(const RunConfig& c)
{
    std::filesystem::path p(c.out);
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec)
        throw IoError("cannot create output directory '" + p.string() + "': " + ec.message());
    return p;
}

inline void write_json(const std::filesystem::path& path, const json& j)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << '\n';
}

inline Dataset load_data(const RunConfig& c)
{
    if (c.data.empty())
        throw ConfigError("config key 'data' (dataset CSV path) is required");
    return read_dataset(c.data, c.target_id >= 0 ? std::optional<int>(c.target_id) : std::nullopt);
}

inline GapSplit simulate(const RunConfig& c)
{
    if (c.generator == "case") {
        CaseSpec s = c.case_spec;
        s.seed = c.seed;
        return generate_case_with_gaps(s);
    }
    if (c.generator == "segmented") {
        SegmentSpec s = c.segment;
        s.seed = c.seed;
        return generate_segmented(s);
    }
    throw ConfigError("generator must be 'case' or 'segmented'");
}

inline QueryPoints held_out(const GapSplit& split)
{
    return {split.test_times, split.test_inputs, split.test_truth};
}

} // namespace detail

inline void cmd_simulate(RunConfig& c, std::ostream& log)
{
    const GapSplit split = detail::simulate(c);
    const auto dir = detail::out_dir(c);
    write_dataset(dir / "dataset.csv", split.train);
    write_queries(dir / "gaps.csv", detail::held_out(split));
    log << "simulated " << split.train.num_outputs() << " outputs, " << split.train.target.size() << " target rows, "
        << split.test_times.size() << " removed\n";
}

inline void cmd_fit(RunConfig& c, std::ostream& log)
{
    const Dataset data = detail::load_data(c);
    const SpikeSlabConfig ss = c.spike_slab.get();
    FitConfig fc = c.fit;
    fc.seed = c.seed;
    const FitResult f = fit(data, ss, fc);
    const auto dir = detail::out_dir(c);
    write_fit(dir / "fit.json", f, ss);
    write_gamma(dir / "gamma.csv", f.gamma, data);
    std::ofstream tr = dmgp::detail::open_out(dir / "trace.csv");
    tr << "iteration,objective\n";
    for (std::size_t k = 0; k < f.trace.size(); ++k)
        tr << (k + 1) << ',' << f.trace[k] << '\n';
    log << "fit finished in " << std::setprecision(4) << f.wallclock << " s, final objective "
        << (f.trace.empty() ? 0.0 : f.trace.back()) << '\n';
}

inline void cmd_predict(RunConfig& c, std::ostream& log)
{
    const Dataset data = detail::load_data(c);
    if (c.model.empty() || c.queries.empty())
        throw ConfigError("predict needs config keys 'model' (fit archive) and 'queries' (CSV)");
    SpikeSlabConfig ss;
    const FitResult f = read_fit(c.model, data, &ss);
    const QueryPoints q = read_queries(c.queries);
    if (q.inputs.cols() != data.dim() && !q.times.empty())
        throw ConfigError("query inputs have " + std::to_string(q.inputs.cols()) + " columns, dataset has "
                          + std::to_string(data.dim()));
    const auto pred = predict_at(f, data, q.times, q.inputs, ss);
    const auto dir = detail::out_dir(c);
    write_predictions(dir / "predictions.csv", q.times, pred);
    if (q.truth && !pred.empty()) {
        Eigen::VectorXd mu(static_cast<Eigen::Index>(pred.size()));
        double cr = 0.0;
        for (std::size_t k = 0; k < pred.size(); ++k) {
            mu(static_cast<Eigen::Index>(k)) = pred[k].mean;
            cr += crps(pred[k].mean, pred[k].variance, (*q.truth)(static_cast<Eigen::Index>(k)));
        }
        const double m = mae(mu, *q.truth);
        cr /= static_cast<double>(pred.size());
        std::ofstream out = dmgp::detail::open_out(dir / "metrics.csv");
        out << "metric,value\nmae," << m << "\ncrps," << cr << '\n';
        log << "MAE " << m << " CRPS " << cr << '\n';
    }
    log << "wrote " << pred.size() << " predictions\n";
}

inline void cmd_tune(RunConfig& c, std::ostream& log)
{
    const Dataset data = detail::load_data(c);
    FitConfig fc = c.fit;
    fc.seed = c.seed;
    const TuningGrid grid{c.ratios, c.slab_values};
    const TuningResult r = grid_search(data, grid, c.spike_slab.get(), fc, c.cell_k_in, c.refit, c.jobs);
    const auto dir = detail::out_dir(c);
    std::ofstream out = dmgp::detail::open_out(dir / "tuning.csv");
    out << "nu0,nu_slab,criterion,log_likelihood,nonzeros,ok\n";
    for (const auto& row : r.table)
        out << row.nu0 << ',' << row.nu_slab << ',' << row.criterion << ',' << row.log_likelihood << ','
            << row.nonzeros << ',' << (row.ok ? 1 : 0) << '\n';
    if (r.refit) {
        write_fit(dir / "fit.json", *r.refit, r.best);
        write_gamma(dir / "gamma.csv", r.refit->gamma, data);
    }
    log << "best cell " << r.best_index << ": nu0 " << r.best.nu0 << " slab " << r.best.nu1() << '\n';
}

inline void cmd_benchmark(RunConfig& c, std::ostream& log)
{
    std::vector<Method> methods;
    for (const auto& m : c.methods)
        methods.push_back(parse_method(m));
    if (methods.empty())
        throw ConfigError("benchmark.methods must not be empty");
    MethodSettings ms;
    ms.ss = c.spike_slab.get();
    ms.fit = c.fit;
    ms.gp = c.gp;
    ms.mgp = c.mgp;
    BenchmarkReport rep;
    if (c.generator == "case") {
        CaseSpec s = c.case_spec;
        s.seed = c.seed;
        rep = run_benchmark(s, methods, c.replications, ms, c.jobs);
    } else if (c.generator == "segmented") {
        SegmentSpec s = c.segment;
        s.seed = c.seed;
        rep = run_segmented_benchmark(s, methods, c.replications, ms, c.jobs);
    } else
        throw ConfigError("generator must be 'case' or 'segmented'");

    const auto dir = detail::out_dir(c);
    std::ofstream rows = dmgp::detail::open_out(dir / "benchmark.csv");
    rows << "replication,method,metric,value\n";
    for (const auto& r : rep.rows) {
        if (!r.ok) {
            rows << r.replication << ',' << method_name(r.method) << ",failed,1\n";
            continue;
        }
        rows << r.replication << ',' << method_name(r.method) << ",mae," << r.mae << '\n';
        rows << r.replication << ',' << method_name(r.method) << ",crps," << r.crps << '\n';
        rows << r.replication << ',' << method_name(r.method) << ",seconds," << r.seconds << '\n';
    }
    std::ofstream sum = dmgp::detail::open_out(dir / "summary.csv");
    sum << "method,runs,failures,mae_mean,mae_sd,crps_mean,crps_sd,seconds_mean\n";
    for (Method m : methods) {
        const MethodSummary s = rep.summary(m);
        sum << method_name(m) << ',' << s.runs << ',' << s.failures << ',' << s.mae_mean << ',' << s.mae_sd << ','
            << s.crps_mean << ',' << s.crps_sd << ',' << s.seconds_mean << '\n';
        log << std::left << std::setw(8) << method_name(m) << " MAE " << std::setprecision(4) << s.mae_mean << " ("
            << s.mae_sd << ")  CRPS " << s.crps_mean << " (" << s.crps_sd << ")  " << s.seconds_mean << " s/fit";
        if (s.failures)
            log << "  " << s.failures << " failed";
        log << '\n';
    }
}

inline void cmd_rl(RunConfig& c, std::ostream& log)
{
    std::vector<TransitionKind> kinds;
    for (const auto& m : c.rl_models)
        kinds.push_back(parse_transition(m));
    if (kinds.empty() || c.rl_seeds < 1)
        throw ConfigError("rl needs at least one model and one seed");
    const int n = static_cast<int>(kinds.size()) * c.rl_seeds;
    std::vector<RlResult> res(static_cast<std::size_t>(n));
    std::vector<std::string> err(static_cast<std::size_t>(n));
    parallel_for(n, c.jobs, [&](int k) {
        const auto kind = kinds[static_cast<std::size_t>(k / c.rl_seeds)];
        try {
            res[static_cast<std::size_t>(k)] = run_rl(kind, c.rl, c.seed + static_cast<unsigned long long>(k % c.rl_seeds));
        } catch (const std::exception& e) {
            err[static_cast<std::size_t>(k)] = e.what();
        }
    });
    const auto dir = detail::out_dir(c);
    std::ofstream m = dmgp::detail::open_out(dir / "rl_metrics.csv");
    m << "seed,model,velocity_mae,position_mae,mean_distance,reached,first_reach,sweeps,seconds\n";
    for (int k = 0; k < n; ++k) {
        const auto& r = res[static_cast<std::size_t>(k)];
        const auto seed = c.seed + static_cast<unsigned long long>(k % c.rl_seeds);
        const std::string name = transition_name(kinds[static_cast<std::size_t>(k / c.rl_seeds)]);
        if (!err[static_cast<std::size_t>(k)].empty())
            throw NumericalError("rl " + name + " seed " + std::to_string(seed) + ": " + err[static_cast<std::size_t>(k)]);
        m << seed << ',' << name << ',' << r.velocity_mae << ',' << r.position_mae << ',' << r.run.mean_distance << ','
          << (r.run.reached ? 1 : 0) << ',' << r.run.first_reach << ',' << r.sweeps << ',' << r.seconds << '\n';
        std::ofstream t = dmgp::detail::open_out(dir / ("trajectory_" + name + "_" + std::to_string(seed) + ".csv"));
        t << "step,pos,vel,action,reward\n";
        for (const auto& s : r.run.trajectory)
            t << s.step << ',' << s.state.pos << ',' << s.state.vel << ',' << s.action << ',' << s.reward << '\n';
        log << name << " seed " << seed << ": distance " << std::setprecision(4) << r.run.mean_distance
            << (r.run.reached ? " (reached)" : "") << ", velocity MAE " << r.velocity_mae << '\n';
    }
}

/// Entry point shared by the executable and the tests. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& errs = std::cerr)
{
    CLI::App app{"Dynamic multi-output Gaussian processes with spike-and-slab transfer"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<unsigned long long> seed;
    std::optional<int> jobs;
    std::optional<std::string> out;
    app.add_option("--config", config_path, "JSON configuration file");
    app.add_option("--seed", seed, "base random seed (overrides the config)");
    app.add_option("--jobs", jobs, "parallel workers (default: logical cores)");
    app.add_option("--out", out, "output directory (overrides the config)");
    const std::vector<std::string> names{"simulate", "fit", "predict", "tune", "benchmark", "rl"};
    for (const auto& n : names)
        app.add_subcommand(n)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, log, errs);
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        RunConfig c = defaults_for(cmd);
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in)
                throw IoError("cannot open config '" + config_path + "'");
            json j;
            try {
                j = json::parse(in);
            } catch (const json::parse_error& e) {
                throw ParseError(config_path + ": " + e.what());
            }
            c.load(j);
        }
        if (!c.command.empty() && c.command != cmd)
            throw ConfigError("config was resolved for '" + c.command + "', not '" + cmd + "'");
        c.command = cmd;
        if (seed)
            c.seed = *seed;
        if (jobs)
            c.jobs = *jobs;
        if (out)
            c.out = *out;
        if (c.jobs < 1)
            throw ConfigError("jobs must be at least 1");

        const auto dir = detail::out_dir(c);
        detail::write_json(dir / "resolved_config.json", c.to_json());
        if (cmd == "simulate")
            cmd_simulate(c, log);
        else if (cmd == "fit")
            cmd_fit(c, log);
        else if (cmd == "predict")
            cmd_predict(c, log);
        else if (cmd == "tune")
            cmd_tune(c, log);
        else if (cmd == "benchmark")
            cmd_benchmark(c, log);
        else
            cmd_rl(c, log);
        return 0;
    } catch (const std::exception& e) {
        errs << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace dmgp::cli
