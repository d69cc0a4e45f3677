#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "baselines.hpp"
#include "model.hpp"

namespace dmgp {

/// Synthetic benchmark configuration. Sources come in four families; m = 4k + 1.
struct CaseSpec {
    int case_id = 1;
    int k = 1;
    int n = 130;
    double noise = 0.3;
    double phase_sd = 0.2;       // source phase offsets e_i
    double coef_sd = 0.2;        // target coefficient perturbations a_i'
    int gap_length = 10;
    std::vector<std::pair<Stamp, Stamp>> gap_windows{{10, 30}, {50, 70}, {90, 110}};
    unsigned long long seed = 0;

    void validate() const
    {
        if (case_id != 1 && case_id != 2)
            throw ContractError("case must be 1 or 2");
        if (k < 1 || n < 2 || !(noise >= 0.0))
            throw ContractError("invalid case dimensions or noise");
        for (const auto& [lo, hi] : gap_windows)
            if (lo < 1 || hi > n || hi - lo + 1 < gap_length)
                throw ContractError("gap window must fit inside the time range and hold a full gap");
    }
};

/// A dataset with held-out target observations.
struct GapSplit {
    Dataset train;
    std::vector<Stamp> test_times;
    Eigen::MatrixXd test_inputs;
    Eigen::VectorXd test_truth;
};

/// Target mixing coefficients a_{1..4,t} of the synthetic cases.
inline Eigen::Vector4d case_coefficients(int case_id, double t, const Eigen::Vector4d& a)
{
    Eigen::Vector4d c = Eigen::Vector4d::Zero();
    const double pi = std::numbers::pi;
    if (case_id == 1) {
        c(0) = t < 40 ? 2.0 + 2.0 * a(0) : 0.0;
        c(1) = (t >= 40 && t < 80) ? 2.0 + 2.0 * a(1) : (t >= 80 ? 1.0 + a(1) : 0.0);
        c(2) = t >= 80 ? 1.0 + a(2) : 0.0;
    } else {
        c(0) = t < 40 ? (2.0 + a(0)) * std::cos(pi * t / 120.0) + 0.5 : 0.0;
        c(1) = (t >= 40 && t < 130) ? (2.0 + a(1)) * std::sin(pi * t / 120.0 - pi / 6.0) + 0.5 : 0.0;
        c(2) = (t >= 80 && t < 130) ? (2.0 + a(2)) * std::sin(pi * t / 120.0 - pi / 2.0) + 0.5 : 0.0;
    }
    return c;
}

/// Noise-free source family value Y_f(x) for f = 1..4 with phase e.
inline double source_family(int f, double x, double e)
{
    const double pi = std::numbers::pi;
    switch (f) {
    case 1:
        return 3.0 * std::sin(pi * x / 20.0 + e);
    case 2:
        return 2.0 * std::sin(2.0 * pi * x / 20.0 + e) * std::exp(0.5 * (std::fmod(x, 40.0) - 1.0));
    case 3:
        return 3.0 * std::sin(4.0 * pi * x / 20.0 + e);
    case 4:
        return 2.0 * std::sin(5.0 * pi * x / 20.0 + e);
    default:
        throw ContractError("source family must be 1..4");
    }
}

/// Noise-free target value with explicit coefficient perturbations.
inline double case_target(int case_id, double x, const Eigen::Vector4d& a)
{
    const double pi = std::numbers::pi;
    const Eigen::Vector4d c = case_coefficients(case_id, x, a);
    return c(0) * std::sin(pi * x / 20.0) + c(1) * std::sin(2.0 * pi * x / 20.0) + c(2) * std::sin(4.0 * pi * x / 20.0)
        + c(3) * std::sin(5.0 * pi * x / 20.0);
}

/// Full synthetic dataset (no gaps): 4k sources then the target, all on stamps 1..n with x_t = t.
/// Source s (0-based) follows family (s mod 4) + 1.
inline Dataset generate_case(const CaseSpec& spec)
{
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> phase(0.0, spec.phase_sd), coef(0.0, spec.coef_sd), eps(0.0, 1.0);
    const int ns = 4 * spec.k;
    std::vector<double> e(static_cast<std::size_t>(ns));
    for (auto& v : e)
        v = phase(rng);
    Eigen::Vector4d a;
    for (int q = 0; q < 4; ++q)
        a(q) = coef(rng);

    auto series = [&](int id, auto value) {
        OutputSeries s;
        s.id = id;
        s.inputs.resize(spec.n, 1);
        s.observations.resize(spec.n);
        for (int t = 1; t <= spec.n; ++t) {
            s.times.push_back(t);
            s.inputs(t - 1, 0) = t;
            s.observations(t - 1) = value(static_cast<double>(t)) + spec.noise * eps(rng);
        }
        return s;
    };
    Dataset data;
    for (int s = 0; s < ns; ++s)
        data.sources.push_back(series(s, [&](double x) { return source_family(s % 4 + 1, x, e[static_cast<std::size_t>(s)]); }));
    data.target = series(ns, [&](double x) { return case_target(spec.case_id, x, a); });
    return data;
}

/// Removes the target rows at `stamps` (which must be observed) and returns them as the test set.
inline GapSplit remove_target_stamps(const Dataset& full, std::vector<Stamp> stamps)
{
    std::sort(stamps.begin(), stamps.end());
    stamps.erase(std::unique(stamps.begin(), stamps.end()), stamps.end());
    const auto& tgt = full.target;
    GapSplit split;
    split.train.sources = full.sources;
    split.train.target.id = tgt.id;
    std::vector<Eigen::Index> keep, drop;
    for (Eigen::Index r = 0; r < tgt.size(); ++r)
        (std::binary_search(stamps.begin(), stamps.end(), tgt.times[r]) ? drop : keep).push_back(r);
    if (static_cast<std::size_t>(drop.size()) != stamps.size())
        throw ContractError("every removed stamp must be an observed target stamp");
    auto fill = [&](const std::vector<Eigen::Index>& rows, std::vector<Stamp>& times, Eigen::MatrixXd& x,
                    Eigen::VectorXd& y) {
        x.resize(static_cast<Eigen::Index>(rows.size()), tgt.dim());
        y.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t q = 0; q < rows.size(); ++q) {
            times.push_back(tgt.times[rows[q]]);
            x.row(static_cast<Eigen::Index>(q)) = tgt.inputs.row(rows[q]);
            y(static_cast<Eigen::Index>(q)) = tgt.observations(rows[q]);
        }
    };
    fill(keep, split.train.target.times, split.train.target.inputs, split.train.target.observations);
    fill(drop, split.test_times, split.test_inputs, split.test_truth);
    return split;
}

/// One random run of `length` stamps inside each window [lo, hi]; start uniform on lo..hi-length+1.
inline std::vector<Stamp> draw_gaps(const std::vector<std::pair<Stamp, Stamp>>& windows, int length, std::mt19937_64& rng)
{
    std::vector<Stamp> out;
    for (const auto& [lo, hi] : windows) {
        if (hi - lo + 1 < length)
            throw ContractError("gap window shorter than the gap");
        const Stamp start = std::uniform_int_distribution<Stamp>(lo, hi - length + 1)(rng);
        for (Stamp t = start; t < start + length; ++t)
            out.push_back(t);
    }
    return out;
}

/// Generates a case and removes its gaps. Gap positions use a stream derived from the seed.
inline GapSplit generate_case_with_gaps(const CaseSpec& spec)
{
    const Dataset full = generate_case(spec);
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    return remove_target_stamps(full, draw_gaps(spec.gap_windows, spec.gap_length, rng));
}

/// Synthetic stand-in for segmented motion data: `segments` consecutive segments of
/// `segment_length` stamps, 11 sources, and a target coupled to a different pair of sources
/// in each segment. One length-`gap_length` run of the target is removed per segment.
struct SegmentSpec {
    int outputs = 12;
    int segments = 3;
    int segment_length = 30;
    int gap_length = 10;
    double noise = 0.1;
    unsigned long long seed = 0;
};

inline GapSplit generate_segmented(const SegmentSpec& spec)
{
    if (spec.outputs < 3 || spec.segments < 1 || spec.segment_length < spec.gap_length + 2)
        throw ContractError("invalid segmented-data configuration");
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> freq(0.15, 0.6), phase(0.0, 2.0 * std::numbers::pi), amp(0.8, 1.6);
    std::normal_distribution<double> eps(0.0, 1.0);
    const int ns = spec.outputs - 1;
    const int n = spec.segments * spec.segment_length;
    std::vector<double> w(ns), ph(ns), am(ns);
    for (int i = 0; i < ns; ++i) {
        w[i] = freq(rng);
        ph[i] = phase(rng);
        am[i] = amp(rng);
    }
    auto latent = [&](int i, double x) { return am[i] * std::sin(w[i] * x + ph[i]); };
    // Each segment couples to two distinct sources.
    std::vector<int> order(ns);
    for (int i = 0; i < ns; ++i)
        order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    Dataset full;
    for (int i = 0; i < ns; ++i) {
        OutputSeries s;
        s.id = i;
        s.inputs.resize(n, 1);
        s.observations.resize(n);
        for (int t = 1; t <= n; ++t) {
            s.times.push_back(t);
            s.inputs(t - 1, 0) = t;
            s.observations(t - 1) = latent(i, t) + spec.noise * eps(rng);
        }
        full.sources.push_back(std::move(s));
    }
    OutputSeries tgt;
    tgt.id = ns;
    tgt.inputs.resize(n, 1);
    tgt.observations.resize(n);
    for (int t = 1; t <= n; ++t) {
        const int g = std::min((t - 1) / spec.segment_length, spec.segments - 1);
        const int s1 = order[(2 * g) % ns], s2 = order[(2 * g + 1) % ns];
        tgt.times.push_back(t);
        tgt.inputs(t - 1, 0) = t;
        tgt.observations(t - 1) = 0.8 * latent(s1, t) + 0.6 * latent(s2, t) + spec.noise * eps(rng);
    }
    full.target = std::move(tgt);
    std::vector<std::pair<Stamp, Stamp>> windows;
    for (int g = 0; g < spec.segments; ++g)
        windows.emplace_back(g * spec.segment_length + 2, (g + 1) * spec.segment_length - 1);
    return remove_target_stamps(full, draw_gaps(windows, spec.gap_length, rng));
}

/// Whether source family f (1..4) drives the target of a synthetic case at time t.
inline bool designed_active(int case_id, int family, double t)
{
    if (case_id != 1 && case_id != 2)
        throw ContractError("case must be 1 or 2");
    switch (family) {
    case 1:
        return t < 40;
    case 2:
        return t >= 40;
    case 3:
        return t >= 80;
    default:
        return false;
    }
}

/// Fitted support of source i at target row r: E[gamma] >= 0.5 and amplitude above 1e-3.
inline bool fitted_active(const FitResult& fit, Eigen::Index i, Eigen::Index r)
{
    return fit.gamma.at(i, r) >= 0.5 && softplus(fit.params.target_amp[static_cast<std::size_t>(i)](r)) > 1e-3;
}

struct ChangeCheck {
    Eigen::Index source = 0;
    Stamp designed = 0;
    std::optional<Stamp> detected; // nearest fitted switch of the same source
};

struct SupportReport {
    double match = 0.0; // fraction of (source, target stamp) cells classified as designed
    std::vector<ChangeCheck> changes;

    /// Every designed change has a fitted switch within `tolerance` stamps.
    bool changes_within(int tolerance) const
    {
        for (const auto& c : changes)
            if (!c.detected || std::abs(*c.detected - c.designed) > tolerance)
                return false;
        return true;
    }
};

/// Compares the fitted source support on the training target stamps with the designed
/// pattern of a synthetic case (source s follows family s mod 4 + 1).
inline SupportReport support_report(const FitResult& fit, const Dataset& data, int case_id)
{
    SupportReport rep;
    const auto& times = data.target.times;
    const Eigen::Index n = data.target.size();
    Eigen::Index hits = 0, cells = 0;
    for (Eigen::Index i = 0; i < data.num_sources(); ++i) {
        const int fam = static_cast<int>(i % 4) + 1;
        std::vector<Stamp> switches;
        for (Eigen::Index r = 0; r < n; ++r) {
            const bool f = fitted_active(fit, i, r);
            hits += f == designed_active(case_id, fam, times[static_cast<std::size_t>(r)]);
            ++cells;
            if (r > 0 && f != fitted_active(fit, i, r - 1))
                switches.push_back(times[static_cast<std::size_t>(r)]);
        }
        for (Eigen::Index r = 1; r < n; ++r) {
            const Stamp t = times[static_cast<std::size_t>(r)];
            const Stamp tp = times[static_cast<std::size_t>(r - 1)];
            if (designed_active(case_id, fam, t) == designed_active(case_id, fam, tp))
                continue;
            // Designed switch happens at the first stamp of the new regime.
            Stamp at = tp + 1;
            while (designed_active(case_id, fam, at) == designed_active(case_id, fam, tp))
                ++at;
            ChangeCheck c{i, at, std::nullopt};
            for (Stamp s : switches)
                if (!c.detected || std::abs(s - at) < std::abs(*c.detected - at))
                    c.detected = s;
            rep.changes.push_back(c);
        }
    }
    rep.match = cells ? static_cast<double>(hits) / static_cast<double>(cells) : 0.0;
    return rep;
}

/// Median E[gamma] over (source, pair) cells where the source is designed inactive.
inline double inactive_gamma_median(const FitResult& fit, const Dataset& data, int case_id)
{
    std::vector<double> v;
    const auto& times = data.target.times;
    for (Eigen::Index i = 0; i < data.num_sources(); ++i)
        for (Eigen::Index c = 0; c < fit.gamma.values.cols(); ++c)
            if (!designed_active(case_id, static_cast<int>(i % 4) + 1, times[static_cast<std::size_t>(c + 1)]))
                v.push_back(fit.gamma.values(i, c));
    if (v.empty())
        throw ContractError("no designed-inactive cells");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Mean absolute error.
inline double mae(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth)
{
    if (pred.size() != truth.size())
        throw ContractError("mae: length mismatch");
    if (pred.size() == 0)
        throw ContractError("mae: empty input");
    return (pred - truth).cwiseAbs().mean();
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

/// Continuous ranked probability score of N(mean, variance) against y.
inline double crps(double mean, double variance, double y)
{
    if (!(variance > 0.0))
        return std::abs(mean - y);
    const double s = std::sqrt(variance);
    const double z = (y - mean) / s;
    return s * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / std::sqrt(std::numbers::pi));
}

/// Divides each output by its largest absolute observation and multiplies by `bound`.
/// Returns the per-output factors applied (sources first, target last).
inline Eigen::VectorXd rescale_max_abs(Dataset& data, double bound = 2.0)
{
    Eigen::VectorXd f(data.num_outputs());
    auto apply = [&](OutputSeries& s, Eigen::Index k) {
        const double mx = s.size() ? s.observations.cwiseAbs().maxCoeff() : 0.0;
        f(k) = mx > 0.0 ? bound / mx : 1.0;
        s.observations *= f(k);
    };
    for (Eigen::Index i = 0; i < data.num_sources(); ++i)
        apply(data.sources[i], i);
    apply(data.target, data.num_sources());
    return f;
}

/// Keeps every `stride`-th observation of each output.
inline Dataset downsample(const Dataset& data, int stride)
{
    if (stride < 1)
        throw ContractError("stride must be at least 1");
    auto thin = [&](const OutputSeries& s) {
        OutputSeries o;
        o.id = s.id;
        std::vector<Eigen::Index> rows;
        for (Eigen::Index r = 0; r < s.size(); r += stride)
            rows.push_back(r);
        o.inputs.resize(static_cast<Eigen::Index>(rows.size()), s.dim());
        o.observations.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t q = 0; q < rows.size(); ++q) {
            o.times.push_back(s.times[rows[q]]);
            o.inputs.row(static_cast<Eigen::Index>(q)) = s.inputs.row(rows[q]);
            o.observations(static_cast<Eigen::Index>(q)) = s.observations(rows[q]);
        }
        return o;
    };
    Dataset out;
    for (const auto& s : data.sources)
        out.sources.push_back(thin(s));
    out.target = thin(data.target);
    return out;
}

enum class Method { Gp, MgpL1, DmgpSs };

inline std::string method_name(Method m)
{
    switch (m) {
    case Method::Gp:
        return "GP";
    case Method::MgpL1:
        return "MGP-L1";
    case Method::DmgpSs:
        return "DMGP-SS";
    }
    return "?";
}

inline Method parse_method(const std::string& s)
{
    for (Method m : {Method::Gp, Method::MgpL1, Method::DmgpSs})
        if (method_name(m) == s)
            return m;
    throw ContractError("unknown method '" + s + "' (expected GP, MGP-L1 or DMGP-SS)");
}

/// Per-method settings used by the benchmark harness.
struct MethodSettings {
    SpikeSlabConfig ss;
    FitConfig fit;
    GpConfig gp;
    MgpL1Config mgp;
};

/// Defaults for the synthetic cases: hard slab (0.02, 0.1) for Case 1, soft slab
/// (0.01, 0.1, rho 0.9) for Case 2; source kernels are stationary in both.
inline MethodSettings case_settings(int case_id)
{
    MethodSettings m;
    if (case_id == 2) {
        m.ss.nu0 = 0.01;
        m.ss.slab = SoftSlab{0.1, 0.9};
    } else {
        m.ss.nu0 = 0.02;
        m.ss.slab = HardSlab{0.1};
    }
    m.fit.tie_sources = true;
    return m;
}

struct ReplicationResult {
    int replication = 0;
    Method method = Method::Gp;
    double mae = 0.0;
    double crps = 0.0;
    double seconds = 0.0;
    bool ok = true;
    std::string error;
    std::vector<Prediction> predictions;
    std::optional<FitResult> fit; // DMGP-SS only
};

struct MethodSummary {
    Method method = Method::Gp;
    int runs = 0;
    int failures = 0;
    double mae_mean = 0.0, mae_sd = 0.0;
    double crps_mean = 0.0, crps_sd = 0.0;
    double seconds_mean = 0.0;
};

struct BenchmarkReport {
    std::vector<ReplicationResult> rows;

    MethodSummary summary(Method m) const
    {
        MethodSummary s;
        s.method = m;
        std::vector<double> a, c, t;
        for (const auto& r : rows) {
            if (r.method != m)
                continue;
            if (!r.ok) {
                ++s.failures;
                continue;
            }
            a.push_back(r.mae);
            c.push_back(r.crps);
            t.push_back(r.seconds);
        }
        s.runs = static_cast<int>(a.size());
        auto mean_sd = [](const std::vector<double>& v, double& mean, double& sd) {
            if (v.empty())
                return;
            mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            double ss = 0.0;
            for (double x : v)
                ss += (x - mean) * (x - mean);
            sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        };
        double unused = 0.0;
        mean_sd(a, s.mae_mean, s.mae_sd);
        mean_sd(c, s.crps_mean, s.crps_sd);
        mean_sd(t, s.seconds_mean, unused);
        return s;
    }
};

/// Fits one method on `split.train`, predicts the held-out stamps and scores them.
inline ReplicationResult evaluate_method(const GapSplit& split, Method method, const MethodSettings& settings,
                                         unsigned long long seed)
{
    ReplicationResult r;
    r.method = method;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        switch (method) {
        case Method::Gp:
            r.predictions = predict_gp(fit_gp(split.train.target, settings.gp), split.test_times, split.test_inputs);
            break;
        case Method::MgpL1: {
            MgpL1Config cfg = settings.mgp;
            cfg.seed = seed;
            const MgpL1Fit f = fit_mgp_l1(split.train, cfg);
            r.predictions = predict_mgp_l1(f.params, split.train, split.test_times, split.test_inputs);
            break;
        }
        case Method::DmgpSs: {
            FitConfig cfg = settings.fit;
            cfg.seed = seed;
            r.fit = fit(split.train, settings.ss, cfg);
            r.predictions = predict_at(*r.fit, split.train, split.test_times, split.test_inputs, settings.ss);
            break;
        }
        }
        Eigen::VectorXd mu(static_cast<Eigen::Index>(r.predictions.size()));
        double c = 0.0;
        for (std::size_t q = 0; q < r.predictions.size(); ++q) {
            mu(static_cast<Eigen::Index>(q)) = r.predictions[q].mean;
            c += crps(r.predictions[q].mean, r.predictions[q].variance, split.test_truth(static_cast<Eigen::Index>(q)));
        }
        r.mae = mae(mu, split.test_truth);
        r.crps = c / static_cast<double>(r.predictions.size());
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

/// Replication harness: replication r uses seed base_seed + r for data and fits, so results
/// do not depend on `jobs`. Failed fits are recorded (ok = false) and excluded from summaries.
template <class Generate>
BenchmarkReport run_replications(Generate&& generate, const std::vector<Method>& methods, int replications,
                                 const MethodSettings& settings, unsigned long long base_seed, int jobs = 1)
{
    if (replications < 1)
        throw ContractError("replications must be at least 1");
    std::vector<std::vector<ReplicationResult>> per(static_cast<std::size_t>(replications));
    parallel_for(replications, jobs, [&](int r) {
        const unsigned long long seed = base_seed + static_cast<unsigned long long>(r);
        std::vector<ReplicationResult>& out = per[static_cast<std::size_t>(r)];
        try {
            const GapSplit split = generate(seed);
            for (Method m : methods) {
                out.push_back(evaluate_method(split, m, settings, seed));
                out.back().replication = r;
            }
        } catch (const std::exception& e) {
            for (Method m : methods) {
                ReplicationResult f;
                f.replication = r;
                f.method = m;
                f.ok = false;
                f.error = e.what();
                out.push_back(std::move(f));
            }
        }
    });
    BenchmarkReport rep;
    for (auto& v : per)
        for (auto& r : v) {
            if (!r.ok)
                std::cerr << "warning: replication " << r.replication << " " << method_name(r.method)
                          << " failed: " << r.error << "\n";
            rep.rows.push_back(std::move(r));
        }
    return rep;
}

inline BenchmarkReport run_benchmark(const CaseSpec& base, const std::vector<Method>& methods, int replications,
                                     const MethodSettings& settings, int jobs = 1)
{
    return run_replications(
        [&](unsigned long long seed) {
            CaseSpec spec = base;
            spec.seed = seed;
            return generate_case_with_gaps(spec);
        },
        methods, replications, settings, base.seed, jobs);
}

inline BenchmarkReport run_segmented_benchmark(const SegmentSpec& base, const std::vector<Method>& methods,
                                               int replications, const MethodSettings& settings, int jobs = 1)
{
    return run_replications(
        [&](unsigned long long seed) {
            SegmentSpec spec = base;
            spec.seed = seed;
            return generate_segmented(spec);
        },
        methods, replications, settings, base.seed, jobs);
}

/// Mean wall-clock seconds of one full objective evaluation (value and gradient).
inline double objective_seconds(const Dataset& data, int repeats, unsigned long long seed = 0)
{
    std::mt19937_64 rng(seed);
    const DynamicParams p = initial_params(data, rng);
    const GammaPosterior g = constant_gamma(data, 0.99);
    const auto t0 = std::chrono::steady_clock::now();
    for (int k = 0; k < repeats; ++k)
        (void)q_objective(p, g, data, SpikeSlabConfig{}, {});
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / std::max(repeats, 1);
}

} // namespace dmgp
