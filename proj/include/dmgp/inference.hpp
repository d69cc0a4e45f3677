#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "objective.hpp"

namespace dmgp {

/// E[gamma] for one amplitude pair: eta p_slab / ((1 - eta) p_spike + eta p_slab), evaluated in log space.
inline double gamma_expectation(double cur, double prev, int gap, const SpikeSlabConfig& ss)
{
    if (ss.eta >= 1.0)
        return 1.0;
    if (ss.eta <= 0.0)
        return 0.0;
    const double log_slab = slab_logpdf(ss, cur, prev, gap).logp;
    const double log_spike = spike_logpdf(cur, ss.nu0).logp;
    const double z = std::log(ss.eta) - std::log1p(-ss.eta) + log_slab - log_spike;
    return 1.0 / (1.0 + std::exp(-z));
}

/// Posterior expectations of the slab indicators for every target-side amplitude series.
inline GammaPosterior e_step(const DynamicParams& params, const Dataset& data, const SpikeSlabConfig& ss)
{
    const auto& times = data.target.times;
    const Eigen::Index nm = data.target.size();
    GammaPosterior g;
    g.values.resize(data.num_outputs(), std::max<Eigen::Index>(nm - 1, 0));
    for (Eigen::Index j = 0; j < data.num_outputs(); ++j)
        for (Eigen::Index c = 1; c < nm; ++c)
            g.values(j, c - 1) = gamma_expectation(softplus(params.target_amp[j](c)), softplus(params.target_amp[j](c - 1)),
                                                   times[c] - times[c - 1], ss);
    return g;
}

inline GammaPosterior constant_gamma(const Dataset& data, double value)
{
    GammaPosterior g;
    g.values = Eigen::MatrixXd::Constant(data.num_outputs(), std::max<Eigen::Index>(data.target.size() - 1, 0), value);
    return g;
}

struct AdamConfig {
    double step = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// ADAM for maximization.
class Adam {
public:
    Adam(Eigen::Index n, AdamConfig cfg = {})
        : cfg_(cfg), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n))
    {
    }

    void ascend(Eigen::VectorXd& x, const Eigen::VectorXd& grad)
    {
        ++t_;
        m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
        v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
        x.array() += cfg_.step * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
    }

private:
    AdamConfig cfg_;
    Eigen::VectorXd m_, v_;
    long t_ = 0;
};

/// Which parameter groups are free, and whether their time series are tied to one value.
/// With `increments`, untied series are optimized as (first value, successive differences);
/// a linear change of coordinates that leaves the objective unchanged.
struct ParamSelection {
    bool sources = true;
    bool targets = true;
    bool tie_sources = false;
    bool tie_target = false;
    bool increments = false;
};

namespace detail {

// Calls f(series, tied) for every free time series (amplitude vectors, length-scale
// columns) and every free noise scalar (as a length-1 series, never tied).
template <class F>
void for_each_group(ParamArrays& p, const ParamSelection& sel, F&& f)
{
    if (sel.sources) {
        for (Eigen::Index i = 0; i < p.num_sources(); ++i) {
            f(Eigen::Ref<Eigen::VectorXd>(p.source_amp[i]), sel.tie_sources);
            for (Eigen::Index l = 0; l < p.source_ls[i].cols(); ++l)
                f(Eigen::Ref<Eigen::VectorXd>(p.source_ls[i].col(l)), sel.tie_sources);
            f(Eigen::Ref<Eigen::VectorXd>(p.source_noise.segment(i, 1)), false);
        }
    }
    if (sel.targets) {
        for (std::size_t j = 0; j < p.target_amp.size(); ++j) {
            f(Eigen::Ref<Eigen::VectorXd>(p.target_amp[j]), sel.tie_target);
            for (Eigen::Index l = 0; l < p.target_ls[j].cols(); ++l)
                f(Eigen::Ref<Eigen::VectorXd>(p.target_ls[j].col(l)), sel.tie_target);
        }
        Eigen::Map<Eigen::VectorXd> noise(&p.target_noise, 1);
        f(Eigen::Ref<Eigen::VectorXd>(noise), false);
    }
}

} // namespace detail

/// Flattens the selected parameters. Tied series contribute their first entry.
inline Eigen::VectorXd pack(ParamArrays p, const ParamSelection& sel)
{
    std::vector<double> out;
    detail::for_each_group(p, sel, [&](Eigen::Ref<Eigen::VectorXd> s, bool tied) {
        if (s.size() == 0)
            return;
        if (tied) {
            out.push_back(s(0));
        } else if (sel.increments) {
            out.push_back(s(0));
            for (Eigen::Index r = 1; r < s.size(); ++r)
                out.push_back(s(r) - s(r - 1));
        } else {
            out.insert(out.end(), s.data(), s.data() + s.size());
        }
    });
    return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

/// Inverse of pack; tied series are filled with a constant.
inline void unpack(const Eigen::VectorXd& x, const ParamSelection& sel, ParamArrays& p)
{
    Eigen::Index k = 0;
    detail::for_each_group(p, sel, [&](Eigen::Ref<Eigen::VectorXd> s, bool tied) {
        if (s.size() == 0)
            return;
        if (tied) {
            s.setConstant(x(k++));
        } else if (sel.increments) {
            s(0) = x(k++);
            for (Eigen::Index r = 1; r < s.size(); ++r)
                s(r) = s(r - 1) + x(k++);
        } else {
            s = x.segment(k, s.size());
            k += s.size();
        }
    });
    if (k != x.size())
        throw ContractError("packed vector length does not match the parameter selection");
}

/// Flattens a gradient to match pack; tied series sum their entries, increments
/// receive suffix sums.
inline Eigen::VectorXd pack_gradient(ParamArrays g, const ParamSelection& sel)
{
    std::vector<double> out;
    detail::for_each_group(g, sel, [&](Eigen::Ref<Eigen::VectorXd> s, bool tied) {
        if (s.size() == 0)
            return;
        if (tied) {
            out.push_back(s.sum());
        } else if (sel.increments) {
            std::vector<double> suffix(static_cast<std::size_t>(s.size()));
            double acc = 0.0;
            for (Eigen::Index r = s.size() - 1; r >= 0; --r)
                suffix[static_cast<std::size_t>(r)] = acc += s(r);
            out.insert(out.end(), suffix.begin(), suffix.end());
        } else {
            out.insert(out.end(), s.data(), s.data() + s.size());
        }
    });
    return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

/// Throws NumericalError naming the first non-finite entry.
inline void require_finite(double value, const Eigen::VectorXd& grad, const std::string& where)
{
    if (!std::isfinite(value))
        throw NumericalError(where + ": objective is not finite");
    for (Eigen::Index k = 0; k < grad.size(); ++k)
        if (!std::isfinite(grad(k)))
            throw NumericalError(where + ": gradient entry " + std::to_string(k) + " is not finite");
}

struct FitConfig {
    int k_out = 5;
    int k_in = 400;
    int batches = 4;
    AdamConfig adam;
    double gamma_init = 0.99;
    unsigned long long seed = 0;
    bool tie_sources = false;       // stationary source kernels
    int warm_start_epochs = 200;    // tied pre-fit of each output before the dynamic fit
    double warm_start_step = 0.05;
    bool increments = true;         // optimize untied series as first value plus differences
    double own_amp_init = 0.01;     // starting amplitude of the target's own kernel; <= 0 keeps the random draw

    void validate() const
    {
        if (k_out < 1 || k_in < 1 || batches < 1)
            throw ContractError("k_out, k_in and batches must all be at least 1");
        if (warm_start_epochs < 0)
            throw ContractError("warm_start_epochs must be non-negative");
    }
};

struct FitResult {
    DynamicParams params;
    GammaPosterior gamma;
    std::vector<double> trace;
    double wallclock = 0.0;
};

/// Random contiguous partition of 0..n-1 into `batches` chunks with a random
/// circular offset, returned in random order.
inline std::vector<std::vector<Eigen::Index>> target_batches(Eigen::Index n, int batches, std::mt19937_64& rng)
{
    const Eigen::Index b = std::clamp<Eigen::Index>(batches, 1, std::max<Eigen::Index>(n, 1));
    std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(b));
    if (b == 1) {
        out[0] = all_rows(n);
        return out;
    }
    const Eigen::Index offset = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::Index pos = (k + offset) % n;
        out[static_cast<std::size_t>(k * b / n)].push_back(pos);
    }
    for (auto& chunk : out)
        std::sort(chunk.begin(), chunk.end());
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

/// Stationary parameters of a single output: amplitude, per-dimension length-scale, noise std.
struct StationaryFit {
    double amp = 1.0;
    Eigen::VectorXd ls;
    double noise = 0.1;
    double log_likelihood = 0.0;
};

namespace detail {

inline Dataset single_output(const OutputSeries& s)
{
    Dataset d;
    d.target = s;
    return d;
}

inline DynamicParams single_output_params(const OutputSeries& s, double amp, const Eigen::VectorXd& ls, double noise)
{
    DynamicParams p;
    p.target_amp.push_back(Eigen::VectorXd::Constant(s.size(), softplus_inverse(amp)));
    Eigen::MatrixXd l(s.size(), s.dim());
    for (Eigen::Index a = 0; a < s.size(); ++a)
        for (Eigen::Index c = 0; c < s.dim(); ++c)
            l(a, c) = softplus_inverse(ls(c));
    p.target_ls.push_back(l);
    p.source_noise = Eigen::VectorXd(0);
    p.target_noise = softplus_inverse(noise);
    return p;
}

// Candidate length-scales spanning the input spacing to the input range, per dimension.
inline std::vector<Eigen::VectorXd> length_scale_grid(const Eigen::MatrixXd& x)
{
    const Eigen::Index d = x.cols();
    Eigen::VectorXd lo(d), hi(d);
    for (Eigen::Index l = 0; l < d; ++l) {
        std::vector<double> v(x.col(l).data(), x.col(l).data() + x.rows());
        std::sort(v.begin(), v.end());
        double span = v.back() - v.front();
        double step = span;
        for (std::size_t a = 1; a < v.size(); ++a)
            if (v[a] - v[a - 1] > 1e-12 * std::max(1.0, span))
                step = std::min(step, v[a] - v[a - 1]);
        if (!(span > 0.0))
            span = step = 1.0;
        lo(l) = 0.25 * step * step;
        hi(l) = 0.5 * span * span;
    }
    constexpr int kCount = 14;
    std::vector<Eigen::VectorXd> grid;
    for (int c = 0; c < kCount; ++c) {
        const double f = static_cast<double>(c) / (kCount - 1);
        Eigen::VectorXd ls(d);
        for (Eigen::Index l = 0; l < d; ++l)
            ls(l) = lo(l) * std::pow(hi(l) / lo(l), f);
        grid.push_back(ls);
    }
    return grid;
}

} // namespace detail

/// Maximum-likelihood stationary fit of one output: grid over length-scales,
/// then ADAM on (amplitude, length-scales, noise) with everything tied over time.
inline StationaryFit fit_stationary(const OutputSeries& s, int epochs, double step, double noise_floor = 0.0)
{
    s.validate();
    StationaryFit best;
    const Dataset data = detail::single_output(s);
    const double var = s.size() > 1 ? std::max((s.observations.array() - s.observations.mean()).square().mean(), 1e-6)
                                    : std::max(s.observations.squaredNorm(), 1e-2);
    // Unit kernel has k(x,x) = 2^{-d/2}; choose amplitude so the prior variance is 0.9 var.
    const double amp0 = std::sqrt(0.9 * var * std::pow(2.0, 0.5 * static_cast<double>(s.dim())));
    const double noise0 = std::max(std::sqrt(0.1 * var), noise_floor + 1e-6);
    best.log_likelihood = -std::numeric_limits<double>::infinity();
    for (const auto& ls : detail::length_scale_grid(s.inputs)) {
        const DynamicParams p = detail::single_output_params(s, amp0, ls, noise0);
        double ll;
        try {
            ll = log_marginal_likelihood(data, p.constrained());
        } catch (const NumericalError&) {
            continue;
        }
        if (ll > best.log_likelihood) {
            best = {amp0, ls, noise0, ll};
        }
    }
    if (!std::isfinite(best.log_likelihood))
        throw NumericalError("stationary fit: no length-scale candidate could be factorized");

    const ParamSelection sel{false, true, false, true};
    DynamicParams p = detail::single_output_params(s, best.amp, best.ls, best.noise);
    Eigen::VectorXd x = pack(p, sel);
    Adam adam(x.size(), AdamConfig{step});
    ObjectiveOptions opt;
    opt.target_priors = false;
    opt.source_priors = false;
    const GammaPosterior gamma = constant_gamma(data, 1.0);
    Eigen::VectorXd best_x = x;
    double best_value = best.log_likelihood;
    for (int e = 0; e < epochs; ++e) {
        const ObjectiveValue v = q_objective(p, gamma, data, SpikeSlabConfig{}, opt);
        const Eigen::VectorXd g = pack_gradient(v.gradient, sel);
        require_finite(v.value, g, "stationary fit");
        if (v.value > best_value) {
            best_value = v.value;
            best_x = x;
        }
        adam.ascend(x, g);
        unpack(x, sel, p);
        if (noise_floor > 0.0 && softplus(p.target_noise) < noise_floor) {
            p.target_noise = softplus_inverse(noise_floor);
            x = pack(p, sel);
        }
    }
    unpack(x, sel, p);
    const double final_value = log_marginal_likelihood(data, p.constrained());
    if (final_value > best_value) {
        best_value = final_value;
        best_x = x;
    }
    unpack(best_x, sel, p);
    const KernelParams kp = p.constrained();
    best.amp = kp.target_amp[0](0);
    best.ls = kp.target_ls[0].row(0).transpose();
    best.noise = kp.target_noise;
    best.log_likelihood = best_value;
    return best;
}

/// Maximizes the source marginal likelihood plus source priors. Each source is
/// first fitted stationary; unless `fit.tie_sources`, its time series are then
/// refined for k_in epochs. Target entries of `start` are returned unchanged.
inline DynamicParams init_sources(const Dataset& data, const SpikeSlabConfig& ss, const FitConfig& fit,
                                  DynamicParams start)
{
    data.validate();
    data.require_sources();
    ss.validate();
    fit.validate();
    start.check_shapes(data);
    const Eigen::Index d = data.dim();
    for (Eigen::Index i = 0; i < data.num_sources(); ++i) {
        const auto& s = data.sources[i];
        const StationaryFit st = fit_stationary(s, fit.warm_start_epochs, fit.warm_start_step);
        start.source_amp[i].setConstant(softplus_inverse(st.amp));
        for (Eigen::Index l = 0; l < d; ++l)
            start.source_ls[i].col(l).setConstant(softplus_inverse(st.ls(l)));
        start.source_noise(i) = softplus_inverse(st.noise);
    }
    if (fit.tie_sources)
        return start;

    const ParamSelection sel{true, false, false, false, fit.increments};
    ObjectiveOptions opt;
    opt.target_rows = std::vector<Eigen::Index>{};
    opt.target_priors = false;
    const GammaPosterior gamma = constant_gamma(data, fit.gamma_init);
    Eigen::VectorXd x = pack(start, sel);
    Adam adam(x.size(), fit.adam);
    for (int e = 0; e < fit.k_in; ++e) {
        const ObjectiveValue v = q_objective(start, gamma, data, ss, opt);
        const Eigen::VectorXd g = pack_gradient(v.gradient, sel);
        require_finite(v.value, g, "source initialization");
        adam.ascend(x, g);
        unpack(x, sel, start);
    }
    return start;
}

/// Initial target-side parameters: length-scales of the cross kernels copied from the
/// (time-averaged) source kernels, the target's own kernel from a stationary fit. The own
/// amplitude starts near zero so the sources get the first chance to explain the target.
inline void init_target_side(const Dataset& data, const FitConfig& fit, DynamicParams& p)
{
    const Eigen::Index ns = data.num_sources();
    for (Eigen::Index i = 0; i < ns; ++i) {
        const Eigen::RowVectorXd mean_ls = p.source_ls[i].unaryExpr([](double u) { return softplus(u); }).colwise().mean();
        for (Eigen::Index l = 0; l < data.dim(); ++l)
            p.target_ls[i].col(l).setConstant(softplus_inverse(mean_ls(l)));
    }
    const StationaryFit st = fit_stationary(data.target, fit.warm_start_epochs, fit.warm_start_step);
    for (Eigen::Index l = 0; l < data.dim(); ++l)
        p.target_ls[ns].col(l).setConstant(softplus_inverse(st.ls(l)));
    if (fit.own_amp_init > 0.0)
        p.target_amp[static_cast<std::size_t>(ns)].setConstant(softplus_inverse(fit.own_amp_init));
}

/// Full-batch value of the objective.
inline double full_objective(const DynamicParams& p, const GammaPosterior& gamma, const Dataset& data,
                             const SpikeSlabConfig& ss, bool source_priors = true)
{
    ObjectiveOptions opt;
    opt.source_priors = source_priors;
    return q_objective(p, gamma, data, ss, opt).value;
}

/// Runs `epochs` mini-batch ADAM epochs on the objective over the selected parameters.
inline void m_step(DynamicParams& p, const GammaPosterior& gamma, const Dataset& data, const SpikeSlabConfig& ss,
                   const FitConfig& fit, const ParamSelection& sel, Adam& adam, std::mt19937_64& rng, int epochs,
                   bool source_priors = true)
{
    Eigen::VectorXd x = pack(p, sel);
    for (int e = 0; e < epochs; ++e) {
        const auto chunks = target_batches(data.target.size(), fit.batches, rng);
        for (const auto& rows : chunks) {
            ObjectiveOptions opt;
            opt.target_rows = rows;
            opt.source_weight = 1.0 / static_cast<double>(chunks.size());
            opt.source_priors = source_priors;
            const ObjectiveValue v = q_objective(p, gamma, data, ss, opt);
            const Eigen::VectorXd g = pack_gradient(v.gradient, sel);
            require_finite(v.value, g, "M-step");
            adam.ascend(x, g);
            unpack(x, sel, p);
        }
    }
}

/// EM fit: source initialization, then k_out rounds of (E-step, k_in mini-batch ADAM epochs).
inline FitResult fit(const Dataset& data, const SpikeSlabConfig& ss, const FitConfig& cfg)
{
    const auto t0 = std::chrono::steady_clock::now();
    data.validate();
    data.require_sources();
    ss.validate();
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    DynamicParams p = initial_params(data, rng);
    p = init_sources(data, ss, cfg, p);
    init_target_side(data, cfg, p);

    const ParamSelection sel{true, true, cfg.tie_sources, false, cfg.increments};
    const bool source_priors = !cfg.tie_sources;
    Adam adam(pack(p, sel).size(), cfg.adam);
    FitResult out;
    out.gamma = constant_gamma(data, cfg.gamma_init);
    for (int k = 0; k < cfg.k_out; ++k) {
        if (k > 0)
            out.gamma = e_step(p, data, ss);
        m_step(p, out.gamma, data, ss, cfg, sel, adam, rng, cfg.k_in, source_priors);
        out.trace.push_back(full_objective(p, out.gamma, data, ss, source_priors));
    }
    out.gamma = e_step(p, data, ss);
    out.params = std::move(p);
    out.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

} // namespace dmgp
