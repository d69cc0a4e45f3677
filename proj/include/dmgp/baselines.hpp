#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "inference.hpp"
#include "prediction.hpp"

namespace dmgp {

/// Single-output GP on the target alone (squared-exponential kernel, ML hyperparameters).
struct GpConfig {
    int epochs = 400;
    double step = 0.05;
};

struct GpFit {
    StationaryFit kernel;
    OutputSeries target;
};

inline GpFit fit_gp(const OutputSeries& target, const GpConfig& cfg = {})
{
    if (target.size() == 0)
        throw ContractError("GP baseline needs at least one target observation");
    return {fit_stationary(target, cfg.epochs, cfg.step), target};
}

inline std::vector<Prediction> predict_gp(const GpFit& fit, std::span<const Stamp> stamps, const Eigen::MatrixXd& x)
{
    if (x.rows() != static_cast<Eigen::Index>(stamps.size()))
        throw ContractError("one input row is needed per query stamp");
    const Dataset data = detail::single_output(fit.target);
    const DynamicParams p = detail::single_output_params(fit.target, fit.kernel.amp, fit.kernel.ls, fit.kernel.noise);
    const Predictor pred(data, p.constrained());
    TargetKernelsAt k;
    k.amp = Eigen::VectorXd::Constant(1, fit.kernel.amp);
    k.ls = fit.kernel.ls.transpose();
    std::vector<Prediction> out;
    for (std::size_t q = 0; q < stamps.size(); ++q)
        out.push_back(pred.predict(x.row(static_cast<Eigen::Index>(q)).transpose(), k, stamps[q]));
    return out;
}

/// Static convolved MGP with an L1 penalty lambda * sum_i alpha_im on the source-to-target
/// amplitudes; lambda chosen by contiguous-block cross-validation on the target.
struct MgpL1Config {
    std::vector<double> lambdas{0.1, 0.3, 1.0, 3.0, 10.0};
    int folds = 3;
    int epochs = 400;
    int cv_epochs = 200;
    double step = 0.05;
    int warm_start_epochs = 200;
    unsigned long long seed = 0;

    void validate() const
    {
        if (lambdas.empty())
            throw ContractError("MGP-L1 needs at least one penalty value");
        for (double l : lambdas)
            if (!(l >= 0.0))
                throw ContractError("MGP-L1 penalties must be non-negative");
        if (folds < 2 || epochs < 1 || cv_epochs < 1)
            throw ContractError("MGP-L1 needs folds >= 2 and positive epoch counts");
    }
};

struct MgpL1Fit {
    DynamicParams params; // every series constant over time
    double lambda = 0.0;
    std::vector<double> cv_mae; // one per candidate lambda
};

namespace detail {

inline Dataset drop_target_rows(const Dataset& data, Eigen::Index begin, Eigen::Index end)
{
    Dataset out;
    out.sources = data.sources;
    const auto& t = data.target;
    out.target.id = t.id;
    const Eigen::Index keep = t.size() - (end - begin);
    out.target.inputs.resize(keep, t.dim());
    out.target.observations.resize(keep);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < t.size(); ++r) {
        if (r >= begin && r < end)
            continue;
        out.target.times.push_back(t.times[r]);
        out.target.inputs.row(k) = t.inputs.row(r);
        out.target.observations(k++) = t.observations(r);
    }
    return out;
}

inline TargetKernelsAt static_kernels(const DynamicParams& p)
{
    return kernels_at_row(p, 0);
}

} // namespace detail

/// Maximizes the static log-likelihood minus lambda * sum of source-to-target amplitudes.
inline DynamicParams fit_mgp_l1_fixed(const Dataset& data, double lambda, int epochs, const MgpL1Config& cfg)
{
    data.validate();
    data.require_sources();
    std::mt19937_64 rng(cfg.seed);
    FitConfig init;
    init.tie_sources = true;
    init.warm_start_epochs = cfg.warm_start_epochs;
    init.own_amp_init = 0.0;
    DynamicParams p = init_sources(data, SpikeSlabConfig{}, init, initial_params(data, rng));
    init_target_side(data, init, p);

    const ParamSelection sel{true, true, true, true};
    unpack(pack(p, sel), sel, p);
    Eigen::VectorXd x = pack(p, sel);
    Adam adam(x.size(), AdamConfig{cfg.step});
    ObjectiveOptions opt;
    opt.source_priors = false;
    opt.target_priors = false;
    const GammaPosterior gamma = constant_gamma(data, 1.0);
    const Eigen::Index ns = data.num_sources();
    for (int e = 0; e < epochs; ++e) {
        const ObjectiveValue v = q_objective(p, gamma, data, SpikeSlabConfig{}, opt);
        ParamArrays g = v.gradient;
        for (Eigen::Index i = 0; i < ns; ++i)
            g.target_amp[static_cast<std::size_t>(i)](0) -= lambda * softplus_grad(p.target_amp[static_cast<std::size_t>(i)](0));
        const Eigen::VectorXd gp = pack_gradient(g, sel);
        require_finite(v.value, gp, "MGP-L1 fit");
        adam.ascend(x, gp);
        unpack(x, sel, p);
    }
    return p;
}

inline std::vector<Prediction> predict_mgp_l1(const DynamicParams& params, const Dataset& data,
                                              std::span<const Stamp> stamps, const Eigen::MatrixXd& x)
{
    if (x.rows() != static_cast<Eigen::Index>(stamps.size()))
        throw ContractError("one input row is needed per query stamp");
    const Predictor pred(data, params.constrained());
    const TargetKernelsAt k = detail::static_kernels(params);
    std::vector<Prediction> out;
    for (std::size_t q = 0; q < stamps.size(); ++q)
        out.push_back(pred.predict(x.row(static_cast<Eigen::Index>(q)).transpose(), k, stamps[q]));
    return out;
}

/// Cross-validates lambda over contiguous target blocks, then refits on all data.
inline MgpL1Fit fit_mgp_l1(const Dataset& data, const MgpL1Config& cfg = {})
{
    cfg.validate();
    data.validate();
    data.require_sources();
    const Eigen::Index n = data.target.size();
    const int folds = static_cast<int>(std::min<Eigen::Index>(cfg.folds, n));
    MgpL1Fit out;
    double best = std::numeric_limits<double>::infinity();
    for (double lambda : cfg.lambdas) {
        double err = 0.0;
        Eigen::Index count = 0;
        if (folds >= 2) {
            for (int f = 0; f < folds; ++f) {
                const Eigen::Index b = f * n / folds, e = (f + 1) * n / folds;
                const Dataset train = detail::drop_target_rows(data, b, e);
                const DynamicParams p = fit_mgp_l1_fixed(train, lambda, cfg.cv_epochs, cfg);
                const std::vector<Stamp> stamps(data.target.times.begin() + b, data.target.times.begin() + e);
                const auto pred = predict_mgp_l1(p, train, stamps, data.target.inputs.middleRows(b, e - b));
                for (Eigen::Index r = b; r < e; ++r)
                    err += std::abs(pred[static_cast<std::size_t>(r - b)].mean - data.target.observations(r));
                count += e - b;
            }
        }
        const double cv = count > 0 ? err / static_cast<double>(count) : 0.0;
        out.cv_mae.push_back(cv);
        if (cv < best) {
            best = cv;
            out.lambda = lambda;
        }
    }
    out.params = fit_mgp_l1_fixed(data, out.lambda, cfg.epochs, cfg);
    return out;
}

} // namespace dmgp
