#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "covariance.hpp"
#include "inference.hpp"

namespace dmgp {

struct Prediction {
    double mean = 0.0;
    double variance = 0.0;
    Stamp time = 0;
};

/// Constrained target-side kernel parameters at a single stamp: one amplitude
/// and one length-scale row per latent process j (last row is the target's own).
struct TargetKernelsAt {
    Eigen::VectorXd amp; // m
    Eigen::MatrixXd ls;  // m x d
};

enum class InterpolationSpace { Constrained, Unconstrained };

namespace detail {

inline TargetKernelsAt kernels_at_row(const DynamicParams& p, Eigen::Index row)
{
    const auto m = static_cast<Eigen::Index>(p.target_amp.size());
    TargetKernelsAt k;
    k.amp.resize(m);
    k.ls.resize(m, p.target_ls[0].cols());
    for (Eigen::Index j = 0; j < m; ++j) {
        k.amp(j) = softplus(p.target_amp[j](row));
        k.ls.row(j) = p.target_ls[j].row(row).unaryExpr([](double u) { return softplus(u); });
    }
    return k;
}

} // namespace detail

/// Parameters at a stamp beyond the last training stamp: the mode of the slab
/// transition (copy for the hard slab, rho^(t* - n) decay for the soft slab).
/// Amplitudes whose last indicator expectation is below 0.5 are set to zero.
inline TargetKernelsAt forecast_params(const FitResult& fit, const Dataset& data, Stamp t, const SpikeSlabConfig& ss)
{
    const auto& times = data.target.times;
    if (times.empty() || t <= times.back())
        throw ContractError("forecast stamp must lie beyond the last training stamp");
    const Eigen::Index n = data.target.size() - 1;
    TargetKernelsAt k = detail::kernels_at_row(fit.params, n);
    const double decay = ss.is_soft() ? std::pow(ss.rho(), t - times.back()) : 1.0;
    k.ls *= decay;
    k.amp *= decay;
    for (Eigen::Index j = 0; j < k.amp.size(); ++j)
        if (fit.gamma.at(j, n) < 0.5)
            k.amp(j) = 0.0;
    return k;
}

/// Parameters at an interior stamp between observed stamps: nearest neighbour (earlier
/// wins ties) for the hard slab, the AR(1) bridge mean for the soft slab.
/// Amplitudes whose indicator expectation at the nearest stamp is below 0.5 are set to zero.
inline TargetKernelsAt recover_params(const FitResult& fit, const Dataset& data, Stamp t, const SpikeSlabConfig& ss,
                                      InterpolationSpace space = InterpolationSpace::Constrained)
{
    const auto& times = data.target.times;
    const auto after = std::upper_bound(times.begin(), times.end(), t);
    if (after == times.begin() || after == times.end())
        throw ContractError("recovery stamp needs observed neighbours on both sides");
    const Eigen::Index r_af = after - times.begin();
    const Eigen::Index r_be = r_af - 1;
    if (times[r_be] == t)
        return detail::kernels_at_row(fit.params, r_be);
    const int d1 = t - times[r_be];
    const int d2 = times[r_af] - t;
    const Eigen::Index r_near = d1 <= d2 ? r_be : r_af;

    TargetKernelsAt k;
    if (!ss.is_soft()) {
        k = detail::kernels_at_row(fit.params, r_near);
    } else {
        const double rho = ss.rho();
        const double w_be = std::pow(rho, d1) * (1.0 - std::pow(rho, 2 * d2));
        const double w_af = std::pow(rho, d2) * (1.0 - std::pow(rho, 2 * d1));
        const double den = 1.0 - std::pow(rho, 2 * (d1 + d2));
        auto bridge = [&](double be, double af) { return (w_be * be + w_af * af) / den; };
        const auto m = static_cast<Eigen::Index>(fit.params.target_amp.size());
        const Eigen::Index d = fit.params.target_ls[0].cols();
        k.amp.resize(m);
        k.ls.resize(m, d);
        auto value = [&](double be, double af) {
            if (space == InterpolationSpace::Unconstrained)
                return softplus(bridge(be, af));
            return bridge(softplus(be), softplus(af));
        };
        for (Eigen::Index j = 0; j < m; ++j) {
            k.amp(j) = value(fit.params.target_amp[j](r_be), fit.params.target_amp[j](r_af));
            for (Eigen::Index l = 0; l < d; ++l)
                k.ls(j, l) = value(fit.params.target_ls[j](r_be, l), fit.params.target_ls[j](r_af, l));
        }
        // Length-scales must stay positive for the kernel to be defined.
        k.ls = k.ls.cwiseMax(1e-12);
    }
    for (Eigen::Index j = 0; j < k.amp.size(); ++j)
        if (fit.gamma.at(j, r_near) < 0.5)
            k.amp(j) = 0.0;
    return k;
}

/// Parameters at any stamp: observed rows are read directly, later stamps are
/// forecast, interior stamps recovered, earlier stamps copy the first row.
inline TargetKernelsAt params_at(const FitResult& fit, const Dataset& data, Stamp t, const SpikeSlabConfig& ss,
                                 InterpolationSpace space = InterpolationSpace::Constrained)
{
    const auto& times = data.target.times;
    if (times.empty())
        throw ContractError("target has no observations");
    if (t > times.back())
        return forecast_params(fit, data, t, ss);
    if (t <= times.front())
        return detail::kernels_at_row(fit.params, 0);
    return recover_params(fit, data, t, ss, space);
}

/// Posterior predictive of the noisy target at new inputs. Factorizes the source
/// blocks and the conditional target covariance once and reuses them per query.
class Predictor {
public:
    Predictor(const Dataset& data, const KernelParams& kp) : data_(data), kp_(kp)
    {
        kp.check_shapes(data);
        const Eigen::Index ns = data.num_sources();
        const Eigen::Index nm = data.target.size();
        const auto rows = all_rows(nm);
        const CovBlocks blocks = assemble(data, kp, rows);
        chol_.resize(ns);
        a_.resize(ns);
        f_.resize(ns);
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(nm);
        Eigen::MatrixXd sigma = blocks.k_mm;
        for (Eigen::Index i = 0; i < ns; ++i) {
            chol_[i] = robust_cholesky(blocks.k_ss[i], "source block " + std::to_string(i));
            a_[i] = chol_[i].llt.solve(data.sources[i].observations);
            f_[i] = chol_[i].llt.solve(blocks.k_sm[i]);
            mu.noalias() += f_[i].transpose() * data.sources[i].observations;
            sigma.noalias() -= blocks.k_sm[i].transpose() * f_[i];
        }
        sigma = 0.5 * (sigma + sigma.transpose()).eval();
        chol_sigma_ = robust_cholesky(sigma, "target conditional covariance");
        beta_ = chol_sigma_.llt.solve(data.target.observations - mu);

        // K_mm carries noise plus a jitter proportional to its mean diagonal; the query diagonal gets the same.
        Eigen::VectorXd raw_diag = Eigen::VectorXd::Constant(nm, kp.target_noise * kp.target_noise);
        for (Eigen::Index j = 0; j < data.num_outputs(); ++j)
            raw_diag.array() += kp.target_amp[j].array().square() * std::pow(2.0, -0.5 * static_cast<double>(data.dim()));
        jitter_ = nm > 0 ? kBaseJitter * raw_diag.mean() : 0.0;
    }

    Prediction predict(const Eigen::VectorXd& x, const TargetKernelsAt& k, Stamp t = 0) const
    {
        const Eigen::Index ns = data_.num_sources();
        const Eigen::Index nm = data_.target.size();
        if (k.amp.size() != data_.num_outputs() || k.ls.rows() != data_.num_outputs() || k.ls.cols() != data_.dim()
            || x.size() != data_.dim())
            throw ContractError("query parameters do not match the model dimensions");
        double mean_s = 0.0;
        double prior = kp_.target_noise * kp_.target_noise + jitter_;
        Eigen::VectorXd cross = Eigen::VectorXd::Zero(nm); // Sigma_*
        for (Eigen::Index j = 0; j < data_.num_outputs(); ++j) {
            const Eigen::RowVectorXd lsj = k.ls.row(j);
            prior += k.amp(j) * k.amp(j) * unit_kernel(x, x, lsj, lsj);
            for (Eigen::Index r = 0; r < nm; ++r)
                cross(r) += kp_.target_amp[j](r) * k.amp(j)
                    * unit_kernel(data_.target.inputs.row(r), x, kp_.target_ls[j].row(r), lsj);
        }
        double var_s = prior;
        for (Eigen::Index i = 0; i < ns; ++i) {
            const auto& s = data_.sources[i];
            Eigen::VectorXd ks(s.size());
            const Eigen::RowVectorXd lsi = k.ls.row(i);
            for (Eigen::Index a = 0; a < s.size(); ++a)
                ks(a) = kp_.source_amp[i](a) * k.amp(i) * unit_kernel(s.inputs.row(a), x, kp_.source_ls[i].row(a), lsi);
            mean_s += ks.dot(a_[i]);
            cross.noalias() -= f_[i].transpose() * ks;
            var_s -= ks.dot(chol_[i].llt.solve(ks));
        }
        Prediction p;
        p.time = t;
        p.mean = mean_s + cross.dot(beta_);
        p.variance = std::max(0.0, var_s - (nm > 0 ? cross.dot(chol_sigma_.llt.solve(cross)) : 0.0));
        return p;
    }

    const Dataset& data() const { return data_; }

private:
    Dataset data_;
    KernelParams kp_;
    std::vector<Cholesky> chol_;
    std::vector<Eigen::VectorXd> a_;
    std::vector<Eigen::MatrixXd> f_;
    Cholesky chol_sigma_;
    Eigen::VectorXd beta_;
    double jitter_ = 0.0;
};

/// Single-query convenience wrapper.
inline Prediction predict(const FitResult& fit, const Dataset& data, const Eigen::VectorXd& x, const TargetKernelsAt& k,
                          Stamp t = 0)
{
    return Predictor(data, fit.params.constrained()).predict(x, k, t);
}

/// Predictions at target stamps `stamps` with inputs `x` (one row per stamp).
inline std::vector<Prediction> predict_at(const FitResult& fit, const Dataset& data, std::span<const Stamp> stamps,
                                          const Eigen::MatrixXd& x, const SpikeSlabConfig& ss,
                                          InterpolationSpace space = InterpolationSpace::Constrained)
{
    if (x.rows() != static_cast<Eigen::Index>(stamps.size()))
        throw ContractError("one input row is needed per query stamp");
    const Predictor pred(data, fit.params.constrained());
    std::vector<Prediction> out;
    for (std::size_t q = 0; q < stamps.size(); ++q)
        out.push_back(pred.predict(x.row(static_cast<Eigen::Index>(q)).transpose(),
                                   params_at(fit, data, stamps[q], ss, space), stamps[q]));
    return out;
}

} // namespace dmgp
