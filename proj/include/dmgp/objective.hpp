#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "covariance.hpp"
#include "model.hpp"
#include "priors.hpp"

namespace dmgp {

/// Joint Gaussian log-likelihood split as log N(y_s | 0, K_ss) + log N(y_m | mu, Sigma).
/// `grad` holds d(source_weight * source + target) / d(constrained parameters).
struct LikelihoodTerms {
    double source = 0.0;
    double target = 0.0;
    ParamArrays grad;
};

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454836;

// Adds sum_ab G(a,b) dK(a,b) for a symmetric block K(a,b) = amp_a amp_b U(a,b).
inline void accumulate_symmetric(const Eigen::MatrixXd& g, const Eigen::MatrixXd& u, const Eigen::MatrixXd& x,
                                 const Eigen::VectorXd& amp, const Eigen::MatrixXd& ls, Eigen::VectorXd& g_amp,
                                 Eigen::MatrixXd& g_ls)
{
    const Eigen::Index n = u.rows();
    const Eigen::Index d = x.cols();
    for (Eigen::Index b = 0; b < n; ++b) {
        for (Eigen::Index a = b; a < n; ++a) {
            const double w = (a == b) ? g(a, a) : g(a, b) + g(b, a);
            const double k0 = u(a, b);
            g_amp(a) += w * amp(b) * k0;
            g_amp(b) += w * amp(a) * k0;
            if (a == b)
                continue; // length-scale derivative of a diagonal entry vanishes
            const double c = w * amp(a) * amp(b) * k0;
            for (Eigen::Index l = 0; l < d; ++l) {
                const double s = ls(a, l) + ls(b, l);
                const double r = x(a, l) - x(b, l);
                const double common = -0.5 / s + 0.5 * r * r / (s * s);
                g_ls(a, l) += c * (0.25 / ls(a, l) + common);
                g_ls(b, l) += c * (0.25 / ls(b, l) + common);
            }
        }
    }
}

// Adds sum_ab G(a,b) dK(a,b) for a rectangular block K(a,b) = amp1_a amp2_b U(a,b).
inline void accumulate_cross(const Eigen::MatrixXd& g, const Eigen::MatrixXd& u, const Eigen::MatrixXd& x1,
                             const Eigen::VectorXd& amp1, const Eigen::MatrixXd& ls1, const Eigen::MatrixXd& x2,
                             const Eigen::VectorXd& amp2, const Eigen::MatrixXd& ls2, Eigen::VectorXd& g_amp1,
                             Eigen::MatrixXd& g_ls1, Eigen::VectorXd& g_amp2, Eigen::MatrixXd& g_ls2)
{
    const Eigen::Index d = x1.cols();
    for (Eigen::Index b = 0; b < u.cols(); ++b) {
        for (Eigen::Index a = 0; a < u.rows(); ++a) {
            const double w = g(a, b);
            const double k0 = u(a, b);
            g_amp1(a) += w * amp2(b) * k0;
            g_amp2(b) += w * amp1(a) * k0;
            const double c = w * amp1(a) * amp2(b) * k0;
            if (c == 0.0)
                continue;
            for (Eigen::Index l = 0; l < d; ++l) {
                const double s = ls1(a, l) + ls2(b, l);
                const double r = x1(a, l) - x2(b, l);
                const double common = -0.5 / s + 0.5 * r * r / (s * s);
                g_ls1(a, l) += c * (0.25 / ls1(a, l) + common);
                g_ls2(b, l) += c * (0.25 / ls2(b, l) + common);
            }
        }
    }
}

} // namespace detail

/// Block-structured likelihood restricted to target rows `rows`. Cost is
/// O(sum_i n_i^3 + |rows|^3) rather than O(N^3).
inline LikelihoodTerms likelihood(const Dataset& data, const KernelParams& kp, std::span<const Eigen::Index> rows,
                                  double source_weight = 1.0, bool with_gradient = true)
{
    kp.check_shapes(data);
    const Eigen::Index ns = data.num_sources();
    const auto nt = static_cast<Eigen::Index>(rows.size());
    const Eigen::MatrixXd xm = take_rows(data.target.inputs, rows);
    const Eigen::VectorXd ym = take_rows(data.target.observations, rows);

    LikelihoodTerms out;
    std::vector<Eigen::MatrixXd> u_ss(ns), u_sm(ns), f(ns);
    std::vector<Eigen::VectorXd> a(ns), amp_t(static_cast<std::size_t>(ns + 1));
    std::vector<Eigen::MatrixXd> ls_t(static_cast<std::size_t>(ns + 1));
    std::vector<Cholesky> chol(ns);

    for (Eigen::Index j = 0; j <= ns; ++j) {
        amp_t[j] = take_rows(kp.target_amp[j], rows);
        ls_t[j] = take_rows(kp.target_ls[j], rows);
    }

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(nt);
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(nt, nt);
    for (Eigen::Index i = 0; i < ns; ++i) {
        const auto& s = data.sources[i];
        const auto& amp = kp.source_amp[i];
        u_ss[i] = unit_kernel_matrix(s.inputs, kp.source_ls[i], s.inputs, kp.source_ls[i], true);
        Eigen::MatrixXd k = amp.asDiagonal() * u_ss[i] * amp.asDiagonal();
        k.diagonal().array() += kp.source_noise(i) * kp.source_noise(i);
        add_jitter(k);
        chol[i] = robust_cholesky(k, "source block " + std::to_string(i));
        a[i] = chol[i].llt.solve(s.observations);
        out.source += -0.5 * s.observations.dot(a[i]) - 0.5 * chol[i].log_det()
            - 0.5 * static_cast<double>(s.size()) * detail::kLog2Pi;

        u_sm[i] = unit_kernel_matrix(s.inputs, kp.source_ls[i], xm, ls_t[i]);
        const Eigen::MatrixXd b = amp.asDiagonal() * u_sm[i] * amp_t[i].asDiagonal();
        f[i] = chol[i].llt.solve(b);
        mu.noalias() += f[i].transpose() * s.observations;
        sigma.noalias() -= b.transpose() * f[i];
    }

    std::vector<Eigen::MatrixXd> u_mm(static_cast<std::size_t>(ns + 1));
    Eigen::MatrixXd kmm = Eigen::MatrixXd::Zero(nt, nt);
    for (Eigen::Index j = 0; j <= ns; ++j) {
        u_mm[j] = unit_kernel_matrix(xm, ls_t[j], xm, ls_t[j], true);
        kmm.noalias() += amp_t[j].asDiagonal() * u_mm[j] * amp_t[j].asDiagonal();
    }
    kmm.diagonal().array() += kp.target_noise * kp.target_noise;
    add_jitter(kmm);
    sigma += kmm;
    sigma = 0.5 * (sigma + sigma.transpose()).eval();

    const Cholesky chol_sigma = robust_cholesky(sigma, "target conditional covariance");
    const Eigen::VectorXd resid = ym - mu;
    const Eigen::VectorXd alpha_m = nt > 0 ? Eigen::VectorXd(chol_sigma.llt.solve(resid)) : Eigen::VectorXd();
    if (nt > 0)
        out.target = -0.5 * resid.dot(alpha_m) - 0.5 * chol_sigma.log_det() - 0.5 * static_cast<double>(nt) * detail::kLog2Pi;

    if (!with_gradient)
        return out;

    out.grad = kp.zeros_like();
    auto& g = out.grad;
    Eigen::MatrixXd sigma_inv = nt > 0 ? Eigen::MatrixXd(chol_sigma.llt.solve(Eigen::MatrixXd::Identity(nt, nt)))
                                       : Eigen::MatrixXd();
    const Eigen::MatrixXd g_mm = 0.5 * (alpha_m * alpha_m.transpose() - sigma_inv);

    std::vector<Eigen::VectorXd> g_amp_t(static_cast<std::size_t>(ns + 1));
    std::vector<Eigen::MatrixXd> g_ls_t(static_cast<std::size_t>(ns + 1));
    for (Eigen::Index j = 0; j <= ns; ++j) {
        g_amp_t[j] = Eigen::VectorXd::Zero(nt);
        g_ls_t[j] = Eigen::MatrixXd::Zero(nt, data.dim());
    }

    for (Eigen::Index i = 0; i < ns; ++i) {
        const auto& s = data.sources[i];
        const auto n = s.size();
        const Eigen::MatrixXd a_inv = chol[i].llt.solve(Eigen::MatrixXd::Identity(n, n));
        const Eigen::MatrixXd fs = nt > 0 ? Eigen::MatrixXd(f[i] * sigma_inv) : Eigen::MatrixXd::Zero(n, 0);
        const Eigen::VectorXd alpha_i = nt > 0 ? Eigen::VectorXd(a[i] - f[i] * alpha_m) : a[i];

        // Adjoint of the full joint likelihood, minus the down-weighted share of the source marginal.
        Eigen::MatrixXd g_ss = 0.5 * (alpha_i * alpha_i.transpose() - a_inv);
        if (nt > 0)
            g_ss.noalias() -= 0.5 * fs * f[i].transpose();
        if (source_weight != 1.0)
            g_ss -= (1.0 - source_weight) * 0.5 * (a[i] * a[i].transpose() - a_inv);

        detail::accumulate_symmetric(g_ss, u_ss[i], s.inputs, kp.source_amp[i], kp.source_ls[i], g.source_amp[i],
                                     g.source_ls[i]);
        g.source_noise(i) += 2.0 * kp.source_noise(i) * g_ss.trace();

        if (nt > 0) {
            const Eigen::MatrixXd g_sm = alpha_i * alpha_m.transpose() + fs;
            detail::accumulate_cross(g_sm, u_sm[i], s.inputs, kp.source_amp[i], kp.source_ls[i], xm, amp_t[i], ls_t[i],
                                     g.source_amp[i], g.source_ls[i], g_amp_t[i], g_ls_t[i]);
        }
    }
    if (nt > 0) {
        for (Eigen::Index j = 0; j <= ns; ++j)
            detail::accumulate_symmetric(g_mm, u_mm[j], xm, amp_t[j], ls_t[j], g_amp_t[j], g_ls_t[j]);
        g.target_noise += 2.0 * kp.target_noise * g_mm.trace();
    }
    for (Eigen::Index j = 0; j <= ns; ++j)
        for (Eigen::Index r = 0; r < nt; ++r) {
            g.target_amp[j](rows[r]) += g_amp_t[j](r);
            g.target_ls[j].row(rows[r]) += g_ls_t[j].row(r);
        }
    return out;
}

/// Log marginal likelihood of all observations (sources and target).
inline double log_marginal_likelihood(const Dataset& data, const KernelParams& kp)
{
    const auto rows = all_rows(data.target.size());
    const auto t = likelihood(data, kp, rows, 1.0, false);
    return t.source + t.target;
}

/// What enters one evaluation of the expected complete log-posterior.
struct ObjectiveOptions {
    std::optional<std::vector<Eigen::Index>> target_rows; // nullopt: all target rows
    double source_weight = 1.0;                           // scales source marginal and source priors
    bool source_priors = true;
    bool target_priors = true;
};

struct ObjectiveValue {
    double value = 0.0;
    double log_likelihood = 0.0;
    double log_prior = 0.0;
    ParamArrays gradient; // w.r.t. unconstrained parameters
};

/// Slab/spike prior terms over constrained values; adds their gradient into `grad`.
inline double log_prior(const Dataset& data, const KernelParams& kp, const GammaPosterior& gamma,
                        const SpikeSlabConfig& ss, const ObjectiveOptions& opt, std::span<const Eigen::Index> rows,
                        ParamArrays& grad)
{
    double total = 0.0;
    const Eigen::Index d = data.dim();
    if (opt.source_priors) {
        const double w = opt.source_weight;
        for (Eigen::Index i = 0; i < data.num_sources(); ++i) {
            const auto& times = data.sources[i].times;
            for (std::size_t c = 1; c < times.size(); ++c) {
                const int gap = times[c] - times[c - 1];
                const auto ci = static_cast<Eigen::Index>(c);
                const PriorTerm pa = slab_logpdf(ss, kp.source_amp[i](ci), kp.source_amp[i](ci - 1), gap);
                total += w * pa.logp;
                grad.source_amp[i](ci) += w * pa.dlogp_dcur;
                grad.source_amp[i](ci - 1) += w * pa.dlogp_dprev;
                for (Eigen::Index l = 0; l < d; ++l) {
                    const PriorTerm pl = slab_logpdf(ss, kp.source_ls[i](ci, l), kp.source_ls[i](ci - 1, l), gap);
                    total += w * pl.logp;
                    grad.source_ls[i](ci, l) += w * pl.dlogp_dcur;
                    grad.source_ls[i](ci - 1, l) += w * pl.dlogp_dprev;
                }
            }
        }
    }
    if (opt.target_priors) {
        const auto& times = data.target.times;
        for (const Eigen::Index c : rows) {
            if (c == 0)
                continue;
            const int gap = times[c] - times[c - 1];
            for (Eigen::Index j = 0; j < data.num_outputs(); ++j) {
                for (Eigen::Index l = 0; l < d; ++l) {
                    const PriorTerm pl = slab_logpdf(ss, kp.target_ls[j](c, l), kp.target_ls[j](c - 1, l), gap);
                    total += pl.logp;
                    grad.target_ls[j](c, l) += pl.dlogp_dcur;
                    grad.target_ls[j](c - 1, l) += pl.dlogp_dprev;
                }
                const double e = gamma.values(j, c - 1);
                const double cur = kp.target_amp[j](c);
                const PriorTerm spike = spike_logpdf(cur, ss.nu0);
                const PriorTerm slab = slab_logpdf(ss, cur, kp.target_amp[j](c - 1), gap);
                total += (1.0 - e) * spike.logp + e * slab.logp;
                grad.target_amp[j](c) += (1.0 - e) * spike.dlogp_dcur + e * slab.dlogp_dcur;
                grad.target_amp[j](c - 1) += e * slab.dlogp_dprev;
            }
        }
    }
    return total;
}

/// Multiplies a constrained-space gradient by softplus'(raw) elementwise.
inline ParamArrays chain_softplus(const ParamArrays& grad, const DynamicParams& raw)
{
    ParamArrays out = grad;
    auto scale = [](auto& g, const auto& u) { g.array() *= u.unaryExpr([](double v) { return softplus_grad(v); }).array(); };
    for (std::size_t i = 0; i < out.source_amp.size(); ++i) {
        scale(out.source_amp[i], raw.source_amp[i]);
        scale(out.source_ls[i], raw.source_ls[i]);
    }
    for (std::size_t j = 0; j < out.target_amp.size(); ++j) {
        scale(out.target_amp[j], raw.target_amp[j]);
        scale(out.target_ls[j], raw.target_ls[j]);
    }
    scale(out.source_noise, raw.source_noise);
    out.target_noise *= softplus_grad(raw.target_noise);
    return out;
}

/// Expected complete log-posterior (up to a constant) and its gradient over all
/// unconstrained parameters. With target_rows set, only those target rows enter
/// the conditional likelihood and the target priors.
inline ObjectiveValue q_objective(const DynamicParams& params, const GammaPosterior& gamma, const Dataset& data,
                                  const SpikeSlabConfig& ss, const ObjectiveOptions& opt = {})
{
    const KernelParams kp = params.constrained();
    const std::vector<Eigen::Index> rows = opt.target_rows ? *opt.target_rows : all_rows(data.target.size());
    if (opt.target_priors
        && (gamma.values.rows() != data.num_outputs() || gamma.values.cols() != std::max<Eigen::Index>(data.target.size() - 1, 0)))
        throw ContractError("gamma posterior shape does not match the dataset");

    LikelihoodTerms lik = likelihood(data, kp, rows, opt.source_weight, true);
    ObjectiveValue out;
    out.log_likelihood = opt.source_weight * lik.source + lik.target;
    out.log_prior = log_prior(data, kp, gamma, ss, opt, rows, lik.grad);
    out.value = out.log_likelihood + out.log_prior;
    out.gradient = chain_softplus(lik.grad, params);
    return out;
}

} // namespace dmgp
