#pragma once

#include <cmath>
#include <numbers>

#include "model.hpp"

namespace dmgp {

/// Log-density with its partial derivatives w.r.t. the current and previous constrained values.
struct PriorTerm {
    double logp = 0.0;
    double dlogp_dcur = 0.0;
    double dlogp_dprev = 0.0;
};

namespace detail {
inline double sign(double v) { return (v > 0.0) - (v < 0.0); }
} // namespace detail

/// Laplace spike centred at zero with scale nu0. The subgradient at 0 is 0.
inline PriorTerm spike_logpdf(double alpha, double nu0)
{
    return {-std::log(2.0 * nu0) - std::abs(alpha) / nu0, -detail::sign(alpha) / nu0, 0.0};
}

/// Laplace on successive differences.
inline PriorTerm hard_slab_logpdf(double cur, double prev, double nu1)
{
    const double diff = cur - prev;
    const double g = detail::sign(diff) / nu1;
    return {-std::log(2.0 * nu1) - std::abs(diff) / nu1, -g, g};
}

/// Gaussian AR(1) transition with variance nu1 and coefficient rho.
inline PriorTerm soft_slab_logpdf(double cur, double prev, double nu1, double rho)
{
    const double r = cur - rho * prev;
    return {-0.5 * std::log(2.0 * std::numbers::pi * nu1) - r * r / (2.0 * nu1), -r / nu1, rho * r / nu1};
}

/// AR(1) transition across `gap` >= 1 steps: mean rho^gap * prev,
/// variance nu1 (1 - rho^(2 gap)) / (1 - rho^2), exactly normalized.
inline PriorTerm gap_soft_slab_logpdf(double cur, double prev, int gap, double nu1, double rho)
{
    if (gap < 1)
        throw ContractError("slab gap must be at least 1");
    const double rg = std::pow(rho, gap);
    const double var = nu1 * (1.0 - rg * rg) / (1.0 - rho * rho);
    const double r = cur - rg * prev;
    return {-0.5 * std::log(2.0 * std::numbers::pi * var) - r * r / (2.0 * var), -r / var, rg * r / var};
}

/// The hard slab does not depend on the gap length.
inline PriorTerm gap_hard_slab_logpdf(double cur, double prev, int gap, double nu1)
{
    if (gap < 1)
        throw ContractError("slab gap must be at least 1");
    return hard_slab_logpdf(cur, prev, nu1);
}

/// Slab density selected by the configuration.
inline PriorTerm slab_logpdf(const SpikeSlabConfig& cfg, double cur, double prev, int gap = 1)
{
    if (const auto* soft = std::get_if<SoftSlab>(&cfg.slab))
        return gap_soft_slab_logpdf(cur, prev, gap, soft->nu1, soft->rho);
    return gap_hard_slab_logpdf(cur, prev, gap, cfg.nu1());
}

} // namespace dmgp
