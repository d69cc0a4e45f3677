#pragma once

#include <cmath>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "inference.hpp"

namespace dmgp {

/// Candidate (slab scale, spike scale) pairs: every slab value combined with every
/// ratio r = slab / spike.
struct TuningGrid {
    std::vector<double> ratios;
    std::vector<double> slab_values;

    static TuningGrid example_hard()
    {
        return {{5.0, 10.0}, {1.0 / 5.0, 1.0 / 10.0, 1.0 / 15.0}};
    }

    struct Cell {
        double nu_slab;
        double nu0;
    };

    std::vector<Cell> cells() const
    {
        std::vector<Cell> out;
        for (double s : slab_values)
            for (double r : ratios)
                out.push_back({s, s / r});
        return out;
    }

    void validate() const
    {
        if (ratios.empty() || slab_values.empty())
            throw ContractError("tuning grid must not be empty");
        for (double r : ratios)
            if (!(r > 0.0))
                throw ContractError("tuning ratios must be positive");
        for (double s : slab_values)
            if (!(s > 0.0))
                throw ContractError("tuning slab values must be positive");
    }
};

/// Number of target-side amplitudes classified as nonzero: E[gamma] >= 0.5 and |alpha| > 1e-3.
inline Eigen::Index count_nonzero(const FitResult& fit)
{
    Eigen::Index c = 0;
    for (std::size_t j = 0; j < fit.params.target_amp.size(); ++j) {
        const Eigen::VectorXd& a = fit.params.target_amp[j];
        for (Eigen::Index r = 0; r < a.size(); ++r)
            if (fit.gamma.at(static_cast<Eigen::Index>(j), r) >= 0.5 && softplus(a(r)) > 1e-3)
                ++c;
    }
    return c;
}

/// N log p(y | X) - log(N) c, with the likelihood of all outputs under the fitted parameters.
inline double criterion(const FitResult& fit, const Dataset& data)
{
    const auto n = static_cast<double>(data.total_observations());
    return n * log_marginal_likelihood(data, fit.params.constrained())
        - std::log(n) * static_cast<double>(count_nonzero(fit));
}

struct TuningRow {
    double nu0 = 0.0;
    double nu_slab = 0.0;
    double criterion = 0.0;
    double log_likelihood = 0.0;
    Eigen::Index nonzeros = 0;
    bool ok = true;
};

struct TuningResult {
    SpikeSlabConfig best;
    std::size_t best_index = 0;
    std::vector<TuningRow> table;
    std::optional<FitResult> refit;
};

/// Index of the highest criterion among successful rows; the first row wins ties.
inline std::size_t best_row(const std::vector<TuningRow>& table)
{
    std::optional<std::size_t> best;
    for (std::size_t c = 0; c < table.size(); ++c)
        if (table[c].ok && (!best || table[c].criterion > table[*best].criterion))
            best = c;
    if (!best)
        throw NumericalError("every tuning cell failed");
    return *best;
}

/// Copies `base` (slab kind, rho, eta) with the given scales.
inline SpikeSlabConfig with_scales(const SpikeSlabConfig& base, double nu0, double nu_slab)
{
    SpikeSlabConfig s = base;
    s.nu0 = nu0;
    if (s.is_soft())
        s.slab = SoftSlab{nu_slab, s.rho()};
    else
        s.slab = HardSlab{nu_slab};
    return s;
}

/// Fits every grid cell with `cell_k_in` inner epochs (seed offset by the cell index) and
/// returns the criterion maximizer (first cell wins ties); with `refit`, the winner is refitted
/// with cfg.k_in. Failed cells are skipped with a warning.
inline TuningResult grid_search(const Dataset& data, const TuningGrid& grid, const SpikeSlabConfig& base,
                                const FitConfig& cfg, int cell_k_in = 200, bool refit = true, int jobs = 1)
{
    grid.validate();
    const auto cells = grid.cells();
    const int nc = static_cast<int>(cells.size());
    TuningResult out;
    out.table.resize(cells.size());
    std::vector<std::string> errors(cells.size());
    parallel_for(nc, jobs, [&](int c) {
        const auto cu = static_cast<std::size_t>(c);
        TuningRow& row = out.table[cu];
        row.nu0 = cells[cu].nu0;
        row.nu_slab = cells[cu].nu_slab;
        FitConfig fc = cfg;
        fc.k_in = cell_k_in;
        fc.seed = cfg.seed + cu;
        try {
            const FitResult f = fit(data, with_scales(base, row.nu0, row.nu_slab), fc);
            row.log_likelihood = log_marginal_likelihood(data, f.params.constrained());
            row.nonzeros = count_nonzero(f);
            row.criterion = criterion(f, data);
        } catch (const NumericalError& e) {
            row.ok = false;
            row.criterion = -std::numeric_limits<double>::infinity();
            errors[cu] = e.what();
        }
    });
    for (std::size_t c = 0; c < cells.size(); ++c)
        if (!out.table[c].ok)
            std::cerr << "warning: tuning cell (" << cells[c].nu0 << ", " << cells[c].nu_slab
                      << ") failed: " << errors[c] << "\n";
    out.best_index = best_row(out.table);
    out.best = with_scales(base, cells[out.best_index].nu0, cells[out.best_index].nu_slab);
    if (refit) {
        FitConfig fc = cfg;
        fc.seed = cfg.seed + out.best_index;
        out.refit = fit(data, out.best, fc);
    }
    return out;
}

} // namespace dmgp
