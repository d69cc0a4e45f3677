#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace dmgp {

/// Violated precondition (shape mismatch, bad stamp, invalid configuration).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Factorization failure or non-finite objective.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Stamp = int;

/// Calls f(k) for k = 0..n-1 on up to `jobs` threads. f must not throw.
template <class F>
void parallel_for(int n, int jobs, F&& f)
{
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int k = next++; k < n; k = next++)
            f(k);
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < std::clamp(jobs, 1, std::max(n, 1)); ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
}

inline double softplus(double u)
{
    if (u > 30.0)
        return u;
    if (u < -30.0)
        return std::exp(u);
    return std::log1p(std::exp(u));
}

inline double softplus_grad(double u) { return 1.0 / (1.0 + std::exp(-u)); }

inline double softplus_inverse(double v)
{
    if (!(v > 0.0))
        throw ContractError("softplus_inverse: argument must be positive");
    if (v > 30.0)
        return v;
    return std::log(std::expm1(v));
}

/// One output's observations, indexed by integer time stamps.
struct OutputSeries {
    int id = 0;
    std::vector<Stamp> times;
    Eigen::MatrixXd inputs;       // n x d
    Eigen::VectorXd observations; // n

    Eigen::Index size() const { return observations.size(); }
    Eigen::Index dim() const { return inputs.cols(); }

    void validate() const
    {
        if (static_cast<Eigen::Index>(times.size()) != inputs.rows() || inputs.rows() != observations.size())
            throw ContractError("output " + std::to_string(id) + ": times, inputs and observations differ in length");
        for (std::size_t a = 1; a < times.size(); ++a)
            if (times[a] <= times[a - 1])
                throw ContractError("output " + std::to_string(id) + ": time stamps must be strictly increasing");
    }

    /// Row index of stamp t, or -1.
    Eigen::Index find(Stamp t) const
    {
        auto it = std::lower_bound(times.begin(), times.end(), t);
        if (it == times.end() || *it != t)
            return -1;
        return it - times.begin();
    }
};

/// Sources occupy indices 0..m-2 and the target is output m-1.
struct Dataset {
    std::vector<OutputSeries> sources;
    OutputSeries target;

    Eigen::Index num_outputs() const { return static_cast<Eigen::Index>(sources.size()) + 1; }
    Eigen::Index num_sources() const { return static_cast<Eigen::Index>(sources.size()); }
    Eigen::Index dim() const { return target.dim(); }

    Eigen::Index total_observations() const
    {
        Eigen::Index n = target.size();
        for (const auto& s : sources)
            n += s.size();
        return n;
    }

    void validate() const
    {
        target.validate();
        for (const auto& s : sources) {
            s.validate();
            if (s.dim() != target.dim())
                throw ContractError("all outputs must share the same input dimension");
        }
    }

    void require_sources() const
    {
        if (sources.empty())
            throw ContractError("dataset needs at least one source output");
    }
};

struct HardSlab {
    double nu1 = 0.1;
};

struct SoftSlab {
    double nu1 = 0.1;
    double rho = 0.9;
};

struct SpikeSlabConfig {
    double nu0 = 0.02;
    std::variant<HardSlab, SoftSlab> slab = HardSlab{};
    double eta = 0.5;

    bool is_soft() const { return std::holds_alternative<SoftSlab>(slab); }
    double nu1() const { return std::visit([](const auto& s) { return s.nu1; }, slab); }
    double rho() const { return is_soft() ? std::get<SoftSlab>(slab).rho : 1.0; }

    void validate() const
    {
        if (!(nu0 > 0.0))
            throw ContractError("nu0 must be positive");
        if (!(nu1() > 0.0))
            throw ContractError("slab scale must be positive");
        if (is_soft() && !(rho() > 0.0 && rho() < 1.0))
            throw ContractError("soft slab rho must lie in (0,1)");
        if (!(eta > 0.0 && eta < 1.0))
            throw ContractError("eta must lie in (0,1)");
    }
};

/// E[gamma_{i,t}] for i over all outputs (rows) and target stamps 2..n (columns).
/// Column c pairs target stamp c+1 with its predecessor c.
struct GammaPosterior {
    Eigen::MatrixXd values;

    /// Expectation attached to target row `row` (row 0 has none; it borrows row 1).
    double at(Eigen::Index output, Eigen::Index row) const
    {
        if (values.cols() == 0)
            return 1.0;
        Eigen::Index c = std::clamp<Eigen::Index>(row - 1, 0, values.cols() - 1);
        return values(output, c);
    }
};

/// Per-time kernel parameters laid out on each output's observed time grid.
/// Used for unconstrained storage, constrained values and gradients alike.
struct ParamArrays {
    std::vector<Eigen::VectorXd> source_amp; // [i] n_i
    std::vector<Eigen::MatrixXd> source_ls;  // [i] n_i x d
    std::vector<Eigen::VectorXd> target_amp; // [j] n_m, j = 0..m-1 (last is the target's own kernel)
    std::vector<Eigen::MatrixXd> target_ls;  // [j] n_m x d
    Eigen::VectorXd source_noise;            // m-1
    double target_noise = 0.0;

    Eigen::Index num_sources() const { return static_cast<Eigen::Index>(source_amp.size()); }

    ParamArrays zeros_like() const
    {
        ParamArrays z;
        for (const auto& v : source_amp)
            z.source_amp.push_back(Eigen::VectorXd::Zero(v.size()));
        for (const auto& v : source_ls)
            z.source_ls.push_back(Eigen::MatrixXd::Zero(v.rows(), v.cols()));
        for (const auto& v : target_amp)
            z.target_amp.push_back(Eigen::VectorXd::Zero(v.size()));
        for (const auto& v : target_ls)
            z.target_ls.push_back(Eigen::MatrixXd::Zero(v.rows(), v.cols()));
        z.source_noise = Eigen::VectorXd::Zero(source_noise.size());
        return z;
    }

    template <class F>
    ParamArrays map(F&& f) const
    {
        ParamArrays out = *this;
        for (auto& v : out.source_amp)
            v = v.unaryExpr(f);
        for (auto& v : out.source_ls)
            v = v.unaryExpr(f);
        for (auto& v : out.target_amp)
            v = v.unaryExpr(f);
        for (auto& v : out.target_ls)
            v = v.unaryExpr(f);
        out.source_noise = out.source_noise.unaryExpr(f);
        out.target_noise = f(out.target_noise);
        return out;
    }

    void check_shapes(const Dataset& data) const
    {
        const auto d = data.dim();
        if (num_sources() != data.num_sources() || static_cast<Eigen::Index>(source_ls.size()) != data.num_sources()
            || source_noise.size() != data.num_sources())
            throw ContractError("parameter source count does not match dataset");
        if (static_cast<Eigen::Index>(target_amp.size()) != data.num_outputs()
            || static_cast<Eigen::Index>(target_ls.size()) != data.num_outputs())
            throw ContractError("target parameter count must equal the number of outputs");
        for (Eigen::Index i = 0; i < data.num_sources(); ++i) {
            const auto n = data.sources[i].size();
            if (source_amp[i].size() != n || source_ls[i].rows() != n || source_ls[i].cols() != d)
                throw ContractError("source " + std::to_string(i) + " parameters do not match its time grid");
        }
        const auto nm = data.target.size();
        for (Eigen::Index j = 0; j < data.num_outputs(); ++j)
            if (target_amp[j].size() != nm || target_ls[j].rows() != nm || target_ls[j].cols() != d)
                throw ContractError("target parameters do not match the target time grid");
    }
};

/// Constrained (positive) kernel parameters: amplitudes, diagonal length-scales, noise std.
struct KernelParams : ParamArrays {};

/// Unconstrained parameters; the canonical storage. Constrained values come from softplus.
struct DynamicParams : ParamArrays {
    KernelParams constrained() const
    {
        KernelParams k;
        static_cast<ParamArrays&>(k) = map([](double u) { return softplus(u); });
        return k;
    }

    static DynamicParams from_constrained(const ParamArrays& c)
    {
        DynamicParams p;
        static_cast<ParamArrays&>(p) = c.map([](double v) { return softplus_inverse(v); });
        return p;
    }
};

/// Allocates a parameter set on the dataset's grids. Target amplitudes are drawn
/// uniformly on [0.1, 0.5] before softplus; length-scales start at 1, noise at 0.1,
/// source amplitudes at 1.
inline DynamicParams initial_params(const Dataset& data, std::mt19937_64& rng)
{
    const auto d = data.dim();
    const double ls0 = softplus_inverse(1.0);
    const double noise0 = softplus_inverse(0.1);
    const double amp0 = softplus_inverse(1.0);
    DynamicParams p;
    for (const auto& s : data.sources) {
        p.source_amp.push_back(Eigen::VectorXd::Constant(s.size(), amp0));
        p.source_ls.push_back(Eigen::MatrixXd::Constant(s.size(), d, ls0));
    }
    std::uniform_real_distribution<double> unif(0.1, 0.5);
    const auto nm = data.target.size();
    for (Eigen::Index j = 0; j < data.num_outputs(); ++j) {
        Eigen::VectorXd a(nm);
        for (Eigen::Index b = 0; b < nm; ++b)
            a[b] = unif(rng);
        p.target_amp.push_back(a);
        p.target_ls.push_back(Eigen::MatrixXd::Constant(nm, d, ls0));
    }
    p.source_noise = Eigen::VectorXd::Constant(data.num_sources(), noise0);
    p.target_noise = noise0;
    return p;
}

} // namespace dmgp
