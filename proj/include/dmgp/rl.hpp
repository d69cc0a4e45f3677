#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <chrono>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "baselines.hpp"
#include "inference.hpp"
#include "prediction.hpp"

namespace dmgp {

struct CarState {
    double pos = -0.5;
    double vel = 0.0;

    static constexpr double pos_min = -1.2, pos_max = 1.0;
    static constexpr double vel_min = -0.07, vel_max = 0.07;

    CarState clipped() const
    {
        return {std::clamp(pos, pos_min, pos_max), std::clamp(vel, vel_min, vel_max)};
    }
};

/// Horizontal power unit P and vertical force unit G.
struct EnvSpec {
    double P = 0.001;
    double G = 0.0025;

    void validate() const
    {
        if (!(P > 0.0) || !(G > 0.0))
            throw ContractError("environment units P and G must be positive");
    }
};

/// Environment over sample stamps: `before` until change_time, `after` from it on.
struct EnvSchedule {
    EnvSpec before;
    std::optional<Stamp> change_time;
    EnvSpec after;

    const EnvSpec& at(Stamp t) const { return change_time && t >= *change_time ? after : before; }
};

/// One step of the car: velocity is updated and clipped first, then position.
inline CarState step(const CarState& s, double action, const EnvSpec& env)
{
    if (!(action >= -1.0 && action <= 1.0))
        throw ContractError("action must lie in [-1, 1]");
    CarState n;
    n.vel = std::clamp(s.vel + env.P * action - env.G * std::cos(3.0 * s.pos), CarState::vel_min, CarState::vel_max);
    n.pos = std::clamp(s.pos + n.vel, CarState::pos_min, CarState::pos_max);
    return n;
}

struct Transition {
    Stamp t = 0;
    CarState s;
    double action = 0.0;
    CarState next;
};

/// `count` transitions at stamps first, first+1, ...: states uniform over the box,
/// actions uniform on [-1, 1], next states from the environment active at the stamp.
inline std::vector<Transition> collect_samples(const EnvSchedule& env, int count, std::mt19937_64& rng, Stamp first = 1)
{
    if (count < 1)
        throw ContractError("sample count must be at least 1");
    std::uniform_real_distribution<double> pos(CarState::pos_min, CarState::pos_max);
    std::uniform_real_distribution<double> vel(CarState::vel_min, CarState::vel_max);
    std::uniform_real_distribution<double> act(-1.0, 1.0);
    std::vector<Transition> out;
    for (int k = 0; k < count; ++k) {
        Transition tr;
        tr.t = first + k;
        tr.s = {pos(rng), vel(rng)};
        tr.action = act(rng);
        tr.next = step(tr.s, tr.action, env.at(tr.t));
        out.push_back(tr);
    }
    return out;
}

inline std::vector<Transition> collect_samples(const EnvSchedule& env, int count, unsigned long long seed, Stamp first = 1)
{
    std::mt19937_64 rng(seed);
    return collect_samples(env, count, rng, first);
}

enum class TransitionKind { Gp, Mgp, DmgpSs };

inline std::string transition_name(TransitionKind k)
{
    switch (k) {
    case TransitionKind::Gp:
        return "GP";
    case TransitionKind::Mgp:
        return "MGP";
    case TransitionKind::DmgpSs:
        return "DMGP-SS";
    }
    return "?";
}

inline TransitionKind parse_transition(const std::string& s)
{
    for (auto k : {TransitionKind::Gp, TransitionKind::Mgp, TransitionKind::DmgpSs})
        if (transition_name(k) == s)
            return k;
    throw ContractError("unknown transition model '" + s + "' (expected GP, MGP or DMGP-SS)");
}

struct RlConfig {
    int grid = 16; // support points per state axis
    int actions = 9;
    int hold = 5; // model steps per lookahead, the action held fixed
    bool integrate_position = true; // position follows pos + predicted new velocity; no position regression
    double discount = 0.95;
    double tolerance = 1e-4;
    int max_sweeps = 100;
    int max_steps = 600;
    CarState goal{0.45, 0.0};
    double reward_sd_pos = 0.05;
    double reward_sd_vel = 0.0035;
    int source_samples = 200;
    int target_before = 20;
    int target_after = 20;
    std::array<EnvSpec, 2> sources{EnvSpec{0.01, 0.0015}, EnvSpec{0.001, 0.0025}};
    EnvSpec target_before_env{0.009, 0.0015};
    EnvSpec target_after_env{0.0011, 0.0026};
    double init_pos_min = -0.6, init_pos_max = -0.5;
    int test_samples = 200; // held-out post-change transitions for the transition MAE
    SpikeSlabConfig ss;
    FitConfig fit;
    MgpL1Config mgp;
    GpConfig gp;

    RlConfig()
    {
        fit.tie_sources = true;
        mgp.lambdas = {0.0};
    }

    void validate() const
    {
        if (grid < 2 || actions < 2 || hold < 1)
            throw ContractError("need at least two support points per axis and two actions");
        if (!(discount >= 0.0 && discount < 1.0))
            throw ContractError("discount must lie in [0, 1)");
        if (max_sweeps < 1 || max_steps < 1 || source_samples < 1 || target_before < 1 || target_after < 0)
            throw ContractError("RL counts must be positive");
        for (const auto& e : sources)
            e.validate();
        target_before_env.validate();
        target_after_env.validate();
        ss.validate();
    }

    EnvSchedule target_schedule() const { return {target_before_env, target_before + 1, target_after_env}; }

    double action(int k) const { return -1.0 + 2.0 * k / (actions - 1); }
};

/// Density of N(goal, diag(sd_pos^2, sd_vel^2)) at s.
inline double reward(const CarState& s, const RlConfig& cfg)
{
    const double zp = (s.pos - cfg.goal.pos) / cfg.reward_sd_pos;
    const double zv = (s.vel - cfg.goal.vel) / cfg.reward_sd_vel;
    return std::exp(-0.5 * (zp * zp + zv * zv)) / (2.0 * std::numbers::pi * cfg.reward_sd_pos * cfg.reward_sd_vel);
}

/// Learned one-step model: one regression per state coordinate on scaled
/// inputs (pos, vel, action) and scaled increments next - current.
class TransitionModel {
public:
    struct Coordinate {
        Dataset data;
        std::shared_ptr<const Predictor> predictor;
        TargetKernelsAt kernels;
        double scale = 1.0; // increment = scaled prediction / scale
    };

    TransitionModel(TransitionKind kind, std::array<Coordinate, 2> coords) : kind_(kind), coords_(std::move(coords)) {}

    static Eigen::VectorXd features(const CarState& s, double action)
    {
        Eigen::VectorXd x(3);
        x << (s.pos + 0.1) / 1.1, s.vel / 0.07, action;
        return x;
    }

    /// Mean next state, clipped to the box.
    CarState predict(const CarState& s, double action) const
    {
        const Eigen::VectorXd x = features(s, action);
        CarState n;
        n.vel = std::clamp(s.vel + coords_[1].predictor->predict(x, coords_[1].kernels).mean / coords_[1].scale,
                           CarState::vel_min, CarState::vel_max);
        if (integrated())
            n.pos = s.pos + n.vel;
        else
            n.pos = s.pos + coords_[0].predictor->predict(x, coords_[0].kernels).mean / coords_[0].scale;
        return n.clipped();
    }

    /// Predictive mean and variance of the increment in one coordinate (0 pos, 1 vel).
    /// An integrated position increment is the predicted new velocity.
    Prediction predict_increment(int coord, const CarState& s, double action) const
    {
        const bool vel_only = coord == 0 && integrated();
        const auto& c = coords_[vel_only ? 1 : static_cast<std::size_t>(coord)];
        Prediction p = c.predictor->predict(features(s, action), c.kernels);
        p.mean /= c.scale;
        p.variance /= c.scale * c.scale;
        if (vel_only)
            p.mean += s.vel;
        return p;
    }

    bool integrated() const { return !coords_[0].predictor; }

    TransitionKind kind() const { return kind_; }
    const Coordinate& coordinate(int c) const { return coords_[static_cast<std::size_t>(c)]; }

    std::optional<FitResult> velocity_fit; // DMGP-SS only, for inspecting the amplitude support

private:
    TransitionKind kind_;
    std::array<Coordinate, 2> coords_;
};

namespace detail {

inline OutputSeries transition_series(const std::vector<Transition>& tr, int coord, int id, double scale)
{
    OutputSeries s;
    s.id = id;
    s.inputs.resize(static_cast<Eigen::Index>(tr.size()), 3);
    s.observations.resize(static_cast<Eigen::Index>(tr.size()));
    for (std::size_t k = 0; k < tr.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        s.times.push_back(tr[k].t);
        s.inputs.row(r) = TransitionModel::features(tr[k].s, tr[k].action).transpose();
        const double inc = coord == 0 ? tr[k].next.pos - tr[k].s.pos : tr[k].next.vel - tr[k].s.vel;
        s.observations(r) = scale * inc;
    }
    return s;
}

inline double increment_scale(const std::vector<const std::vector<Transition>*>& all, int coord)
{
    double m = 0.0;
    for (const auto* v : all)
        for (const auto& t : *v)
            m = std::max(m, std::abs(coord == 0 ? t.next.pos - t.s.pos : t.next.vel - t.s.vel));
    return m > 0.0 ? 2.0 / m : 1.0;
}

} // namespace detail

/// Fits velocity (and, unless integrated, position) increment models. Sources are stationary;
/// the target is indexed by sample stamp. GP ignores the sources; MGP is the static model without penalty.
inline TransitionModel fit_transition(const std::vector<Transition>& source1, const std::vector<Transition>& source2,
                                      const std::vector<Transition>& target, TransitionKind kind, const RlConfig& cfg,
                                      unsigned long long seed)
{
    std::array<TransitionModel::Coordinate, 2> coords;
    std::optional<FitResult> vfit;
    for (int c = cfg.integrate_position ? 1 : 0; c < 2; ++c) {
        const double scale = detail::increment_scale({&source1, &source2, &target}, c);
        Dataset data;
        data.sources.push_back(detail::transition_series(source1, c, 0, scale));
        data.sources.push_back(detail::transition_series(source2, c, 1, scale));
        data.target = detail::transition_series(target, c, 2, scale);
        auto& co = coords[static_cast<std::size_t>(c)];
        co.scale = scale;
        switch (kind) {
        case TransitionKind::Gp: {
            const GpFit g = fit_gp(data.target, cfg.gp);
            co.data = detail::single_output(data.target);
            const DynamicParams p = detail::single_output_params(data.target, g.kernel.amp, g.kernel.ls, g.kernel.noise);
            co.predictor = std::make_shared<Predictor>(co.data, p.constrained());
            co.kernels.amp = Eigen::VectorXd::Constant(1, g.kernel.amp);
            co.kernels.ls = g.kernel.ls.transpose();
            break;
        }
        case TransitionKind::Mgp: {
            MgpL1Config mc = cfg.mgp;
            mc.seed = seed + static_cast<unsigned long long>(c);
            const DynamicParams p = fit_mgp_l1_fixed(data, mc.lambdas.front(), mc.epochs, mc);
            co.data = data;
            co.predictor = std::make_shared<Predictor>(co.data, p.constrained());
            co.kernels = detail::static_kernels(p);
            break;
        }
        case TransitionKind::DmgpSs: {
            FitConfig fc = cfg.fit;
            fc.seed = seed + static_cast<unsigned long long>(c);
            FitResult f = fit(data, cfg.ss, fc);
            co.data = data;
            co.predictor = std::make_shared<Predictor>(co.data, f.params.constrained());
            co.kernels = forecast_params(f, data, data.target.times.back() + 1, cfg.ss);
            if (c == 1)
                vfit = std::move(f);
            break;
        }
        }
    }
    TransitionModel m(kind, std::move(coords));
    m.velocity_fit = std::move(vfit);
    return m;
}

/// Value model on the support grid plus the transition model used for greedy lookahead.
/// V(s) is the kernel-weighted average of the support values: non-negative weights summing
/// to one make every backup a discount-contraction, so V converges and stays in the reward range.
struct Policy {
    std::vector<CarState> support;
    Eigen::VectorXd values; // V at the support points
    Eigen::Vector2d length_scales;
    int sweeps = 0;
    bool converged = false;
    std::function<CarState(const CarState&, double)> model;
    RlConfig cfg;

    Eigen::RowVectorXd smoother(const CarState& s) const
    {
        Eigen::RowVectorXd w(static_cast<Eigen::Index>(support.size()));
        for (std::size_t k = 0; k < support.size(); ++k)
            w(static_cast<Eigen::Index>(k)) = kernel(s, support[k]);
        const double total = w.sum();
        if (total > 0.0)
            return w / total;
        // Far outside the grid every weight underflows: fall back to the nearest support point.
        Eigen::Index best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < support.size(); ++k) {
            const double zp = (s.pos - support[k].pos) / length_scales(0);
            const double zv = (s.vel - support[k].vel) / length_scales(1);
            if (zp * zp + zv * zv < best_d) {
                best_d = zp * zp + zv * zv;
                best = static_cast<Eigen::Index>(k);
            }
        }
        w.setZero();
        w(best) = 1.0;
        return w;
    }

    double value(const CarState& s) const { return smoother(s).dot(values); }

    CarState lookahead(const CarState& s, double a) const
    {
        CarState u = s;
        for (int h = 0; h < cfg.hold; ++h)
            u = model(u, a);
        return u;
    }

    double kernel(const CarState& a, const CarState& b) const
    {
        const double zp = (a.pos - b.pos) / length_scales(0);
        const double zv = (a.vel - b.vel) / length_scales(1);
        return std::exp(-0.5 * (zp * zp + zv * zv));
    }

    /// Greedy action: argmax over the action grid of r(u) + discount V(u), first wins ties.
    double action(const CarState& s) const
    {
        double best = -std::numeric_limits<double>::infinity();
        double a_best = 0.0;
        for (int k = 0; k < cfg.actions; ++k) {
            const double a = cfg.action(k);
            const CarState u = lookahead(s, a);
            const double q = reward(u, cfg) + cfg.discount * value(u);
            if (q > best) {
                best = q;
                a_best = a;
            }
        }
        return a_best;
    }
};

inline std::vector<CarState> support_grid(int n)
{
    std::vector<CarState> out;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out.push_back({CarState::pos_min + (CarState::pos_max - CarState::pos_min) * i / (n - 1),
                           CarState::vel_min + (CarState::vel_max - CarState::vel_min) * j / (n - 1)});
    return out;
}

/// Value iteration on the support grid: V starts at the rewards; each sweep backs up
/// max_a r(u) + discount V(u) with u the model's mean state after holding a, then refits V.
/// Stops when max |dV| < tolerance or after max_sweeps.
inline Policy policy_iterate(std::function<CarState(const CarState&, double)> model, const RlConfig& cfg)
{
    cfg.validate();
    Policy pol;
    pol.cfg = cfg;
    pol.model = std::move(model);
    pol.support = support_grid(cfg.grid);
    pol.length_scales << (CarState::pos_max - CarState::pos_min) / (cfg.grid - 1),
        (CarState::vel_max - CarState::vel_min) / (cfg.grid - 1);
    const auto n = static_cast<Eigen::Index>(pol.support.size());
    pol.values = Eigen::VectorXd::Zero(n);

    // Lookahead states and their smoother rows are fixed across sweeps.
    const int na = cfg.actions;
    Eigen::MatrixXd w(n * na, n);
    Eigen::VectorXd r_next(n * na);
    for (Eigen::Index s = 0; s < n; ++s)
        for (int a = 0; a < na; ++a) {
            const CarState u = pol.lookahead(pol.support[s], cfg.action(a));
            const Eigen::Index row = s * na + a;
            r_next(row) = reward(u, cfg);
            w.row(row) = pol.smoother(u);
        }

    Eigen::VectorXd v(n);
    for (Eigen::Index s = 0; s < n; ++s)
        v(s) = reward(pol.support[s], cfg);
    for (pol.sweeps = 0; pol.sweeps < cfg.max_sweeps;) {
        const Eigen::VectorXd q = r_next + cfg.discount * (w * v);
        Eigen::VectorXd nv(n);
        for (Eigen::Index s = 0; s < n; ++s)
            nv(s) = q.segment(s * na, na).maxCoeff();
        const double delta = (nv - v).cwiseAbs().maxCoeff();
        v = nv;
        ++pol.sweeps;
        if (delta < cfg.tolerance) {
            pol.converged = true;
            break;
        }
    }
    if (!pol.converged)
        std::cerr << "warning: value iteration did not converge in " << cfg.max_sweeps << " sweeps\n";
    pol.values = v;
    return pol;
}

struct TrajectoryStep {
    int step = 0;
    CarState state;
    double action = 0.0;
    double reward = 0.0;
};

struct Rollout {
    std::vector<TrajectoryStep> trajectory; // states after each step
    double mean_distance = 0.0;             // mean |pos - goal| over the steps
    bool reached = false;                   // |pos - goal| < 0.05 at some step
    int first_reach = -1;
};

inline Rollout rollout(const std::function<double(const CarState&)>& policy, const CarState& start, const EnvSpec& env,
                       const RlConfig& cfg)
{
    Rollout out;
    CarState s = start;
    double total = 0.0;
    for (int k = 1; k <= cfg.max_steps; ++k) {
        const double a = std::clamp(policy(s), -1.0, 1.0);
        s = step(s, a, env);
        const double dist = std::abs(s.pos - cfg.goal.pos);
        total += dist;
        if (dist < 0.05 && !out.reached) {
            out.reached = true;
            out.first_reach = k;
        }
        out.trajectory.push_back({k, s, a, reward(s, cfg)});
    }
    out.mean_distance = total / cfg.max_steps;
    return out;
}

struct RlResult {
    TransitionKind kind = TransitionKind::DmgpSs;
    double velocity_mae = 0.0; // on held-out post-change transitions
    double position_mae = 0.0;
    Rollout run;
    int sweeps = 0;
    bool converged = false;
    double seconds = 0.0;
    std::optional<FitResult> velocity_fit;
};

/// Full offline pipeline: sample sources and target, fit the transition model, iterate
/// the policy and execute it from a random start under the post-change environment.
inline RlResult run_rl(TransitionKind kind, const RlConfig& cfg, unsigned long long seed)
{
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(seed);
    const auto s1 = collect_samples(EnvSchedule{cfg.sources[0], std::nullopt, cfg.sources[0]}, cfg.source_samples, rng);
    const auto s2 = collect_samples(EnvSchedule{cfg.sources[1], std::nullopt, cfg.sources[1]}, cfg.source_samples, rng);
    const auto tg = collect_samples(cfg.target_schedule(), cfg.target_before + cfg.target_after, rng);
    const Stamp after = cfg.target_before + cfg.target_after + 1;
    const auto test = collect_samples(EnvSchedule{cfg.target_after_env, std::nullopt, cfg.target_after_env},
                                      cfg.test_samples, rng, after);
    std::uniform_real_distribution<double> init(cfg.init_pos_min, cfg.init_pos_max);
    const CarState start{init(rng), 0.0};

    TransitionModel model = fit_transition(s1, s2, tg, kind, cfg, seed);
    RlResult res;
    res.kind = kind;
    for (const auto& t : test) {
        res.position_mae += std::abs(model.predict_increment(0, t.s, t.action).mean - (t.next.pos - t.s.pos));
        res.velocity_mae += std::abs(model.predict_increment(1, t.s, t.action).mean - (t.next.vel - t.s.vel));
    }
    res.position_mae /= static_cast<double>(test.size());
    res.velocity_mae /= static_cast<double>(test.size());

    const Policy pol = policy_iterate([&model](const CarState& s, double a) { return model.predict(s, a); }, cfg);
    res.sweeps = pol.sweeps;
    res.converged = pol.converged;
    res.run = rollout([&pol](const CarState& s) { return pol.action(s); }, start, cfg.target_after_env, cfg);
    res.velocity_fit = model.velocity_fit;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

} // namespace dmgp
