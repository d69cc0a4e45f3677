#include <cmath>

#include <gtest/gtest.h>

#include <dmgp/rl.hpp>

using namespace dmgp;

TEST(Env, StepMatchesClosedForm)
{
    const EnvSpec e{0.009, 0.0015};
    const CarState n = step({-0.5, 0.0}, 0.0, e);
    EXPECT_NEAR(n.vel, -0.0015 * std::cos(-1.5), 1e-12);
    EXPECT_NEAR(n.pos, -0.5 - 0.0015 * std::cos(-1.5), 1e-12);
    const CarState m = step({0.2, 0.01}, 0.5, e);
    const double v = 0.01 + 0.009 * 0.5 - 0.0015 * std::cos(0.6);
    EXPECT_NEAR(m.vel, v, 1e-12);
    EXPECT_NEAR(m.pos, 0.2 + v, 1e-12);
}

TEST(Env, NoForcesIsAFixedPoint)
{
    const CarState n = step({0.1, 0.0}, 0.0, EnvSpec{0.001, 0.0});
    EXPECT_EQ(n.pos, 0.1);
    EXPECT_EQ(n.vel, 0.0);
}

TEST(Env, VelocityThenPositionAreClipped)
{
    const CarState n = step({0.0, 0.0699}, 1.0, EnvSpec{0.01, 1e-6});
    EXPECT_EQ(n.vel, CarState::vel_max);
    EXPECT_NEAR(n.pos, 0.07, 1e-15);
    const CarState w = step({-1.19, -0.07}, -1.0, EnvSpec{0.01, 0.0025});
    EXPECT_EQ(w.vel, CarState::vel_min);
    EXPECT_EQ(w.pos, CarState::pos_min);
    EXPECT_THROW(step({}, 1.5, EnvSpec{}), ContractError);
    EXPECT_THROW((EnvSpec{0.0, 0.001}.validate()), ContractError);
}

TEST(Samples, DeterministicScheduledAndInBounds)
{
    const EnvSchedule sched{EnvSpec{0.009, 0.0015}, 21, EnvSpec{0.0011, 0.0026}};
    const auto a = collect_samples(sched, 40, 7ULL);
    const auto b = collect_samples(sched, 40, 7ULL);
    ASSERT_EQ(a.size(), 40u);
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a[k].t, static_cast<Stamp>(k + 1));
        EXPECT_EQ(a[k].s.pos, b[k].s.pos);
        EXPECT_EQ(a[k].action, b[k].action);
        EXPECT_GE(a[k].s.pos, CarState::pos_min);
        EXPECT_LE(a[k].s.pos, CarState::pos_max);
        EXPECT_LE(std::abs(a[k].s.vel), CarState::vel_max);
        EXPECT_LE(std::abs(a[k].action), 1.0);
        const CarState n = step(a[k].s, a[k].action, sched.at(a[k].t));
        EXPECT_EQ(a[k].next.pos, n.pos);
        EXPECT_EQ(a[k].next.vel, n.vel);
    }
    EXPECT_EQ(&sched.at(20), &sched.before);
    EXPECT_EQ(&sched.at(21), &sched.after);
}

TEST(Config, TransitionNamesRoundTrip)
{
    for (auto k : {TransitionKind::Gp, TransitionKind::Mgp, TransitionKind::DmgpSs})
        EXPECT_EQ(parse_transition(transition_name(k)), k);
    EXPECT_THROW(parse_transition("SVM"), ContractError);
    RlConfig c;
    EXPECT_EQ(c.action(0), -1.0);
    EXPECT_EQ(c.action(8), 1.0);
    EXPECT_EQ(c.target_schedule().change_time, 21);
}

namespace {

RlConfig small_grid()
{
    RlConfig c;
    c.grid = 8;
    c.max_sweeps = 60;
    return c;
}

} // namespace

TEST(Policy, ZeroDiscountIsMyopic)
{
    RlConfig c = small_grid();
    c.discount = 0.0;
    const EnvSpec e = c.target_after_env;
    const auto model = [&](const CarState& s, double a) { return step(s, a, e); };
    const Policy pol = policy_iterate(model, c);
    EXPECT_TRUE(pol.converged);
    for (const CarState s : {CarState{0.3, 0.02}, CarState{0.4, 0.0}, CarState{-0.5, 0.0}}) {
        double best = -1.0, a_best = 0.0;
        for (int k = 0; k < c.actions; ++k) {
            const double r = reward(pol.lookahead(s, c.action(k)), c);
            if (r > best) {
                best = r;
                a_best = c.action(k);
            }
        }
        EXPECT_EQ(pol.action(s), a_best);
    }
}

TEST(Policy, ConvergedValuesAreNonNegativeAndBounded)
{
    RlConfig c = small_grid();
    c.max_sweeps = 1000;
    const EnvSpec e = c.target_after_env;
    const Policy pol = policy_iterate([&](const CarState& s, double a) { return step(s, a, e); }, c);
    EXPECT_TRUE(pol.converged);
    EXPECT_GE(pol.values.minCoeff(), 0.0);
    const double r_max = reward(c.goal, c);
    EXPECT_LE(pol.values.maxCoeff(), r_max / (1.0 - c.discount) + 1e-6);
    for (const CarState s : {CarState{-2.0, 0.5}, CarState{0.45, 0.0}, CarState{0.1, -0.03}})
        EXPECT_GE(pol.value(s), 0.0);
}

TEST(Policy, DeterministicForAFixedModel)
{
    const RlConfig c = small_grid();
    const EnvSpec e = c.target_after_env;
    const auto model = [&](const CarState& s, double a) { return step(s, a, e); };
    const Policy a = policy_iterate(model, c);
    const Policy b = policy_iterate(model, c);
    EXPECT_EQ(a.values, b.values);
}

TEST(Policy, NullPolicyStaysFarFromGoal)
{
    const RlConfig c;
    const Rollout r = rollout([](const CarState&) { return 0.0; }, {-0.5, 0.0}, c.target_after_env, c);
    EXPECT_GT(r.mean_distance, 0.8);
    EXPECT_FALSE(r.reached);
    EXPECT_EQ(r.trajectory.size(), static_cast<std::size_t>(c.max_steps));
}

TEST(Policy, TrueDynamicsReachTheGoal)
{
    const RlConfig c;
    const EnvSpec e = c.target_after_env;
    const Policy pol = policy_iterate([&](const CarState& s, double a) { return step(s, a, e); }, c);
    for (double p0 : {-0.6, -0.55, -0.5}) {
        const Rollout r = rollout([&](const CarState& s) { return pol.action(s); }, {p0, 0.0}, e, c);
        EXPECT_TRUE(r.reached) << p0;
        EXPECT_LT(r.mean_distance, 0.5) << p0;
    }
}

TEST(Transition, StationaryWorldModelsAgree)
{
    // Target and both sources share one environment: every model should learn it.
    RlConfig c;
    const EnvSpec e{0.001, 0.0025};
    c.sources = {e, e};
    c.target_before_env = e;
    c.target_after_env = e;
    c.source_samples = 40;
    c.target_before = 10;
    c.target_after = 10;
    std::mt19937_64 rng(5);
    const auto s1 = collect_samples(EnvSchedule{e, std::nullopt, e}, c.source_samples, rng);
    const auto s2 = collect_samples(EnvSchedule{e, std::nullopt, e}, c.source_samples, rng);
    const auto tg = collect_samples(c.target_schedule(), 20, rng);
    const auto test = collect_samples(EnvSchedule{e, std::nullopt, e}, 100, rng, 21);
    double typical = 0.0;
    for (const auto& t : test)
        typical += std::abs(t.next.vel - t.s.vel);
    typical /= static_cast<double>(test.size());
    std::array<double, 2> mae{};
    int k = 0;
    for (auto kind : {TransitionKind::Mgp, TransitionKind::DmgpSs}) {
        const TransitionModel m = fit_transition(s1, s2, tg, kind, c, 3);
        EXPECT_TRUE(m.integrated());
        for (const auto& t : test)
            mae[k] += std::abs(m.predict_increment(1, t.s, t.action).mean - (t.next.vel - t.s.vel));
        mae[k] /= static_cast<double>(test.size());
        const CarState s{-0.3, 0.01};
        const CarState n = m.predict(s, 0.5);
        EXPECT_NEAR(n.pos, std::clamp(s.pos + n.vel, CarState::pos_min, CarState::pos_max), 1e-15);
        ++k;
    }
    EXPECT_LT(mae[0], 0.1 * typical);
    EXPECT_LT(mae[1], 0.1 * typical);
    EXPECT_LT(std::abs(mae[0] - mae[1]), 0.1 * typical);
}
