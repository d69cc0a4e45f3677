#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include <dmgp/experiments.hpp>

#include "oracles.hpp"

using namespace dmgp;

TEST(Crps, ClosedFormMatchesQuadratureOnRandomTriples)
{
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> mu(0.0, 2.0);
    std::uniform_real_distribution<double> logs(std::log(0.05), std::log(3.0));
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const double m = mu(rng), s = std::exp(logs(rng));
        const double y = m + s * std::normal_distribution<double>(0.0, 1.5)(rng);
        worst = std::max(worst, std::abs(crps(m, s * s, y) - oracle::crps_quadrature(m, s, y)));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(Crps, SpecialValues)
{
    const double s = 0.7;
    EXPECT_NEAR(crps(1.0, s * s, 1.0), s * (std::sqrt(2.0 / std::numbers::pi) - 1.0 / std::sqrt(std::numbers::pi)), 1e-14);
    EXPECT_NEAR(crps(0.3, 1e-20, 1.0), 0.7, 1e-9);
    EXPECT_DOUBLE_EQ(crps(0.3, 0.0, 1.0), 0.7);
    EXPECT_DOUBLE_EQ(crps(0.3, -1.0, 1.0), 0.7);
    EXPECT_GE(crps(0.0, 1.0, 5.0), 0.0);
}

TEST(Mae, BasicProperties)
{
    const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(5, 0.0, 1.0);
    EXPECT_DOUBLE_EQ(mae(a, a), 0.0);
    EXPECT_NEAR(mae(a.array() + 0.25, a), 0.25, 1e-15);
    EXPECT_THROW(mae(Eigen::VectorXd(), Eigen::VectorXd()), ContractError);
    EXPECT_THROW(mae(a, a.head(3)), ContractError);
}

TEST(Generators, CaseOneCoefficients)
{
    const Eigen::Vector4d zero = Eigen::Vector4d::Zero();
    for (double t : {1.0, 39.0, 40.0, 79.0, 80.0, 100.0, 130.0})
        EXPECT_EQ(case_coefficients(1, t, zero)(3), 0.0);
    const Eigen::Vector4d a(0.1, -0.2, 0.3, 0.4);
    const Eigen::Vector4d c = case_coefficients(1, 100.0, a);
    EXPECT_NEAR(c(1), 1.0 + a(1), 1e-15);
    EXPECT_NEAR(c(2), 1.0 + a(2), 1e-15);
    EXPECT_EQ(c(0), 0.0);
    // Direct evaluation at t = 10 with zero perturbations: 2 sin(pi/2).
    EXPECT_NEAR(case_target(1, 10.0, zero), 2.0, 1e-12);
}

TEST(Generators, CaseTwoCoefficients)
{
    const Eigen::Vector4d a(0.15, 0.0, 0.0, 0.0);
    EXPECT_NEAR(case_coefficients(2, 0.0, a)(0), 2.5 + 0.15, 1e-15);
    for (double t : {40.0, 60.0, 129.0})
        EXPECT_EQ(case_coefficients(2, t, a)(0), 0.0);
    // a_2 is continuous on [40, 130).
    for (double t = 40.5; t < 129.0; t += 1.0)
        EXPECT_NEAR(case_coefficients(2, t, a)(1), case_coefficients(2, t + 1e-7, a)(1), 1e-6);
}

TEST(Generators, ShapesDeterminismAndFamilies)
{
    CaseSpec spec;
    spec.seed = 7;
    const Dataset d = generate_case(spec);
    EXPECT_EQ(d.num_outputs(), 5);
    for (const auto& s : d.sources)
        EXPECT_EQ(s.size(), 130);
    EXPECT_EQ(d.target.size(), 130);
    EXPECT_EQ(generate_case(spec).target.observations, d.target.observations);

    spec.case_id = 2;
    spec.k = 4;
    EXPECT_EQ(generate_case(spec).num_outputs(), 17);

    // Noise-free sources follow their family.
    spec = CaseSpec{};
    spec.noise = 0.0;
    spec.phase_sd = 0.0;
    const Dataset clean = generate_case(spec);
    for (int s = 0; s < 4; ++s)
        EXPECT_NEAR(clean.sources[s].observations(9), source_family(s + 1, 10.0, 0.0), 1e-12);
    EXPECT_NEAR(source_family(2, 41.0, 0.0), 2.0 * std::sin(2.0 * std::numbers::pi * 41.0 / 20.0), 1e-12);
}

TEST(Gaps, ThreeRunsOfTenInsideWindows)
{
    for (unsigned long long seed = 0; seed < 20; ++seed) {
        CaseSpec spec;
        spec.seed = seed;
        const GapSplit g = generate_case_with_gaps(spec);
        ASSERT_EQ(g.test_times.size(), 30u);
        EXPECT_EQ(g.train.target.size(), 100);
        for (int w = 0; w < 3; ++w) {
            const auto [lo, hi] = spec.gap_windows[static_cast<std::size_t>(w)];
            int count = 0;
            for (Stamp t : g.test_times)
                count += t >= lo && t <= hi;
            EXPECT_EQ(count, 10);
        }
        for (std::size_t q = 1; q < g.test_times.size(); ++q)
            if (q % 10)
                EXPECT_EQ(g.test_times[q], g.test_times[q - 1] + 1);
        std::set<Stamp> train(g.train.target.times.begin(), g.train.target.times.end());
        for (Stamp t : g.test_times)
            EXPECT_FALSE(train.contains(t));
        EXPECT_EQ(g.train.sources[0].size(), 130);
    }
}

TEST(Gaps, RemovingUnobservedStampIsAnError)
{
    CaseSpec spec;
    const Dataset d = generate_case(spec);
    EXPECT_THROW(remove_target_stamps(d, {500}), ContractError);
}

TEST(Segmented, ShapesAndOneGapPerSegment)
{
    SegmentSpec spec;
    spec.seed = 3;
    const GapSplit g = generate_segmented(spec);
    EXPECT_EQ(g.train.num_outputs(), 12);
    const int n = spec.segments * spec.segment_length;
    EXPECT_EQ(g.train.sources[0].size(), n);
    EXPECT_EQ(static_cast<int>(g.test_times.size()), spec.segments * spec.gap_length);
    for (int s = 0; s < spec.segments; ++s) {
        int count = 0;
        for (Stamp t : g.test_times)
            count += (t - 1) / spec.segment_length == s;
        EXPECT_EQ(count, spec.gap_length);
    }
    EXPECT_EQ(generate_segmented(spec).test_truth, g.test_truth);
}

TEST(Rescale, MapsEachOutputToBound)
{
    CaseSpec spec;
    Dataset d = generate_case(spec);
    const Eigen::VectorXd f = rescale_max_abs(d);
    EXPECT_EQ(f.size(), 5);
    for (const auto& s : d.sources)
        EXPECT_NEAR(s.observations.cwiseAbs().maxCoeff(), 2.0, 1e-12);
    EXPECT_NEAR(d.target.observations.cwiseAbs().maxCoeff(), 2.0, 1e-12);
}

TEST(Downsample, KeepsEveryStrideth)
{
    CaseSpec spec;
    const Dataset d = generate_case(spec);
    const Dataset s = downsample(d, 4);
    EXPECT_EQ(s.target.size(), 33);
    EXPECT_EQ(s.target.times[1], 5);
    EXPECT_EQ(s.sources[2].observations(2), d.sources[2].observations(8));
    EXPECT_THROW(downsample(d, 0), ContractError);
}

TEST(Support, DesignedPatternAndReport)
{
    EXPECT_TRUE(designed_active(1, 1, 39));
    EXPECT_FALSE(designed_active(1, 1, 40));
    EXPECT_TRUE(designed_active(1, 2, 40));
    EXPECT_TRUE(designed_active(1, 3, 80));
    EXPECT_FALSE(designed_active(1, 4, 100));

    // A fit whose support equals the design scores 1 with exact change times.
    CaseSpec spec;
    const GapSplit g = generate_case_with_gaps(spec);
    FitResult f;
    std::mt19937_64 rng(1);
    f.params = initial_params(g.train, rng);
    f.gamma = constant_gamma(g.train, 0.0);
    const auto& times = g.train.target.times;
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index r = 0; r < g.train.target.size(); ++r) {
            const bool on = designed_active(1, static_cast<int>(i) + 1, times[static_cast<std::size_t>(r)]);
            f.params.target_amp[static_cast<std::size_t>(i)](r) = softplus_inverse(on ? 1.0 : 1e-5);
            if (r > 0)
                f.gamma.values(i, r - 1) = on ? 0.9 : 0.2;
        }
    const SupportReport rep = support_report(f, g.train, 1);
    EXPECT_GT(rep.match, 0.99);
    ASSERT_EQ(rep.changes.size(), 3u);
    EXPECT_TRUE(rep.changes_within(10));
    EXPECT_NEAR(inactive_gamma_median(f, g.train, 1), 0.2, 1e-12);
}

TEST(Benchmark, SingleGpReplicationGivesOneRow)
{
    CaseSpec spec;
    spec.seed = 5;
    const BenchmarkReport rep = run_benchmark(spec, {Method::Gp}, 1, case_settings(1));
    ASSERT_EQ(rep.rows.size(), 1u);
    EXPECT_TRUE(rep.rows[0].ok);
    EXPECT_GT(rep.rows[0].mae, 0.0);
    EXPECT_GT(rep.rows[0].crps, 0.0);
    EXPECT_EQ(rep.rows[0].predictions.size(), 30u);
    const MethodSummary s = rep.summary(Method::Gp);
    EXPECT_EQ(s.runs, 1);
    EXPECT_EQ(s.failures, 0);
    EXPECT_DOUBLE_EQ(s.mae_mean, rep.rows[0].mae);
}

TEST(Benchmark, ResultsDoNotDependOnJobs)
{
    CaseSpec spec;
    spec.seed = 11;
    const auto a = run_benchmark(spec, {Method::Gp}, 3, case_settings(1), 1);
    const auto b = run_benchmark(spec, {Method::Gp}, 3, case_settings(1), 3);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t k = 0; k < a.rows.size(); ++k)
        EXPECT_EQ(a.rows[k].mae, b.rows[k].mae);
}

TEST(Benchmark, FailedReplicationsAreCountedAndExcluded)
{
    int calls = 0;
    const auto rep = run_replications(
        [&](unsigned long long seed) {
            ++calls;
            if (seed == 1)
                throw NumericalError("synthetic failure");
            CaseSpec spec;
            spec.seed = seed;
            return generate_case_with_gaps(spec);
        },
        {Method::Gp}, 2, case_settings(1), 0);
    EXPECT_EQ(calls, 2);
    const MethodSummary s = rep.summary(Method::Gp);
    EXPECT_EQ(s.runs, 1);
    EXPECT_EQ(s.failures, 1);
}

TEST(Scaling, ObjectiveTimeIsPositive)
{
    CaseSpec spec;
    EXPECT_GT(objective_seconds(generate_case(spec), 1), 0.0);
}
