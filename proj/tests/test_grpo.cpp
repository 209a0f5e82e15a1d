// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <croploop/error.hpp>
#include <croploop/grpo.hpp>
#include <croploop/toyworld.hpp>

#include <gtest/gtest.h>

#include <numeric>

using namespace croploop;

namespace
{

auto cropOf(int cell, int grid = 2) -> Trajectory
{
    auto traj = Trajectory {};
    traj.originalDims = { 100, 100 };
    traj.cropBoxesOriginalSpace.push_back(toyCellBox(cell, grid, traj.originalDims));
    return traj;
}

auto answerNow() -> Trajectory
{
    auto traj = Trajectory {};
    traj.originalDims = { 100, 100 };
    return traj;
}

} // namespace

TEST(Advantages, Examples)
{
    auto const a = advantages(std::vector<double> { 1, 0, 0, 1 });
    ASSERT_EQ(a.size(), 4u);
    auto const expected = std::vector<double> { 1, -1, -1, 1 };
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_NEAR(a[i], expected[i], 1e-12);
    for (auto v: advantages(std::vector<double> { 0.7, 0.7, 0.7 }))
        EXPECT_EQ(v, 0.0);
    auto const b = advantages(std::vector<double> { 2.2, 0.2 });
    EXPECT_NEAR(b[0], 1.0, 1e-12);
    EXPECT_NEAR(b[1], -1.0, 1e-12);
}

TEST(Advantages, NormalizedMoments)
{
    auto rng = std::mt19937_64(4);
    for (int t = 0; t < 200; ++t)
    {
        auto rewards = std::vector<double>(2 + rng() % 30);
        for (auto& r: rewards)
            r = unitInterval(rng()) * 3.0 - 1.0;
        auto const a = advantages(rewards);
        auto const mean = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
        auto var = 0.0;
        for (auto v: a)
            var += (v - mean) * (v - mean);
        EXPECT_LE(std::abs(mean), 1e-9);
        EXPECT_LE(std::abs(std::sqrt(var / double(a.size())) - 1.0), 1e-9);

        // Positive rescaling of rewards leaves advantages unchanged.
        auto scaled = rewards;
        for (auto& r: scaled)
            r = 5.0 * r + 2.0;
        auto const b = advantages(scaled);
        for (std::size_t i = 0; i < a.size(); ++i)
            ASSERT_NEAR(a[i], b[i], 1e-9);
    }
}

TEST(ClippedObjective, SpotValues)
{
    EXPECT_EQ(clippedObjective(std::vector<double> { 2.0 }, std::vector<double> { 1.0 }, 0.2), 1.2);
    EXPECT_EQ(clippedObjective(std::vector<double> { 0.5 }, std::vector<double> { -1.0 }, 0.2), -0.8);
    auto const adv = advantages(std::vector<double> { 3, 1, 0, 2 });
    EXPECT_NEAR(clippedObjective(std::vector<double>(4, 1.0), adv, 0.2), 0.0, 1e-12);
}

TEST(ClippedObjective, UnclippedInsideTrustRegion)
{
    auto rng = std::mt19937_64(2);
    for (int t = 0; t < 100; ++t)
    {
        auto ratios = std::vector<double>(8), advs = std::vector<double>(8);
        auto plain = 0.0;
        for (std::size_t i = 0; i < 8; ++i)
        {
            ratios[i] = 0.8 + 0.4 * unitInterval(rng());
            advs[i] = unitInterval(rng()) * 2 - 1;
            plain += ratios[i] * advs[i] / 8.0;
        }
        EXPECT_NEAR(clippedObjective(ratios, advs, 0.2), plain, 1e-12);
    }
}

TEST(ClippedObjective, LengthMismatchThrows)
{
    EXPECT_THROW((void)clippedObjective(std::vector<double> { 1.0 }, std::vector<double> {}, 0.2), InvalidArgument);
}

TEST(GradientStep, ZeroAdvantagesLeaveParametersUnchanged)
{
    auto policy = ToyPolicy(2);
    auto const before = policy.parameters();
    auto const group = RolloutGroup::make("g", { cropOf(0), cropOf(1), answerNow() }, { 1.0, 1.0, 1.0 }, policy);
    auto cfg = GrpoConfig {};
    cfg.learningRate = 0.5;
    (void)policyGradientStep(policy, std::span(&group, 1), cfg);
    EXPECT_EQ(policy.parameters(), before);
}

TEST(GradientStep, PositiveAdvantageRaisesLogit)
{
    auto policy = ToyPolicy(2);
    auto const before = policy.parameters();
    auto const group = RolloutGroup::make("g", { cropOf(3), cropOf(1), answerNow() }, { 1.0, 0.0, 0.0 }, policy);
    auto cfg = GrpoConfig {};
    cfg.learningRate = 0.1;
    auto const report = policyGradientStep(policy, std::span(&group, 1), cfg);
    EXPECT_GT(policy.parameters()[3], before[3]);
    EXPECT_LT(policy.parameters()[1], before[1]);
    EXPECT_GT(report.objectiveAfter, report.objectiveBefore);
    EXPECT_GT(report.gradientNorm, 0.0);
}

TEST(GradientStep, NonFiniteGradientAbortsBeforeUpdate)
{
    auto policy = ToyPolicy(2);
    auto const before = policy.parameters();
    auto group = RolloutGroup::make("g", { cropOf(0), cropOf(1) }, { 1.0, 0.0 }, policy);
    group.advantages[0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW((void)policyGradientStep(policy, std::span(&group, 1), GrpoConfig {}), NonFiniteGradient);
    EXPECT_EQ(policy.parameters(), before);
}

TEST(GradientStep, MatchesFiniteDifferences)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed)
    {
        auto const check = croploop::testing::toyGradientCheck(seed);
        EXPECT_GT(check.maxAbsGradient, 0.0) << "seed " << seed;
        EXPECT_LE(check.relativeError(), 1e-5) << "seed " << seed;
    }
}

TEST(GrpoConfig, Validation)
{
    auto cfg = GrpoConfig {};
    cfg.clipEpsilon = 0.0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg = GrpoConfig {};
    cfg.groupSize = 0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
}
