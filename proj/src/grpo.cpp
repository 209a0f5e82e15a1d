// SPDX-License-Identifier: Apache-2.0
#include <croploop/error.hpp>
#include <croploop/grpo.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace croploop
{

void GrpoConfig::validate() const
{
    if (groupSize < 1)
        throw InvalidArgument("group size must be >= 1");
    if (!(clipEpsilon > 0))
        throw InvalidArgument("clip epsilon must be > 0");
    if (!(learningRate >= 0) || !std::isfinite(learningRate))
        throw InvalidArgument("learning rate must be finite and >= 0");
    if (!(stdFloor >= 0))
        throw InvalidArgument("std floor must be >= 0");
}

auto advantages(std::span<const double> rewards, double stdFloor) -> std::vector<double>
{
    auto out = std::vector<double>(rewards.size(), 0.0);
    if (rewards.empty())
        return out;
    auto const n = double(rewards.size());
    auto mean = 0.0;
    for (auto r: rewards)
        mean += r;
    mean /= n;
    auto var = 0.0;
    for (auto r: rewards)
        var += (r - mean) * (r - mean);
    auto const sd = std::sqrt(var / n);
    if (!(sd >= stdFloor) || sd == 0.0)
        return out;
    for (std::size_t i = 0; i < rewards.size(); ++i)
        out[i] = (rewards[i] - mean) / sd;
    return out;
}

auto clippedObjective(std::span<const double> ratios, std::span<const double> advs, double epsilon) -> double
{
    if (ratios.size() != advs.size())
        throw InvalidArgument("ratios and advantages differ in length");
    if (ratios.empty())
        return 0.0;
    auto sum = 0.0;
    for (std::size_t i = 0; i < ratios.size(); ++i)
    {
        auto const rho = ratios[i];
        auto const clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
        sum += std::min(rho * advs[i], clipped * advs[i]);
    }
    return sum / double(ratios.size());
}

auto RolloutGroup::make(std::string instanceId, std::vector<Trajectory> trajectories, std::vector<double> rewards,
                        const DifferentiablePolicy& behaviour, double stdFloor) -> RolloutGroup
{
    if (trajectories.size() != rewards.size())
        throw InvalidArgument("one reward per trajectory required");
    auto group = RolloutGroup {};
    group.instanceId = std::move(instanceId);
    group.advantages = croploop::advantages(rewards, stdFloor);
    group.rewards = std::move(rewards);
    for (auto const& t: trajectories)
        group.oldLogProbs.push_back(behaviour.logProb(t));
    group.trajectories = std::move(trajectories);
    return group;
}

namespace
{

    struct Term
    {
        double rho;
        double advantage;
        bool unclippedActive;
        double value;
    };

    auto evaluate(const DifferentiablePolicy& policy, const RolloutGroup& g, std::size_t i, double epsilon) -> Term
    {
        auto const rho = std::exp(policy.logProb(g.trajectories[i]) - g.oldLogProbs[i]);
        auto const a = g.advantages[i];
        auto const plain = rho * a;
        auto const clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon) * a;
        return Term { rho, a, plain <= clipped, std::min(plain, clipped) };
    }

    auto trajectoryCount(std::span<const RolloutGroup> groups) -> std::size_t
    {
        auto n = std::size_t { 0 };
        for (auto const& g: groups)
        {
            if (g.trajectories.size() != g.advantages.size() || g.trajectories.size() != g.oldLogProbs.size())
                throw InvalidArgument(fmt::format("rollout group '{}' is inconsistent", g.instanceId));
            n += g.trajectories.size();
        }
        return n;
    }

} // namespace

auto surrogateObjective(const DifferentiablePolicy& policy, std::span<const RolloutGroup> groups, double epsilon)
    -> double
{
    auto const n = trajectoryCount(groups);
    if (n == 0)
        return 0.0;
    auto sum = 0.0;
    for (auto const& g: groups)
        for (std::size_t i = 0; i < g.trajectories.size(); ++i)
            sum += evaluate(policy, g, i, epsilon).value;
    return sum / double(n);
}

auto surrogateGradient(const DifferentiablePolicy& policy, std::span<const RolloutGroup> groups, double epsilon)
    -> std::vector<double>
{
    auto grad = std::vector<double>(policy.parameters().size(), 0.0);
    auto const n = trajectoryCount(groups);
    if (n == 0)
        return grad;
    for (auto const& g: groups)
    {
        for (std::size_t i = 0; i < g.trajectories.size(); ++i)
        {
            auto const term = evaluate(policy, g, i, epsilon);
            if (term.unclippedActive && term.advantage != 0.0)
                policy.accumulateLogProbGradient(g.trajectories[i], term.advantage * term.rho / double(n), grad);
        }
    }
    return grad;
}

auto stepReportToJson(const StepReport& report) -> nlohmann::json
{
    return {
        { "objective_before", report.objectiveBefore },
        { "objective_after", report.objectiveAfter },
        { "gradient_norm", report.gradientNorm },
        { "clipped_fraction", report.clippedFraction },
    };
}

auto policyGradientStep(DifferentiablePolicy& policy, std::span<const RolloutGroup> groups, const GrpoConfig& cfg)
    -> StepReport
{
    cfg.validate();
    auto report = StepReport {};
    report.objectiveBefore = surrogateObjective(policy, groups, cfg.clipEpsilon);
    auto const grad = surrogateGradient(policy, groups, cfg.clipEpsilon);

    auto norm2 = 0.0;
    for (auto g: grad)
    {
        if (!std::isfinite(g))
            throw NonFiniteGradient("policy gradient contains a non-finite component");
        norm2 += g * g;
    }
    report.gradientNorm = std::sqrt(norm2);

    auto clipped = std::size_t { 0 };
    auto const n = trajectoryCount(groups);
    for (auto const& g: groups)
        for (std::size_t i = 0; i < g.trajectories.size(); ++i)
            clipped += evaluate(policy, g, i, cfg.clipEpsilon).unclippedActive ? 0 : 1;
    report.clippedFraction = n > 0 ? double(clipped) / double(n) : 0.0;

    auto params = policy.parameters();
    for (std::size_t k = 0; k < params.size(); ++k)
        params[k] += cfg.learningRate * grad[k];
    policy.setParameters(params);
    report.objectiveAfter = surrogateObjective(policy, groups, cfg.clipEpsilon);
    return report;
}

} // namespace croploop
