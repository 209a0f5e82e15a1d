// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/protocol.hpp>

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace croploop
{

struct GrpoConfig
{
    int groupSize = 16;
    double clipEpsilon = 0.2;
    double learningRate = 1e-6;
    double stdFloor = 1e-8;

    void validate() const;
};

/// (r_i - mean) / std with population statistics; all zeros when std < stdFloor.
[[nodiscard]] auto advantages(std::span<const double> rewards, double stdFloor = 1e-8) -> std::vector<double>;

/// mean_i min(rho_i*A_i, clip(rho_i, 1-eps, 1+eps)*A_i).
[[nodiscard]] auto clippedObjective(std::span<const double> ratios, std::span<const double> advs, double epsilon)
    -> double;

/// A policy whose trajectory log-probabilities are differentiable in a flat parameter vector.
class DifferentiablePolicy
{
  public:
    virtual ~DifferentiablePolicy() = default;

    [[nodiscard]] virtual auto parameters() const -> std::vector<double> = 0;
    virtual void setParameters(std::span<const double> params) = 0;
    /// log pi(traj) under the current parameters.
    [[nodiscard]] virtual auto logProb(const Trajectory& traj) const -> double = 0;
    /// grad += scale * d log pi(traj) / d params.
    virtual void accumulateLogProbGradient(const Trajectory& traj, double scale, std::span<double> grad) const = 0;
};

/// N rollouts of one instance with rewards, advantages and behaviour-policy log-probs.
struct RolloutGroup
{
    std::string instanceId;
    std::vector<Trajectory> trajectories;
    std::vector<double> rewards;
    std::vector<double> advantages;
    std::vector<double> oldLogProbs;

    /// Computes advantages and records log-probs under `behaviour`.
    static auto make(std::string instanceId, std::vector<Trajectory> trajectories, std::vector<double> rewards,
                     const DifferentiablePolicy& behaviour, double stdFloor = 1e-8) -> RolloutGroup;
};

/// Surrogate objective over all trajectories of all groups, with sequence-level ratios.
[[nodiscard]] auto surrogateObjective(const DifferentiablePolicy& policy, std::span<const RolloutGroup> groups,
                                      double epsilon) -> double;

/// Analytic gradient of surrogateObjective: A*rho*grad(log pi) where the unclipped term is the minimum, else 0.
[[nodiscard]] auto surrogateGradient(const DifferentiablePolicy& policy, std::span<const RolloutGroup> groups,
                                     double epsilon) -> std::vector<double>;

struct StepReport
{
    double objectiveBefore = 0.0;
    double objectiveAfter = 0.0;
    double gradientNorm = 0.0;
    /// Share of trajectories whose clipped term was active.
    double clippedFraction = 0.0;
};

[[nodiscard]] auto stepReportToJson(const StepReport& report) -> nlohmann::json;

/// One ascent step of size learningRate. Throws NonFiniteGradient (parameters untouched)
/// when the gradient has a NaN or infinity.
auto policyGradientStep(DifferentiablePolicy& policy, std::span<const RolloutGroup> groups, const GrpoConfig& cfg)
    -> StepReport;

} // namespace croploop
