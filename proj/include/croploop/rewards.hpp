// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/answer.hpp>
#include <croploop/geometry.hpp>
#include <croploop/protocol.hpp>

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace croploop
{

/// Nested ground-truth boxes B_1 (minimal region) ... B_n (context), original-image pixels.
class GtBoxSet
{
  public:
    /// Throws ValidationError when empty, when a box is degenerate, or when nesting fails.
    explicit GtBoxSet(std::vector<Box> boxes);

    [[nodiscard]] auto boxes() const noexcept -> std::span<const Box> { return _boxes; }
    [[nodiscard]] auto size() const noexcept -> std::size_t { return _boxes.size(); }
    /// 1-based, matching B_1 ... B_n.
    [[nodiscard]] auto level(std::size_t i) const -> const Box& { return _boxes.at(i - 1); }
    [[nodiscard]] auto innermost() const -> const Box& { return _boxes.front(); }
    [[nodiscard]] auto outermost() const -> const Box& { return _boxes.back(); }

  private:
    std::vector<Box> _boxes;
};

struct RewardConfig
{
    double wAcc = 0.8;
    double wFormat = 0.2;
    double wTool = 1.2;
    double tau = 0.9;
    double omega = 0.5;
    double wGeo = 1.0;

    /// Throws InvalidArgument on negative weights or tau/omega outside [0,1].
    void validate() const;
};

[[nodiscard]] auto toJson(const RewardConfig& cfg) -> nlohmann::json;
/// Applies the keys present in `j`; unknown keys throw InvalidArgument.
void applyJson(RewardConfig& cfg, const nlohmann::json& j);

/// Sub-rewards are unweighted; total applies the weights of the producing stage.
struct RewardBreakdown
{
    double acc = 0.0;
    double format = 0.0;
    /// 1 when the tool bonus gate fired.
    double tool = 0.0;
    double iou = 0.0;
    double l1 = 0.0;
    double geo = 0.0;
    double total = 0.0;
};

[[nodiscard]] auto rewardToJson(const RewardBreakdown& r) -> nlohmann::json;

[[nodiscard]] auto accuracyReward(std::optional<std::string_view> predicted, std::string_view gold, AnswerKind kind)
    -> double;

/// 1 iff no turn is malformed and the episode did not end in a protocol error.
[[nodiscard]] auto formatReward(const Trajectory& traj) -> double;

/// wAcc*acc + wFormat*fmt + [acc > 0 and at least one crop]*wTool.
[[nodiscard]] auto stage1Total(const Trajectory& traj, std::string_view gold, AnswerKind kind,
                               const RewardConfig& cfg = {}) -> RewardBreakdown;

/// Exact area ratios; both return 0 for empty operands.
[[nodiscard]] auto iou(const Box& a, const Box& b) noexcept -> double;
/// Fraction of b1's area covered by bp.
[[nodiscard]] auto overlap(const Box& bp, const Box& b1) noexcept -> double;

/// max_i iou(bp, B_i) when overlap(bp, B_1) > tau, else 0.
[[nodiscard]] auto iouReward(const Box& bp, const GtBoxSet& gt, double tau) -> double;
/// max_i iou(bp, B_i), ungated.
[[nodiscard]] auto bestIou(const Box& bp, const GtBoxSet& gt) -> double;
/// clamp(1 - min_i d_i, 0, 1) with d_i the corner L1 distance over 2(W+H).
[[nodiscard]] auto l1Reward(const Box& bp, const GtBoxSet& gt, Dims image) -> double;
/// omega*iouReward + (1-omega)*l1Reward.
[[nodiscard]] auto geoReward(const Box& bp, const GtBoxSet& gt, Dims image, const RewardConfig& cfg = {}) -> double;

/// stage1Total + [at least one crop]*wGeo*geoReward(final crop). Throws MissingGt when gt is absent.
[[nodiscard]] auto stage2Total(const Trajectory& traj, std::string_view gold, AnswerKind kind,
                               const std::optional<GtBoxSet>& gt, const RewardConfig& cfg = {}) -> RewardBreakdown;

} // namespace croploop
