// SPDX-License-Identifier: Apache-2.0
#include <croploop/error.hpp>
#include <croploop/rewards.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cstdlib>
#include <limits>

namespace croploop
{

GtBoxSet::GtBoxSet(std::vector<Box> boxes): _boxes(std::move(boxes))
{
    if (_boxes.empty())
        throw ValidationError("ground-truth box set is empty");
    for (std::size_t i = 0; i < _boxes.size(); ++i)
        if (_boxes[i].empty())
            throw ValidationError(fmt::format("ground-truth box {} is degenerate", i));
    if (auto const bad = nestingViolation(_boxes))
        throw ValidationError(fmt::format("nesting violated at index {}", *bad));
}

void RewardConfig::validate() const
{
    if (wAcc < 0 || wFormat < 0 || wTool < 0 || wGeo < 0)
        throw InvalidArgument("reward weights must be non-negative");
    if (tau < 0 || tau > 1)
        throw InvalidArgument("tau must lie in [0,1]");
    if (omega < 0 || omega > 1)
        throw InvalidArgument("omega must lie in [0,1]");
}

auto toJson(const RewardConfig& cfg) -> nlohmann::json
{
    return {
        { "w_acc", cfg.wAcc }, { "w_format", cfg.wFormat }, { "w_tool", cfg.wTool },
        { "tau", cfg.tau },    { "omega", cfg.omega },      { "w_geo", cfg.wGeo },
    };
}

void applyJson(RewardConfig& cfg, const nlohmann::json& j)
{
    if (!j.is_object())
        throw InvalidArgument("reward config must be a JSON object");
    for (auto const& [key, value]: j.items())
    {
        if (!value.is_number())
            throw InvalidArgument(fmt::format("reward key '{}' must be a number", key));
        auto const v = value.get<double>();
        if (key == "w_acc")
            cfg.wAcc = v;
        else if (key == "w_format")
            cfg.wFormat = v;
        else if (key == "w_tool")
            cfg.wTool = v;
        else if (key == "tau")
            cfg.tau = v;
        else if (key == "omega")
            cfg.omega = v;
        else if (key == "w_geo")
            cfg.wGeo = v;
        else
            throw InvalidArgument(fmt::format("unknown reward key '{}'", key));
    }
    cfg.validate();
}

auto rewardToJson(const RewardBreakdown& r) -> nlohmann::json
{
    return {
        { "acc", r.acc }, { "format", r.format }, { "tool", r.tool }, { "iou", r.iou },
        { "l1", r.l1 },   { "geo", r.geo },       { "total", r.total },
    };
}

auto accuracyReward(std::optional<std::string_view> predicted, std::string_view gold, AnswerKind kind) -> double
{
    return answersMatch(predicted, gold, kind) ? 1.0 : 0.0;
}

auto formatReward(const Trajectory& traj) -> double
{
    if (traj.terminatedBy == Termination::ProtocolError)
        return 0.0;
    for (auto const& turn: traj.turns)
        if (turn.parsed.isMalformed())
            return 0.0;
    return 1.0;
}

auto stage1Total(const Trajectory& traj, std::string_view gold, AnswerKind kind, const RewardConfig& cfg)
    -> RewardBreakdown
{
    auto r = RewardBreakdown {};
    auto const predicted = traj.finalAnswer ? std::optional<std::string_view>(*traj.finalAnswer) : std::nullopt;
    r.acc = accuracyReward(predicted, gold, kind);
    r.format = formatReward(traj);
    r.tool = r.acc > 0 && traj.toolCallCount() >= 1 ? 1.0 : 0.0;
    r.total = cfg.wAcc * r.acc + cfg.wFormat * r.format + r.tool * cfg.wTool;
    return r;
}

auto iou(const Box& a, const Box& b) noexcept -> double
{
    auto const inter = intersectionArea(a, b);
    auto const uni = a.area() + b.area() - inter;
    return uni > 0 ? double(inter) / double(uni) : 0.0;
}

auto overlap(const Box& bp, const Box& b1) noexcept -> double
{
    auto const area = b1.area();
    return area > 0 ? double(intersectionArea(bp, b1)) / double(area) : 0.0;
}

auto bestIou(const Box& bp, const GtBoxSet& gt) -> double
{
    auto best = 0.0;
    for (auto const& b: gt.boxes())
        best = std::max(best, iou(bp, b));
    return best;
}

auto iouReward(const Box& bp, const GtBoxSet& gt, double tau) -> double
{
    if (!(overlap(bp, gt.innermost()) > tau))
        return 0.0;
    return bestIou(bp, gt);
}

auto l1Reward(const Box& bp, const GtBoxSet& gt, Dims image) -> double
{
    auto const norm = 2.0 * (double(image.width) + double(image.height));
    if (norm <= 0)
        throw InvalidArgument("image dims must be positive");
    auto best = std::numeric_limits<double>::infinity();
    for (auto const& b: gt.boxes())
    {
        auto const sum = std::abs(std::int64_t(bp.x1) - b.x1) + std::abs(std::int64_t(bp.y1) - b.y1)
                         + std::abs(std::int64_t(bp.x2) - b.x2) + std::abs(std::int64_t(bp.y2) - b.y2);
        best = std::min(best, double(sum) / norm);
    }
    return std::clamp(1.0 - best, 0.0, 1.0);
}

auto geoReward(const Box& bp, const GtBoxSet& gt, Dims image, const RewardConfig& cfg) -> double
{
    return cfg.omega * iouReward(bp, gt, cfg.tau) + (1.0 - cfg.omega) * l1Reward(bp, gt, image);
}

auto stage2Total(const Trajectory& traj, std::string_view gold, AnswerKind kind, const std::optional<GtBoxSet>& gt,
                 const RewardConfig& cfg) -> RewardBreakdown
{
    if (!gt)
        throw MissingGt(fmt::format("instance '{}' has no ground-truth boxes", traj.instanceId));
    auto r = stage1Total(traj, gold, kind, cfg);
    auto const bp = traj.finalCropBox();
    if (!bp)
        return r;
    r.iou = iouReward(*bp, *gt, cfg.tau);
    r.l1 = l1Reward(*bp, *gt, traj.originalDims);
    r.geo = cfg.omega * r.iou + (1.0 - cfg.omega) * r.l1;
    r.total += cfg.wGeo * r.geo;
    return r;
}

} // namespace croploop
