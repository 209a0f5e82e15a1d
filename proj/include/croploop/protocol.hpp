// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/error.hpp>
#include <croploop/imaging.hpp>
#include <croploop/policy.hpp>

#include <json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace croploop
{

/// Crop request; the box is in the pixel space of the global view the policy saw.
struct ToolCall
{
    Box box;
};

struct FinalAnswer
{
    std::string text;
};

struct Malformed
{
    std::string reason;
};

using TurnAction = std::variant<ToolCall, FinalAnswer, Malformed>;

struct ParsedTurn
{
    std::string think;
    TurnAction action;

    [[nodiscard]] auto isToolCall() const noexcept -> bool { return std::holds_alternative<ToolCall>(action); }
    [[nodiscard]] auto isAnswer() const noexcept -> bool { return std::holds_alternative<FinalAnswer>(action); }
    [[nodiscard]] auto isMalformed() const noexcept -> bool { return std::holds_alternative<Malformed>(action); }
};

/// Turn grammar:
///
///     <think>...</think><tool_call>{"name":"crop","bbox":[x1,y1,x2,y2]}</tool_call>
///     <think>...</think><answer>...</answer>
///
/// Whitespace between blocks is allowed. Anything else yields Malformed with
/// the first violation as its reason.
[[nodiscard]] auto parseTurn(std::string_view text) -> ParsedTurn;

[[nodiscard]] auto formatToolCall(std::string_view think, const Box& box) -> std::string;
[[nodiscard]] auto formatAnswer(std::string_view think, std::string_view answer) -> std::string;

enum class Termination
{
    Answer,
    MaxTurns,
    ProtocolError,
};

[[nodiscard]] auto toString(Termination t) -> std::string_view;
[[nodiscard]] auto parseTermination(std::string_view text) -> Termination;

struct TurnRecord
{
    std::string text;
    ParsedTurn parsed;
    std::optional<std::string> cropImageId;
    /// Executed crop in original-image pixels (after any substitution).
    std::optional<Box> cropBox;
};

struct Trajectory
{
    std::string instanceId;
    std::vector<TurnRecord> turns;
    std::optional<std::string> finalAnswer;
    Termination terminatedBy = Termination::MaxTurns;
    std::string errorReason;
    std::vector<Box> cropBoxesOriginalSpace;
    Dims globalDims;
    Dims originalDims;
    /// Crop images in turn order; kept in memory only, ids are serialized.
    std::vector<std::shared_ptr<const ImageBuffer>> cropImages;

    [[nodiscard]] auto turnCount() const noexcept -> int { return int(turns.size()); }
    [[nodiscard]] auto toolCallCount() const noexcept -> int { return int(cropBoxesOriginalSpace.size()); }
    /// Last executed crop, original space.
    [[nodiscard]] auto finalCropBox() const -> std::optional<Box>;
};

struct EpisodeConfig
{
    int maxTurns = 5;
    std::int64_t globalTokenBudget = 1024;
    std::int64_t cropTokenCap = 16384;
    int maxResponseTokens = 2048;
    bool toolEnabled = true;
    PatchGrid grid;
};

/// One episode's fixed inputs: the original image and the budget-fitted global view.
struct EpisodeTask
{
    std::string instanceId;
    std::string question;
    std::shared_ptr<const ImageBuffer> original;
    std::shared_ptr<const ImageBuffer> globalView;

    /// Resize the original to `selectedDims` (when given), then fit to `globalBudget`.
    static auto make(std::string instanceId, std::string question, std::shared_ptr<const ImageBuffer> original,
                     std::optional<Dims> selectedDims, std::int64_t globalBudget, PatchGrid grid = {})
        -> EpisodeTask;
};

/// Substitution points used by the diagnostics harness. Both receive the turn index.
struct EpisodeHooks
{
    /// Replace the executed crop box (original space) before cropping.
    std::function<Box(const Box&, int)> substituteBox;
    /// Replace the fitted crop image before it is shown to the policy.
    std::function<ImageBuffer(const ImageBuffer&, int)> substituteCrop;
};

/// Policy backend failed mid-episode; carries everything recorded so far.
class PolicyTransportError: public Error
{
  public:
    PolicyTransportError(std::string message, Trajectory partial):
        Error(std::move(message)), _partial(std::move(partial))
    {
    }

    [[nodiscard]] auto partial() const noexcept -> const Trajectory& { return _partial; }

  private:
    Trajectory _partial;
};

[[nodiscard]] auto systemPrompt() -> std::string_view;

[[nodiscard]] auto renderMessages(const EpisodeTask& task, const Trajectory& prefix, const EpisodeConfig& cfg)
    -> MessageSequence;

[[nodiscard]] auto runEpisode(Policy& policy, const EpisodeTask& task, const EpisodeConfig& cfg,
                              const EpisodeHooks& hooks = {}) -> Trajectory;

/// "sha256:<hex>" over dims and pixels.
[[nodiscard]] auto contentId(const ImageBuffer& img) -> std::string;

[[nodiscard]] auto boxToJson(const Box& box) -> nlohmann::json;
[[nodiscard]] auto boxFromJson(const nlohmann::json& j, std::string space = {}) -> Box;
[[nodiscard]] auto trajectoryToJson(const Trajectory& traj) -> nlohmann::json;
[[nodiscard]] auto trajectoryFromJson(const nlohmann::json& j) -> Trajectory;

} // namespace croploop
