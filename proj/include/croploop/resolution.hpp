// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/answer.hpp>
#include <croploop/imaging.hpp>
#include <croploop/policy.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace croploop
{

/// Progressively downsampled versions of one image, largest first.
struct ResolutionLadder
{
    std::vector<Dims> rungs;
    double decay = 0.75;
    int floorLongSide = 224;
};

/// Rung k+1 has long side round(long_k * decay); the first value at or below
/// the floor is replaced by the floor itself and ends the ladder. Short sides
/// follow the original aspect ratio. Throws InvalidDecay unless 0 < decay < 1.
[[nodiscard]] auto buildLadder(Dims dims, double decay = 0.75, int floorLongSide = 224, PatchGrid grid = {})
    -> ResolutionLadder;

/// Answers a question about one image view. Implementations used from several
/// threads must be thread safe.
class Answerer
{
  public:
    virtual ~Answerer() = default;
    virtual auto answer(const ImageBuffer& view, std::string_view question) -> std::string = 0;
};

/// Single-turn, tool-free query against a policy; the answer block text (empty when malformed).
class PolicyAnswerer final: public Answerer
{
  public:
    explicit PolicyAnswerer(Policy& policy, std::int64_t tokenBudget = 16384, PatchGrid grid = {}):
        _policy(policy), _tokenBudget(tokenBudget), _grid(grid)
    {
    }

    auto answer(const ImageBuffer& view, std::string_view question) -> std::string override;

  private:
    Policy& _policy;
    std::int64_t _tokenBudget;
    PatchGrid _grid;
};

enum class StrategyKind
{
    Answer,
    Hard,
    Random,
};

[[nodiscard]] auto toString(StrategyKind kind) -> std::string_view;
[[nodiscard]] auto parseStrategyKind(std::string_view text) -> StrategyKind;

struct SelectionStrategy
{
    StrategyKind kind = StrategyKind::Answer;
    std::uint64_t seed = 0;
};

struct SelectionResult
{
    Dims dims;
    std::size_t rungIndex = 0;
    /// Answer strategy only: false when no rung diverged and the last rung was kept.
    bool diverged = false;
    /// Normalized answers per visited rung (Answer strategy).
    std::vector<std::string> answers;
};

/// Answer: walk rungs largest first and return the first whose normalized
/// answer differs from the full-resolution one, else the last rung.
/// Hard: the last rung. Random: a uniform rung seeded by (seed, instanceKey).
/// Answerer exceptions are rethrown as AnswererFailure naming the rung.
[[nodiscard]] auto selectResolution(const ImageBuffer& original, std::string_view question, AnswerKind kind,
                                    Answerer& answerer, const ResolutionLadder& ladder,
                                    const SelectionStrategy& strategy, std::string_view instanceKey = {})
    -> SelectionResult;

} // namespace croploop
