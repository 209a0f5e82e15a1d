// SPDX-License-Identifier: Apache-2.0
#include <croploop/error.hpp>
#include <croploop/protocol.hpp>
#include <croploop/resolution.hpp>
#include <croploop/util.hpp>

#include <fmt/format.h>

#include <cmath>
#include <random>

namespace croploop
{

auto buildLadder(Dims dims, double decay, int floorLongSide, PatchGrid grid) -> ResolutionLadder
{
    if (!(decay > 0.0 && decay < 1.0))
        throw InvalidDecay(fmt::format("decay must lie in (0,1), got {}", decay));
    if (dims.width < 1 || dims.height < 1)
        throw InvalidArgument("ladder dims must be positive");
    if (floorLongSide < grid.patchSize)
        throw InvalidArgument(fmt::format("floor {} is below the patch size {}", floorLongSide, grid.patchSize));

    auto ladder = ResolutionLadder { { dims }, decay, floorLongSide };
    auto const long0 = dims.longSide();
    auto const short0 = dims.shortSide();
    auto const wide = dims.width >= dims.height;

    auto const rung = [&](int longSide) {
        auto const shortSide = std::max(1, int(std::lround(double(short0) * longSide / long0)));
        return wide ? Dims { longSide, shortSide } : Dims { shortSide, longSide };
    };

    auto current = long0;
    while (current > floorLongSide)
    {
        auto next = int(std::lround(current * decay));
        if (next >= current)
            next = current - 1;
        if (next <= floorLongSide)
            next = floorLongSide;
        ladder.rungs.push_back(rung(next));
        current = next;
    }
    return ladder;
}

auto PolicyAnswerer::answer(const ImageBuffer& view, std::string_view question) -> std::string
{
    auto cfg = EpisodeConfig {};
    cfg.maxTurns = 1;
    cfg.toolEnabled = false;
    cfg.globalTokenBudget = _tokenBudget;
    cfg.grid = _grid;
    auto const image = std::make_shared<const ImageBuffer>(view);
    auto const task = EpisodeTask::make(view.id(), std::string(question), image, std::nullopt, _tokenBudget, _grid);
    auto const traj = runEpisode(_policy, task, cfg);
    return traj.finalAnswer.value_or("");
}

auto toString(StrategyKind kind) -> std::string_view
{
    switch (kind)
    {
        case StrategyKind::Answer: return "answer";
        case StrategyKind::Hard: return "hard";
        case StrategyKind::Random: return "random";
    }
    return "answer";
}

auto parseStrategyKind(std::string_view text) -> StrategyKind
{
    if (text == "answer")
        return StrategyKind::Answer;
    if (text == "hard")
        return StrategyKind::Hard;
    if (text == "random")
        return StrategyKind::Random;
    throw InvalidArgument(fmt::format("unknown selection strategy '{}'", text));
}

auto selectResolution(const ImageBuffer& original, std::string_view question, AnswerKind kind, Answerer& answerer,
                      const ResolutionLadder& ladder, const SelectionStrategy& strategy, std::string_view instanceKey)
    -> SelectionResult
{
    if (ladder.rungs.empty())
        throw InvalidArgument("empty resolution ladder");
    auto const last = ladder.rungs.size() - 1;

    switch (strategy.kind)
    {
        case StrategyKind::Hard: return SelectionResult { ladder.rungs[last], last, false, {} };
        case StrategyKind::Random:
        {
            auto rng = std::mt19937_64(mixSeed(strategy.seed, instanceKey));
            auto const index = std::min(last, std::size_t(unitInterval(rng()) * double(ladder.rungs.size())));
            return SelectionResult { ladder.rungs[index], index, false, {} };
        }
        case StrategyKind::Answer: break;
    }

    auto result = SelectionResult {};
    auto const ask = [&](std::size_t index) {
        auto const& dims = ladder.rungs[index];
        try
        {
            if (dims == original.dims())
                return normalizeAnswer(answerer.answer(original, question), kind);
            return normalizeAnswer(answerer.answer(resizeArea(original, dims), question), kind);
        }
        catch (const AnswererFailure&)
        {
            throw;
        }
        catch (const std::exception& e)
        {
            throw AnswererFailure(fmt::format("answerer failed at rung {} ({}x{}): {}", index, dims.width,
                                              dims.height, e.what()),
                                  index);
        }
    };

    auto const reference = ask(0);
    result.answers.push_back(reference);
    for (std::size_t i = 1; i < ladder.rungs.size(); ++i)
    {
        auto answer = ask(i);
        result.answers.push_back(answer);
        if (answer != reference)
        {
            result.dims = ladder.rungs[i];
            result.rungIndex = i;
            result.diverged = true;
            return result;
        }
    }
    result.dims = ladder.rungs[last];
    result.rungIndex = last;
    result.diverged = false;
    return result;
}

} // namespace croploop
