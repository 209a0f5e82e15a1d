// SPDX-License-Identifier: Apache-2.0
#include <croploop/error.hpp>
#include <croploop/toyworld.hpp>
#include <croploop/util.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace croploop
{

namespace
{

    constexpr auto kBackground = std::array<std::uint8_t, 3> { 128, 128, 128 };
    constexpr auto kColourTolerance = 16;
    constexpr auto kSalientThreshold = 24;

    constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette { {
        { 220, 40, 40 },
        { 40, 180, 60 },
        { 40, 80, 220 },
        { 235, 210, 40 },
        { 200, 60, 200 },
        { 40, 200, 210 },
        { 245, 140, 30 },
        { 20, 20, 20 },
    } };

    constexpr std::array<std::string_view, 8> kColourNames {
        "red", "green", "blue", "yellow", "magenta", "cyan", "orange", "black",
    };

    /// Uniform integer in [0, n) from one generator word; independent of the standard library's distributions.
    auto uniformIndex(std::mt19937_64& rng, std::uint64_t n) -> std::uint64_t
    {
        return std::min(n - 1, std::uint64_t(unitInterval(rng()) * double(n)));
    }

    auto matches(const std::uint8_t* p, const std::array<std::uint8_t, 3>& c) -> bool
    {
        return std::abs(int(p[0]) - c[0]) <= kColourTolerance && std::abs(int(p[1]) - c[1]) <= kColourTolerance
               && std::abs(int(p[2]) - c[2]) <= kColourTolerance;
    }

    auto toyQuestion(int classes) -> std::string
    {
        auto q = std::string("What colour is the glyph in the image?");
        for (int k = 0; k < classes; ++k)
            q += fmt::format(" ({}) {}", toyLabel(k), kColourNames[std::size_t(k)]);
        return q;
    }

} // namespace

void ToySpec::validate() const
{
    if (grid < 2)
        throw InvalidArgument("toy grid must be >= 2");
    if (classes < 2 || classes > int(kPalette.size()))
        throw InvalidArgument(fmt::format("toy classes must lie in [2, {}]", kPalette.size()));
    if (rho < 1)
        throw InvalidArgument("toy rho must be >= 1");
    if (imageSide < grid * rho)
        throw InvalidArgument("toy image side must be >= grid * rho");
}

auto ToySpec::glyphSide() const noexcept -> int
{
    return std::min(2 * rho, imageSide / grid);
}

auto toyLabel(int classIndex) -> std::string
{
    return std::string(1, char('A' + classIndex));
}

auto toyPaletteColor(int classIndex) -> std::array<std::uint8_t, 3>
{
    return kPalette.at(std::size_t(classIndex));
}

auto toyCellBox(int cell, int grid, Dims dims, std::string space) -> Box
{
    auto const row = cell / grid;
    auto const col = cell % grid;
    auto const edge = [grid](int i, int extent) { return int(std::int64_t(i) * extent / grid); };
    return Box { edge(col, dims.width), edge(row, dims.height), edge(col + 1, dims.width),
                 edge(row + 1, dims.height), std::move(space) };
}

auto toyCellOf(const Box& box, int grid, Dims dims) -> int
{
    auto const cx = (double(box.x1) + double(box.x2)) / 2.0;
    auto const cy = (double(box.y1) + double(box.y2)) / 2.0;
    auto const col = std::clamp(int(std::floor(cx * grid / dims.width)), 0, grid - 1);
    auto const row = std::clamp(int(std::floor(cy * grid / dims.height)), 0, grid - 1);
    return row * grid + col;
}

auto genTask(std::uint64_t seed, const ToySpec& spec) -> SyntheticInstance
{
    spec.validate();
    auto rng = std::mt19937_64(mixSeed(seed, "toy-task"));
    auto const cell = int(uniformIndex(rng, std::uint64_t(spec.cellCount())));
    auto const classIndex = int(uniformIndex(rng, std::uint64_t(spec.classes)));

    auto const id = fmt::format("toy-{}", seed);
    auto const dims = Dims { spec.imageSide, spec.imageSide };
    auto const cellBox = toyCellBox(cell, spec.grid, dims, id);
    auto const side = spec.glyphSide();
    auto const gx = cellBox.x1 + int(uniformIndex(rng, std::uint64_t(cellBox.width() - side + 1)));
    auto const gy = cellBox.y1 + int(uniformIndex(rng, std::uint64_t(cellBox.height() - side + 1)));
    auto const glyph = Box { gx, gy, gx + side, gy + side, id };

    auto image = ImageBuffer::filled(id, dims.width, dims.height, kBackground);
    auto const colour = toyPaletteColor(classIndex);
    for (int y = glyph.y1; y < glyph.y2; ++y)
        for (int x = glyph.x1; x < glyph.x2; ++x)
            image.set(x, y, colour);

    return SyntheticInstance {
        .id = id,
        .spec = spec,
        .image = std::make_shared<const ImageBuffer>(std::move(image)),
        .targetRow = cell / spec.grid,
        .targetCol = cell % spec.grid,
        .classIndex = classIndex,
        .gt = GtBoxSet({ glyph, cellBox }),
        .question = toyQuestion(spec.classes),
        .answer = toyLabel(classIndex),
    };
}

auto perceive(const ImageBuffer& view, const ToySpec& spec) -> std::string
{
    // A run of rho pixels always covers a column index divisible by rho,
    // so only those columns can seed a qualifying run.
    auto const w = view.width();
    auto const px = view.pixels();
    for (int y = 0; y < view.height(); ++y)
    {
        auto const* row = px.data() + std::size_t(y) * std::size_t(w) * 3;
        for (int x = 0; x < w; x += spec.rho)
        {
            for (int k = 0; k < spec.classes; ++k)
            {
                auto const& colour = kPalette[std::size_t(k)];
                if (!matches(row + std::size_t(x) * 3, colour))
                    continue;
                auto left = x;
                while (left > 0 && matches(row + std::size_t(left - 1) * 3, colour))
                    --left;
                auto right = x + 1;
                while (right < w && matches(row + std::size_t(right) * 3, colour))
                    ++right;
                if (right - left >= spec.rho)
                    return toyLabel(k);
            }
        }
    }
    return std::string(kToyDistractor);
}

auto locateSalientCell(const ImageBuffer& view, int grid) -> std::optional<int>
{
    auto box = Box { view.width(), view.height(), 0, 0, view.id() };
    for (int y = 0; y < view.height(); ++y)
    {
        for (int x = 0; x < view.width(); ++x)
        {
            auto const p = view.at(x, y);
            auto salient = false;
            for (std::size_t c = 0; c < 3; ++c)
                salient = salient || std::abs(int(p[c]) - kBackground[c]) > kSalientThreshold;
            if (!salient)
                continue;
            box.x1 = std::min(box.x1, x);
            box.y1 = std::min(box.y1, y);
            box.x2 = std::max(box.x2, x + 1);
            box.y2 = std::max(box.y2, y + 1);
        }
    }
    if (box.empty())
        return std::nullopt;
    return toyCellOf(box, grid, view.dims());
}

auto toString(ReadFrom r) -> std::string_view
{
    switch (r)
    {
        case ReadFrom::Global: return "global";
        case ReadFrom::LatestCrop: return "latest_crop";
        case ReadFrom::AnyView: return "any_view";
    }
    return "any_view";
}

auto parseReadFrom(std::string_view text) -> ReadFrom
{
    if (text == "global")
        return ReadFrom::Global;
    if (text == "latest_crop")
        return ReadFrom::LatestCrop;
    if (text == "any_view")
        return ReadFrom::AnyView;
    throw InvalidArgument(fmt::format("unknown read mode '{}'", text));
}

ToyActor::ToyActor(ToySpec spec, Opening opening, int cell, ReadFrom readFrom):
    _spec(spec), _opening(opening), _cell(cell), _readFrom(readFrom)
{
    _spec.validate();
    if (opening == Opening::CropCell && (cell < 0 || cell >= _spec.cellCount()))
        throw InvalidArgument(fmt::format("toy cell {} outside the grid", cell));
}

auto ToyActor::complete(const MessageSequence& messages, int) -> std::string
{
    auto const* global = messages.globalImage();
    if (global == nullptr)
        throw InvalidArgument("toy actor needs a global image");

    if (messages.assistantTurns() == 0)
    {
        auto cell = std::optional<int> {};
        if (_opening == Opening::CropCell)
            cell = _cell;
        else if (_opening == Opening::CropSalient)
            cell = locateSalientCell(*global, _spec.grid);
        if (cell && messages.toolEnabled)
            return formatToolCall(fmt::format("inspect cell {}", *cell),
                                  toyCellBox(*cell, _spec.grid, global->dims()));
        return formatAnswer("read the overview", perceive(*global, _spec));
    }

    auto const crops = messages.toolImages();
    auto answer = std::string(kToyDistractor);
    switch (_readFrom)
    {
        case ReadFrom::Global: answer = perceive(*global, _spec); break;
        case ReadFrom::LatestCrop:
            if (!crops.empty())
                answer = perceive(*crops.back(), _spec);
            break;
        case ReadFrom::AnyView:
            for (auto it = crops.rbegin(); it != crops.rend() && answer == kToyDistractor; ++it)
                answer = perceive(**it, _spec);
            if (answer == kToyDistractor)
                answer = perceive(*global, _spec);
            break;
    }
    return formatAnswer("read the glyph", answer);
}

ToyPolicy::ToyPolicy(int grid): _grid(grid), _logits(std::size_t(grid * grid + 1), 0.0)
{
    if (grid < 1)
        throw InvalidArgument("toy policy grid must be >= 1");
}

auto ToyPolicy::parameters() const -> std::vector<double>
{
    return _logits;
}

void ToyPolicy::setParameters(std::span<const double> params)
{
    if (params.size() != _logits.size())
        throw InvalidArgument(fmt::format("toy policy expects {} parameters, got {}", _logits.size(), params.size()));
    _logits.assign(params.begin(), params.end());
}

auto ToyPolicy::probabilities() const -> std::vector<double>
{
    auto const top = *std::max_element(_logits.begin(), _logits.end());
    auto p = std::vector<double>(_logits.size());
    auto sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        sum += p[i] = std::exp(_logits[i] - top);
    for (auto& v: p)
        v /= sum;
    return p;
}

auto ToyPolicy::actionOf(const Trajectory& traj) const -> int
{
    if (traj.cropBoxesOriginalSpace.empty())
        return answerNowAction();
    return toyCellOf(traj.cropBoxesOriginalSpace.front(), _grid, traj.originalDims);
}

auto ToyPolicy::logProb(const Trajectory& traj) const -> double
{
    auto const a = std::size_t(actionOf(traj));
    auto const top = *std::max_element(_logits.begin(), _logits.end());
    auto sum = 0.0;
    for (auto l: _logits)
        sum += std::exp(l - top);
    return _logits[a] - top - std::log(sum);
}

void ToyPolicy::accumulateLogProbGradient(const Trajectory& traj, double scale, std::span<double> grad) const
{
    if (grad.size() != _logits.size())
        throw InvalidArgument("gradient buffer has the wrong size");
    auto const a = std::size_t(actionOf(traj));
    auto const p = probabilities();
    for (std::size_t i = 0; i < p.size(); ++i)
        grad[i] += scale * ((i == a ? 1.0 : 0.0) - p[i]);
}

auto ToyPolicy::sample(std::mt19937_64& rng) const -> int
{
    auto const p = probabilities();
    auto const u = unitInterval(rng());
    auto acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
    {
        acc += p[i];
        if (u < acc)
            return int(i);
    }
    return int(p.size()) - 1;
}

void ToyTrainConfig::validate() const
{
    spec.validate();
    if (iterations < 0)
        throw InvalidArgument("iterations must be >= 0");
    if (groupSize < 2)
        throw InvalidArgument("group size must be >= 2");
    if (gapOnGlobalBudget < 1 || gapOffGlobalBudget < 1 || cropTokenCap < 1)
        throw InvalidArgument("token budgets must be >= 1");
    if (maxTurns < 2)
        throw InvalidArgument("the toy episode needs max_turns >= 2");
    GrpoConfig { groupSize, clipEpsilon, learningRate, 1e-8 }.validate();
    rewards.validate();
}

auto ToyTrainConfig::episodeConfig() const -> EpisodeConfig
{
    auto cfg = EpisodeConfig {};
    cfg.maxTurns = maxTurns;
    cfg.globalTokenBudget = globalBudget();
    cfg.cropTokenCap = cropTokenCap;
    cfg.toolEnabled = true;
    return cfg;
}

auto toJson(const ToyTrainConfig& cfg) -> nlohmann::json
{
    return {
        { "grid", cfg.spec.grid },
        { "classes", cfg.spec.classes },
        { "rho", cfg.spec.rho },
        { "image_side", cfg.spec.imageSide },
        { "gap", cfg.gapOn ? "on" : "off" },
        { "iterations", cfg.iterations },
        { "seed", cfg.seed },
        { "group_size", cfg.groupSize },
        { "learning_rate", cfg.learningRate },
        { "clip_epsilon", cfg.clipEpsilon },
        { "gap_on_global_budget", cfg.gapOnGlobalBudget },
        { "gap_off_global_budget", cfg.gapOffGlobalBudget },
        { "crop_token_cap", cfg.cropTokenCap },
        { "max_turns", cfg.maxTurns },
        { "read_from", std::string(toString(cfg.readFrom)) },
        { "rewards", toJson(cfg.rewards) },
    };
}

void applyJson(ToyTrainConfig& cfg, const nlohmann::json& j)
{
    if (!j.is_object())
        throw InvalidArgument("toy config must be a JSON object");
    for (auto const& [key, value]: j.items())
    {
        if (key == "grid")
            cfg.spec.grid = value.get<int>();
        else if (key == "classes")
            cfg.spec.classes = value.get<int>();
        else if (key == "rho")
            cfg.spec.rho = value.get<int>();
        else if (key == "image_side")
            cfg.spec.imageSide = value.get<int>();
        else if (key == "gap")
        {
            auto const gap = value.get<std::string>();
            if (gap != "on" && gap != "off")
                throw InvalidArgument("gap must be \"on\" or \"off\"");
            cfg.gapOn = gap == "on";
        }
        else if (key == "iterations")
            cfg.iterations = value.get<int>();
        else if (key == "seed")
            cfg.seed = value.get<std::uint64_t>();
        else if (key == "group_size")
            cfg.groupSize = value.get<int>();
        else if (key == "learning_rate")
            cfg.learningRate = value.get<double>();
        else if (key == "clip_epsilon")
            cfg.clipEpsilon = value.get<double>();
        else if (key == "gap_on_global_budget")
            cfg.gapOnGlobalBudget = value.get<std::int64_t>();
        else if (key == "gap_off_global_budget")
            cfg.gapOffGlobalBudget = value.get<std::int64_t>();
        else if (key == "crop_token_cap")
            cfg.cropTokenCap = value.get<std::int64_t>();
        else if (key == "max_turns")
            cfg.maxTurns = value.get<int>();
        else if (key == "read_from")
            cfg.readFrom = parseReadFrom(value.get<std::string>());
        else if (key == "rewards")
            applyJson(cfg.rewards, value);
        else
            throw InvalidArgument(fmt::format("unknown toy config key '{}'", key));
    }
}

auto TrainReport::finalPCorrectCell() const -> double
{
    return iterations.empty() ? initialPCorrectCell : iterations.back().pCorrectCell;
}

auto TrainReport::finalPToolCall() const -> double
{
    return iterations.empty() ? initialPToolCall : iterations.back().pToolCall;
}

auto TrainReport::meanReward(double fromFraction, double toFraction) const -> double
{
    auto const n = double(iterations.size());
    auto const begin = std::size_t(std::floor(fromFraction * n));
    auto const end = std::min(iterations.size(), std::size_t(std::ceil(toFraction * n)));
    if (begin >= end)
        return 0.0;
    auto sum = 0.0;
    for (auto i = begin; i < end; ++i)
        sum += iterations[i].rewardMean;
    return sum / double(end - begin);
}

namespace
{

    auto playAction(const SyntheticInstance& inst, const EpisodeTask& task, const ToyTrainConfig& cfg, int action)
        -> Trajectory
    {
        auto actor = action == inst.spec.cellCount() ? ToyActor::answerNow(inst.spec)
                                                     : ToyActor::cropCell(inst.spec, action, cfg.readFrom);
        return runEpisode(actor, task, cfg.episodeConfig());
    }

} // namespace

auto trainToy(const ToyTrainConfig& cfg) -> TrainReport
{
    cfg.validate();
    auto const inst = genTask(cfg.seed, cfg.spec);
    auto const task = EpisodeTask::make(inst.id, inst.question, inst.image, std::nullopt, cfg.globalBudget());
    auto const grpo = GrpoConfig { cfg.groupSize, cfg.clipEpsilon, cfg.learningRate, 1e-8 };
    auto const target = std::size_t(inst.targetCell());

    auto policy = ToyPolicy(cfg.spec.grid);
    auto rng = std::mt19937_64(mixSeed(cfg.seed, "toy-rollouts"));

    auto report = TrainReport {};
    report.config = cfg;
    report.instanceId = inst.id;
    report.targetCell = inst.targetCell();
    {
        auto const p = policy.probabilities();
        report.initialPCorrectCell = p[target];
        report.initialPToolCall = 1.0 - p.back();
    }

    for (int it = 0; it < cfg.iterations; ++it)
    {
        auto actions = std::vector<int>(std::size_t(cfg.groupSize));
        for (auto& a: actions)
            a = policy.sample(rng);

        auto trajectories = std::vector<Trajectory>(actions.size());
        parallelFor(actions.size(), cfg.workers,
                    [&](std::size_t i) { trajectories[i] = playAction(inst, task, cfg, actions[i]); });

        auto metrics = IterationMetrics {};
        metrics.iteration = it;
        auto rewards = std::vector<double> {};
        for (auto const& t: trajectories)
        {
            auto const r = stage1Total(t, inst.answer, AnswerKind::Mcq, cfg.rewards);
            rewards.push_back(r.total);
            metrics.rewardMean += r.total;
            metrics.accuracy += r.acc;
            metrics.toolCallRate += t.toolCallCount() > 0 ? 1.0 : 0.0;
            metrics.meanToolCalls += t.toolCallCount();
            if (auto const bp = t.finalCropBox())
                metrics.meanOverlap += overlap(*bp, inst.gt.innermost());
        }
        auto const n = double(trajectories.size());
        metrics.rewardMean /= n;
        metrics.accuracy /= n;
        metrics.toolCallRate /= n;
        metrics.meanToolCalls /= n;
        metrics.meanOverlap /= n;

        auto const group = RolloutGroup::make(inst.id, std::move(trajectories), std::move(rewards), policy);
        metrics.step = policyGradientStep(policy, std::span(&group, 1), grpo);

        auto const p = policy.probabilities();
        metrics.pCorrectCell = p[target];
        metrics.pToolCall = 1.0 - p.back();
        report.iterations.push_back(metrics);
    }
    report.finalProbabilities = policy.probabilities();
    return report;
}

auto trainReportJsonl(const TrainReport& report) -> std::string
{
    auto out = std::string {};
    out += nlohmann::json { { "type", "config" },
                            { "config", toJson(report.config) },
                            { "instance_id", report.instanceId },
                            { "target_cell", report.targetCell },
                            { "initial_p_correct_cell", report.initialPCorrectCell },
                            { "initial_p_tool_call", report.initialPToolCall } }
               .dump();
    out += '\n';
    for (auto const& m: report.iterations)
    {
        out += nlohmann::json {
            { "type", "iteration" },
            { "iteration", m.iteration },
            { "reward_mean", m.rewardMean },
            { "accuracy", m.accuracy },
            { "tool_call_rate", m.toolCallRate },
            { "mean_tool_calls", m.meanToolCalls },
            { "mean_overlap", m.meanOverlap },
            { "p_correct_cell", m.pCorrectCell },
            { "p_tool_call", m.pToolCall },
            { "step", stepReportToJson(m.step) },
        }.dump();
        out += '\n';
    }
    out += nlohmann::json { { "type", "summary" },
                            { "final_p_correct_cell", report.finalPCorrectCell() },
                            { "final_p_tool_call", report.finalPToolCall() },
                            { "final_probabilities", report.finalProbabilities } }
               .dump();
    out += '\n';
    return out;
}

auto exhaustiveActionOutcomes(const SyntheticInstance& inst, const ToyTrainConfig& cfg) -> std::vector<ActionOutcome>
{
    auto const task = EpisodeTask::make(inst.id, inst.question, inst.image, std::nullopt, cfg.globalBudget());
    auto out = std::vector<ActionOutcome> {};
    for (int a = 0; a <= inst.spec.cellCount(); ++a)
    {
        auto const traj = playAction(inst, task, cfg, a);
        auto const r = stage1Total(traj, inst.answer, AnswerKind::Mcq, cfg.rewards);
        out.push_back(ActionOutcome { a, a == inst.targetCell(), r.acc, r.total });
    }
    return out;
}

} // namespace croploop
