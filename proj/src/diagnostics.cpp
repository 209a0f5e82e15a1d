// SPDX-License-Identifier: Apache-2.0
#include <croploop/diagnostics.hpp>
#include <croploop/error.hpp>
#include <croploop/png_io.hpp>
#include <croploop/util.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>
#include <tuple>

namespace croploop
{

auto toString(SubstitutionMode mode) -> std::string_view
{
    switch (mode)
    {
        case SubstitutionMode::Prediction: return "prediction";
        case SubstitutionMode::GroundTruth: return "gt";
        case SubstitutionMode::RandomNoise: return "noise";
    }
    return "prediction";
}

auto parseSubstitutionMode(std::string_view text) -> SubstitutionMode
{
    if (text == "prediction")
        return SubstitutionMode::Prediction;
    if (text == "gt")
        return SubstitutionMode::GroundTruth;
    if (text == "noise")
        return SubstitutionMode::RandomNoise;
    throw InvalidArgument(fmt::format("unknown substitution mode '{}'", text));
}

auto evalItemFromToy(const SyntheticInstance& inst) -> EvalItem
{
    return EvalItem {
        .id = inst.id,
        .question = inst.question,
        .answer = inst.answer,
        .kind = AnswerKind::Mcq,
        .image = inst.image,
        .selectedDims = std::nullopt,
        .gt = inst.gt,
        .subset = "toy",
    };
}

auto loadEvalItems(const Dataset& dataset) -> std::vector<EvalItem>
{
    requireImages(dataset);
    auto out = std::vector<EvalItem> {};
    for (auto const& inst: dataset.instances)
    {
        auto image = loadPng(dataset.imagePath(inst));
        image.setId(inst.id);
        out.push_back(EvalItem {
            .id = inst.id,
            .question = inst.question,
            .answer = inst.answer,
            .kind = inst.answerKind,
            .image = std::make_shared<const ImageBuffer>(std::move(image)),
            .selectedDims = inst.selectedDims,
            .gt = inst.gtSet(),
            .subset = inst.source,
        });
    }
    return out;
}

auto EvalReport::accuracy() const -> double
{
    if (records.empty())
        return 0.0;
    auto n = 0;
    for (auto const& r: records)
        n += r.correct ? 1 : 0;
    return double(n) / double(records.size());
}

auto EvalReport::subsetAccuracy() const -> std::map<std::string, double>
{
    auto counts = std::map<std::string, std::pair<int, int>> {};
    for (auto const& r: records)
    {
        auto& [correct, total] = counts[r.subset];
        correct += r.correct ? 1 : 0;
        ++total;
    }
    auto out = std::map<std::string, double> {};
    for (auto const& [subset, c]: counts)
        out[subset] = double(c.first) / double(c.second);
    return out;
}

auto EvalReport::meanLatency() const -> double
{
    if (records.empty())
        return 0.0;
    auto sum = 0.0;
    for (auto const& r: records)
        sum += r.latencySeconds;
    return sum / double(records.size());
}

auto EvalReport::ids() const -> std::vector<std::string>
{
    auto out = std::vector<std::string> {};
    for (auto const& r: records)
        out.push_back(r.instanceId);
    return out;
}

namespace
{

    auto runItem(Policy& policy, const EvalItem& item, const DiagnosticsConfig& cfg) -> EvalRecord
    {
        auto hooks = EpisodeHooks {};
        if (cfg.mode == SubstitutionMode::GroundTruth)
        {
            auto const level = std::clamp<std::size_t>(std::size_t(std::max(1, cfg.gtLevel)), 1, item.gt->size());
            auto box = item.gt->level(level);
            box.space = item.image->id();
            hooks.substituteBox = [box](const Box&, int) { return box; };
        }
        else if (cfg.mode == SubstitutionMode::RandomNoise)
        {
            auto const base = mixSeed(cfg.seed, item.id);
            hooks.substituteCrop = [base](const ImageBuffer& crop, int turn) {
                return noiseLike(crop.width(), crop.height(), mixSeed(base ^ mixSeed(std::uint64_t(turn))));
            };
        }

        auto const task = EpisodeTask::make(item.id, item.question, item.image, item.selectedDims,
                                            cfg.episode.globalTokenBudget, cfg.episode.grid);
        auto const start = std::chrono::steady_clock::now();
        auto const traj = runEpisode(policy, task, cfg.episode, hooks);
        auto const elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        auto rec = EvalRecord {};
        rec.instanceId = item.id;
        rec.subset = item.subset;
        rec.predicted = traj.finalAnswer;
        rec.correct = answersMatch(traj.finalAnswer ? std::optional<std::string_view>(*traj.finalAnswer)
                                                    : std::nullopt,
                                   item.answer, item.kind);
        rec.turns = traj.turnCount();
        rec.toolCalls = traj.toolCallCount();
        rec.terminatedBy = traj.terminatedBy;
        rec.error = traj.errorReason;
        rec.boxes = traj.cropBoxesOriginalSpace;
        rec.latencySeconds = elapsed;
        if (item.gt)
        {
            auto best = 0.0;
            for (auto const& b: rec.boxes)
                best = std::max(best, overlap(b, item.gt->innermost()));
            rec.bestOverlap = best;
            rec.finalIou = rec.boxes.empty() ? 0.0 : bestIou(rec.boxes.back(), *item.gt);
        }
        return rec;
    }

} // namespace

auto substitutionEval(Policy& policy, std::span<const EvalItem> items, const DiagnosticsConfig& cfg) -> EvalReport
{
    if (cfg.mode == SubstitutionMode::GroundTruth)
        for (auto const& item: items)
            if (!item.gt)
                throw MissingGt(fmt::format("instance '{}' has no ground-truth boxes for gt substitution", item.id));

    auto report = EvalReport {};
    report.mode = cfg.mode;
    report.globalTokenBudget = cfg.episode.globalTokenBudget;
    report.records.resize(items.size());
    parallelFor(items.size(), cfg.workers, [&](std::size_t i) { report.records[i] = runItem(policy, items[i], cfg); });
    return report;
}

auto accDelta(const EvalReport& gt, const EvalReport& noise) -> double
{
    auto a = gt.ids();
    auto b = noise.ids();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b)
        throw DatasetMismatch("gt and noise reports cover different instances");
    return 100.0 * (gt.accuracy() - noise.accuracy());
}

auto subsetLowOverlap(const EvalReport& report, double threshold) -> EvalReport
{
    auto out = EvalReport { report.mode, report.globalTokenBudget, {} };
    for (auto const& r: report.records)
        if (r.bestOverlap && *r.bestOverlap <= threshold)
            out.records.push_back(r);
    return out;
}

auto subsetNoiseTest(Policy& policy, std::span<const EvalItem> items, const EpisodeConfig& episode, unsigned workers)
    -> std::vector<std::string>
{
    auto cfg = DiagnosticsConfig {};
    cfg.episode = episode;
    cfg.workers = workers;
    cfg.episode.toolEnabled = false;
    auto const direct = substitutionEval(policy, items, cfg);
    cfg.episode.toolEnabled = true;
    auto const withTool = substitutionEval(policy, items, cfg);

    auto out = std::vector<std::string> {};
    for (std::size_t i = 0; i < items.size(); ++i)
        if (!direct.records[i].correct && withTool.records[i].correct)
            out.push_back(items[i].id);
    return out;
}

auto meanIou(const EvalReport& report) -> double
{
    if (report.records.empty())
        return 0.0;
    auto sum = 0.0;
    for (auto const& r: report.records)
    {
        if (!r.finalIou)
            throw MissingGt(fmt::format("instance '{}' has no ground truth for IoU", r.instanceId));
        sum += *r.finalIou;
    }
    return sum / double(report.records.size());
}

auto recordToJson(const EvalRecord& record, bool withTiming) -> nlohmann::json
{
    auto boxes = nlohmann::json::array();
    for (auto const& b: record.boxes)
        boxes.push_back(boxToJson(b));
    auto j = nlohmann::json {
        { "schema", kSchemaVersion },
        { "instance_id", record.instanceId },
        { "subset", record.subset },
        { "correct", record.correct },
        { "predicted", record.predicted ? nlohmann::json(*record.predicted) : nlohmann::json(nullptr) },
        { "turns", record.turns },
        { "tool_calls", record.toolCalls },
        { "terminated_by", std::string(toString(record.terminatedBy)) },
        { "error", record.error },
        { "boxes", std::move(boxes) },
        { "best_overlap", record.bestOverlap ? nlohmann::json(*record.bestOverlap) : nlohmann::json(nullptr) },
        { "final_iou", record.finalIou ? nlohmann::json(*record.finalIou) : nlohmann::json(nullptr) },
    };
    if (withTiming)
        j["latency_seconds"] = record.latencySeconds;
    return j;
}

auto reportJsonl(const EvalReport& report) -> std::string
{
    auto out = std::string {};
    for (auto const& r: report.records)
    {
        out += canonicalLine(recordToJson(r));
        out += '\n';
    }
    auto subsets = nlohmann::json::object();
    for (auto const& [name, acc]: report.subsetAccuracy())
        subsets[name] = acc;
    auto summary = nlohmann::json {
        { "type", "summary" },
        { "mode", std::string(toString(report.mode)) },
        { "global_token_budget", report.globalTokenBudget },
        { "count", report.records.size() },
        { "accuracy", report.accuracy() },
        { "subset_accuracy", std::move(subsets) },
    };
    auto hasGt = !report.records.empty();
    for (auto const& r: report.records)
        hasGt = hasGt && r.finalIou.has_value();
    if (hasGt)
        summary["mean_iou"] = meanIou(report);
    out += canonicalLine(summary);
    out += '\n';
    return out;
}

auto timingJsonl(const EvalReport& report) -> std::string
{
    auto out = std::string {};
    for (auto const& r: report.records)
    {
        out += canonicalLine({ { "instance_id", r.instanceId }, { "latency_seconds", r.latencySeconds } });
        out += '\n';
    }
    out += canonicalLine({ { "type", "summary" }, { "mean_latency_seconds", report.meanLatency() } });
    out += '\n';
    return out;
}

auto reportMarkdown(std::span<const EvalReport> reports) -> std::string
{
    auto subsets = std::set<std::string> {};
    for (auto const& r: reports)
        for (auto const& [name, acc]: r.subsetAccuracy())
            subsets.insert(name);

    auto out = std::string("| Mode | Budget | N |");
    auto rule = std::string("|---|---|---|");
    for (auto const& s: subsets)
    {
        out += fmt::format(" {} |", s.empty() ? "(none)" : s);
        rule += "---|";
    }
    out += " Overall | Mean IoU |\n" + rule + "---|---|\n";
    for (auto const& r: reports)
    {
        out += fmt::format("| {} | {} | {} |", toString(r.mode), r.globalTokenBudget, r.records.size());
        auto const per = r.subsetAccuracy();
        for (auto const& s: subsets)
        {
            auto it = per.find(s);
            out += it == per.end() ? " - |" : fmt::format(" {:.1f} |", 100.0 * it->second);
        }
        auto iou = std::string("-");
        try
        {
            iou = fmt::format("{:.3f}", meanIou(r));
        }
        catch (const MissingGt&)
        {
        }
        out += fmt::format(" {:.1f} | {} |\n", 100.0 * r.accuracy(), iou);
    }
    return out;
}

auto loadFixtureRecords(const std::filesystem::path& path) -> std::vector<FixtureRecord>
{
    auto out = std::vector<FixtureRecord> {};
    auto stream = std::istringstream(readTextFile(path));
    auto line = std::string {};
    auto number = std::size_t { 0 };
    while (std::getline(stream, line))
    {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try
        {
            auto const j = nlohmann::json::parse(line);
            out.push_back(FixtureRecord {
                .model = j.at("model").get<std::string>(),
                .budget = j.at("budget").get<std::int64_t>(),
                .mode = parseSubstitutionMode(j.at("mode").get<std::string>()),
                .benchmark = j.at("benchmark").get<std::string>(),
                .subset = j.at("subset").get<std::string>(),
                .instanceId = j.at("instance_id").get<std::string>(),
                .correct = j.at("correct").get<bool>(),
            });
        }
        catch (const nlohmann::json::exception& e)
        {
            throw ParseError(e.what(), number);
        }
        catch (const InvalidArgument& e)
        {
            throw ParseError(e.what(), number);
        }
    }
    return out;
}

namespace
{

    using CellKey = std::tuple<std::string, std::int64_t, SubstitutionMode, std::string, std::string>;

    auto keyOf(const TableCell& c) -> CellKey { return { c.model, c.budget, c.mode, c.benchmark, c.column }; }

} // namespace

auto aggregateFixture(std::span<const FixtureRecord> records) -> std::vector<TableCell>
{
    // Keep first-seen order so tables render in fixture order.
    auto order = std::vector<CellKey> {};
    auto counts = std::map<CellKey, std::pair<int, int>> {};
    auto const bump = [&](CellKey key, bool correct) {
        auto [it, inserted] = counts.try_emplace(key, 0, 0);
        if (inserted)
            order.push_back(key);
        it->second.first += correct ? 1 : 0;
        ++it->second.second;
    };
    for (auto const& r: records)
    {
        bump({ r.model, r.budget, r.mode, r.benchmark, r.subset }, r.correct);
        bump({ r.model, r.budget, r.mode, r.benchmark, "Overall" }, r.correct);
    }
    auto out = std::vector<TableCell> {};
    for (auto const& key: order)
    {
        auto const& [correct, total] = counts[key];
        auto const& [model, budget, mode, benchmark, column] = key;
        out.push_back(TableCell { model, budget, mode, benchmark, column, 100.0 * correct / total });
    }
    return out;
}

auto loadPublishedTable(const std::filesystem::path& path) -> std::vector<TableCell>
{
    auto const j = nlohmann::json::parse(readTextFile(path), nullptr, false);
    if (j.is_discarded() || !j.contains("cells"))
        throw ParseError("published table must be a JSON object with a 'cells' list", 1);
    auto out = std::vector<TableCell> {};
    for (auto const& c: j["cells"])
    {
        out.push_back(TableCell {
            .model = c.at("model").get<std::string>(),
            .budget = c.at("budget").get<std::int64_t>(),
            .mode = parseSubstitutionMode(c.at("mode").get<std::string>()),
            .benchmark = c.at("benchmark").get<std::string>(),
            .column = c.at("column").get<std::string>(),
            .value = c.at("value").get<double>(),
        });
    }
    return out;
}

auto compareTables(std::span<const TableCell> computed, std::span<const TableCell> published, double tolerance)
    -> std::vector<CellComparison>
{
    auto index = std::map<CellKey, double> {};
    for (auto const& c: computed)
        index[keyOf(c)] = c.value;
    auto out = std::vector<CellComparison> {};
    for (auto const& p: published)
    {
        auto cmp = CellComparison { p, std::nullopt, false };
        if (auto it = index.find(keyOf(p)); it != index.end())
        {
            cmp.computed = it->second;
            cmp.withinTolerance = std::abs(it->second - p.value) <= tolerance + 1e-9;
        }
        out.push_back(cmp);
    }
    return out;
}

auto tableMarkdown(std::span<const TableCell> cells) -> std::string
{
    auto columns = std::vector<std::pair<std::string, std::string>> {};
    auto rows = std::vector<std::tuple<std::string, std::int64_t, SubstitutionMode>> {};
    auto values = std::map<CellKey, double> {};
    for (auto const& c: cells)
    {
        auto const col = std::pair(c.benchmark, c.column);
        if (std::find(columns.begin(), columns.end(), col) == columns.end())
            columns.push_back(col);
        auto const row = std::tuple(c.model, c.budget, c.mode);
        if (std::find(rows.begin(), rows.end(), row) == rows.end())
            rows.push_back(row);
        values[keyOf(c)] = c.value;
    }

    auto out = std::string("| Model | Budget | Mode |");
    auto rule = std::string("|---|---|---|");
    for (auto const& [bench, col]: columns)
    {
        out += fmt::format(" {} {} |", bench, col);
        rule += "---|";
    }
    out += "\n" + rule + "\n";
    for (auto const& [model, budget, mode]: rows)
    {
        out += fmt::format("| {} | {} | {} |", model, budget, toString(mode));
        for (auto const& [bench, col]: columns)
        {
            auto it = values.find({ model, budget, mode, bench, col });
            out += it == values.end() ? " - |" : fmt::format(" {:.2f} |", it->second);
        }
        out += "\n";
    }
    return out;
}

} // namespace croploop
