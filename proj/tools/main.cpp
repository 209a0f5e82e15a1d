// SPDX-License-Identifier: Apache-2.0
#include "cli_support.hpp"

#include <croploop/annot_server.hpp>
#include <croploop/datastore.hpp>
#include <croploop/diagnostics.hpp>
#include <croploop/error.hpp>
#include <croploop/png_io.hpp>
#include <croploop/remote_policy.hpp>
#include <croploop/resolution.hpp>
#include <croploop/rewards.hpp>
#include <croploop/toyworld.hpp>
#include <croploop/util.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace croploop;
using namespace croploop::cli;

namespace
{

struct Common
{
    std::uint64_t seed = 0;
    std::string config;
    std::string out = "out";
    std::int64_t budget = 1024;
    int maxTurns = 5;
    unsigned workers = 0;
};

struct ToyFlags
{
    int grid = 4;
    int classes = 4;
    int rho = 28;
    int imageSide = 896;

    [[nodiscard]] auto spec() const -> ToySpec { return ToySpec { grid, classes, rho, imageSide }; }
};

struct Source
{
    std::string dataset;
    int toy = 0;
    std::uint64_t toySeed = 0;
};

void addCommon(CLI::App& sub, Common& c, bool withBudget = true)
{
    sub.add_option("--seed", c.seed, "Random seed")->capture_default_str();
    sub.add_option("--config", c.config, "JSON or TOML config file; flags override it")->check(CLI::ExistingFile);
    sub.add_option("--out", c.out, "Output directory")->capture_default_str();
    if (withBudget)
    {
        sub.add_option("--budget", c.budget, "Global-view visual token budget")->capture_default_str();
        sub.add_option("--max-turns", c.maxTurns, "Maximum turns per episode")->capture_default_str();
    }
    sub.add_option("--workers", c.workers, "Worker threads (0 = logical cores)")->capture_default_str();
}

void addToy(CLI::App& sub, ToyFlags& t)
{
    sub.add_option("--grid", t.grid, "Toy grid side")->capture_default_str();
    sub.add_option("--classes", t.classes, "Toy glyph classes")->capture_default_str();
    sub.add_option("--rho", t.rho, "Toy readability threshold in pixels")->capture_default_str();
    sub.add_option("--image-side", t.imageSide, "Toy image side in pixels")->capture_default_str();
}

void addSource(CLI::App& sub, Source& s)
{
    sub.add_option("--dataset", s.dataset, "Dataset manifest (JSONL)");
    sub.add_option("--toy", s.toy, "Generate this many toy instances instead of reading a dataset")
        ->capture_default_str();
    sub.add_option("--toy-seed", s.toySeed, "First seed of generated toy instances")->capture_default_str();
}

auto loadItems(const Source& s, const ToyFlags& toy) -> std::vector<EvalItem>
{
    if (!s.dataset.empty() && s.toy > 0)
        throw UsageProblem("--dataset and --toy are mutually exclusive");
    if (s.dataset.empty() && s.toy <= 0)
        throw UsageProblem("one of --dataset or --toy is required");
    if (s.toy > 0)
    {
        auto items = std::vector<EvalItem> {};
        for (int i = 0; i < s.toy; ++i)
            items.push_back(evalItemFromToy(genTask(s.toySeed + std::uint64_t(i), toy.spec())));
        return items;
    }
    auto const ds = loadManifest(s.dataset);
    auto options = ValidateOptions {};
    options.checkImages = true;
    if (auto const violations = validate(ds, options); !violations.empty())
    {
        for (auto const& v: violations)
            fmt::print(stderr, "invalid: {}\n", toString(v));
        throw ValidationError(fmt::format("{} violation(s) in {}", violations.size(), s.dataset));
    }
    return loadEvalItems(ds);
}

struct PolicyFlags
{
    std::string policy = "toy-crop";
    std::string endpoint;
};

void addPolicy(CLI::App& sub, PolicyFlags& p)
{
    sub.add_option("--policy", p.policy,
                   "remote | toy-crop (reads crops) | toy-global (ignores crops) | toy-any | toy-direct")
        ->capture_default_str();
    sub.add_option("--endpoint", p.endpoint, "Chat endpoint for --policy remote (default: $CROPLOOP_ENDPOINT)");
}

auto makePolicy(const PolicyFlags& p, const ToyFlags& toy) -> std::unique_ptr<Policy>
{
    if (p.policy == "remote")
    {
        auto cfg = RemotePolicyConfig::fromEnvironment().value_or(RemotePolicyConfig {});
        if (!p.endpoint.empty())
            cfg.endpoint = p.endpoint;
        if (cfg.endpoint.empty())
            throw UsageProblem("--policy remote needs --endpoint or CROPLOOP_ENDPOINT");
        return std::make_unique<RemotePolicy>(cfg);
    }
    auto const spec = toy.spec();
    if (p.policy == "toy-crop")
        return std::make_unique<ToyActor>(ToyActor::cropSalient(spec, ReadFrom::LatestCrop));
    if (p.policy == "toy-global")
        return std::make_unique<ToyActor>(ToyActor::cropSalient(spec, ReadFrom::Global));
    if (p.policy == "toy-any")
        return std::make_unique<ToyActor>(ToyActor::cropSalient(spec, ReadFrom::AnyView));
    if (p.policy == "toy-direct")
        return std::make_unique<ToyActor>(ToyActor::answerNow(spec));
    throw UsageProblem(fmt::format("unknown policy '{}'", p.policy));
}

auto episodeConfig(const Common& c) -> EpisodeConfig
{
    auto cfg = EpisodeConfig {};
    cfg.globalTokenBudget = c.budget;
    cfg.maxTurns = c.maxTurns;
    return cfg;
}

void writeFile(const fs::path& path, std::string_view text)
{
    fs::create_directories(path.parent_path());
    atomicWriteFile(path, text);
}

/// Answers toy questions by reading the glyph, for offline resolution selection on toy data.
class ToyAnswerer final: public Answerer
{
  public:
    explicit ToyAnswerer(ToySpec spec): _spec(spec) {}
    auto answer(const ImageBuffer& view, std::string_view) -> std::string override { return perceive(view, _spec); }

  private:
    ToySpec _spec;
};

// gen-toy -------------------------------------------------------------------

struct GenToyCmd
{
    Common common;
    ToyFlags toy;
    int count = 8;
};

auto runGenToy(CLI::App& sub, const GenToyCmd& cmd) -> int
{
    auto const out = fs::path(cmd.common.out);
    fs::create_directories(out / "images");
    auto ds = Dataset { out, {} };
    for (int i = 0; i < cmd.count; ++i)
    {
        auto const inst = genTask(cmd.common.seed + std::uint64_t(i), cmd.toy.spec());
        auto const rel = fmt::format("images/{}.png", inst.id);
        savePng(*inst.image, out / rel);
        auto boxes = std::vector<Box> {};
        for (auto const& b: inst.gt.boxes())
            boxes.push_back(b);
        ds.instances.push_back(DataInstance {
            .id = inst.id,
            .question = inst.question,
            .answer = inst.answer,
            .answerKind = AnswerKind::Mcq,
            .originalImage = rel,
            .imageDims = inst.image->dims(),
            .selectedDims = std::nullopt,
            .gtBoxes = boxes,
            .split = Split::Eval,
            .source = "toy",
        });
    }
    saveManifest(ds, out / "manifest.jsonl");
    writeRunManifest(out, "gen-toy", effectiveOptions(sub), cmd.common.seed, { "manifest.jsonl" });
    fmt::print("wrote {} toy instances to {}\n", cmd.count, (out / "manifest.jsonl").string());
    return Success;
}

// prepare -------------------------------------------------------------------

struct PrepareCmd
{
    Common common;
    ToyFlags toy;
    PolicyFlags policy;
    std::string dataset;
    std::string strategy = "answer";
    std::string answerer = "toy";
    double decay = 0.75;
    int floor = 224;
};

auto runPrepare(CLI::App& sub, const PrepareCmd& cmd) -> int
{
    auto ds = loadManifest(cmd.dataset);
    auto checks = ValidateOptions {};
    checks.ladderDecay = cmd.decay;
    checks.ladderFloor = cmd.floor;
    if (auto const violations = validate(ds, checks); !violations.empty())
    {
        for (auto const& v: violations)
            fmt::print(stderr, "invalid: {}\n", toString(v));
        throw ValidationError(fmt::format("{} violation(s) in {}", violations.size(), cmd.dataset));
    }

    auto policy = std::unique_ptr<Policy> {};
    auto answerer = std::unique_ptr<Answerer> {};
    if (cmd.answerer == "toy")
        answerer = std::make_unique<ToyAnswerer>(cmd.toy.spec());
    else if (cmd.answerer == "policy")
    {
        policy = makePolicy(cmd.policy, cmd.toy);
        answerer = std::make_unique<PolicyAnswerer>(*policy, 16384);
    }
    else
        throw UsageProblem(fmt::format("unknown answerer '{}'", cmd.answerer));

    auto const strategy = SelectionStrategy { parseStrategyKind(cmd.strategy), cmd.common.seed };
    auto selections = std::vector<nlohmann::json>(ds.instances.size());
    parallelFor(ds.instances.size(), cmd.common.workers, [&](std::size_t i) {
        auto& inst = ds.instances[i];
        auto const image = loadPng(ds.imagePath(inst));
        auto const ladder = buildLadder(inst.imageDims, cmd.decay, std::min(cmd.floor, inst.imageDims.longSide()));
        auto const result = selectResolution(image, inst.question, inst.answerKind, *answerer, ladder, strategy, inst.id);
        inst.selectedDims = result.dims;
        auto rungs = nlohmann::json::array();
        for (auto const& r: ladder.rungs)
            rungs.push_back({ r.width, r.height });
        selections[i] = {
            { "instance_id", inst.id },
            { "strategy", cmd.strategy },
            { "rungs", std::move(rungs) },
            { "rung_index", result.rungIndex },
            { "selected_dims", { result.dims.width, result.dims.height } },
            { "diverged", result.diverged },
            { "answers", result.answers },
        };
    });

    auto const out = fs::path(cmd.common.out);
    fs::create_directories(out);
    // Relative image paths must keep resolving from the new manifest location.
    for (auto& inst: ds.instances)
        inst.originalImage = fs::absolute(ds.imagePath(inst)).lexically_normal().string();
    ds.baseDir = out;
    saveManifest(ds, out / "manifest.jsonl");
    auto lines = std::string {};
    for (auto const& s: selections)
        lines += canonicalLine(s) + "\n";
    writeFile(out / "selection.jsonl", lines);
    writeRunManifest(out, "prepare", effectiveOptions(sub), cmd.common.seed, { "manifest.jsonl", "selection.jsonl" });
    fmt::print("selected resolutions for {} instances ({})\n", ds.instances.size(), cmd.strategy);
    return Success;
}

// rollout -------------------------------------------------------------------

struct RolloutCmd
{
    Common common;
    ToyFlags toy;
    PolicyFlags policy;
    Source source;
    bool saveCrops = false;
    double omega = 0.5;
};

auto runRollout(CLI::App& sub, const RolloutCmd& cmd) -> int
{
    auto const items = loadItems(cmd.source, cmd.toy);
    auto policy = makePolicy(cmd.policy, cmd.toy);
    auto const cfg = episodeConfig(cmd.common);
    auto rewards = RewardConfig {};
    rewards.omega = cmd.omega;
    rewards.validate();

    auto const out = fs::path(cmd.common.out);
    fs::create_directories(out);
    auto trajectories = std::vector<Trajectory>(items.size());
    parallelFor(items.size(), cmd.common.workers, [&](std::size_t i) {
        auto const& item = items[i];
        auto const task = EpisodeTask::make(item.id, item.question, item.image, item.selectedDims, cfg.globalTokenBudget);
        trajectories[i] = runEpisode(*policy, task, cfg);
    });

    auto lines = std::string {};
    for (std::size_t i = 0; i < items.size(); ++i)
    {
        auto const& traj = trajectories[i];
        auto line = nlohmann::json {
            { "schema", kSchemaVersion },
            { "trajectory", trajectoryToJson(traj) },
            { "reward_stage1", rewardToJson(stage1Total(traj, items[i].answer, items[i].kind, rewards)) },
        };
        if (items[i].gt)
            line["reward_stage2"] = rewardToJson(stage2Total(traj, items[i].answer, items[i].kind, items[i].gt, rewards));
        lines += canonicalLine(line) + "\n";
        if (cmd.saveCrops)
        {
            fs::create_directories(out / "crops");
            for (auto const& crop: traj.cropImages)
            {
                auto const name = crop->id().substr(crop->id().find(':') + 1) + ".png";
                if (!fs::exists(out / "crops" / name))
                    savePng(*crop, out / "crops" / name);
            }
        }
    }
    writeFile(out / "trajectories.jsonl", lines);
    writeRunManifest(out, "rollout", effectiveOptions(sub), cmd.common.seed, { "trajectories.jsonl" });
    fmt::print("wrote {} trajectories\n", items.size());
    return Success;
}

// train-toy -----------------------------------------------------------------

struct TrainCmd
{
    Common common;
    ToyFlags toy;
    int iterations = 500;
    std::string gap = "on";
    int groupSize = 16;
    double learningRate = 0.1;
    double clipEpsilon = 0.2;
    std::int64_t gapOnBudget = 64;
    std::int64_t gapOffBudget = 1024;
    std::string readFrom = "any_view";
};

auto curvesSvg(const TrainReport& report) -> std::string
{
    auto reward = Series { "reward mean", {} };
    auto tool = Series { "tool-call rate", {} };
    auto pCorrect = Series { "P(correct cell)", {} };
    auto overlapSeries = Series { "mean overlap", {} };
    for (auto const& m: report.iterations)
    {
        reward.values.push_back(m.rewardMean);
        tool.values.push_back(m.toolCallRate);
        pCorrect.values.push_back(m.pCorrectCell);
        overlapSeries.values.push_back(m.meanOverlap);
    }
    auto const& cfg = report.config;
    auto const maxReward = cfg.rewards.wAcc + cfg.rewards.wFormat + cfg.rewards.wTool;
    auto reward01 = reward;
    reward01.name = fmt::format("reward mean / {:.1f}", maxReward);
    for (auto& v: reward01.values)
        v /= maxReward;
    return svgLineChart(fmt::format("toy training, gap {}, seed {}", cfg.gapOn ? "on" : "off", cfg.seed),
                        { reward01, tool, pCorrect, overlapSeries }, 0.0, 1.0);
}

auto runTrainToy(CLI::App& sub, const TrainCmd& cmd) -> int
{
    auto cfg = ToyTrainConfig {};
    cfg.spec = cmd.toy.spec();
    if (cmd.gap != "on" && cmd.gap != "off")
        throw UsageProblem("--gap must be on or off");
    cfg.gapOn = cmd.gap == "on";
    cfg.iterations = cmd.iterations;
    cfg.seed = cmd.common.seed;
    cfg.groupSize = cmd.groupSize;
    cfg.learningRate = cmd.learningRate;
    cfg.clipEpsilon = cmd.clipEpsilon;
    cfg.gapOnGlobalBudget = cmd.gapOnBudget;
    cfg.gapOffGlobalBudget = cmd.gapOffBudget;
    cfg.maxTurns = cmd.common.maxTurns;
    cfg.readFrom = parseReadFrom(cmd.readFrom);
    cfg.workers = cmd.common.workers == 0 ? 1 : cmd.common.workers;
    cfg.validate();

    auto const report = trainToy(cfg);
    auto const out = fs::path(cmd.common.out);
    fs::create_directories(out);
    writeFile(out / "train_report.jsonl", trainReportJsonl(report));
    writeFile(out / "curves.svg", curvesSvg(report));
    writeRunManifest(out, "train-toy", effectiveOptions(sub), cmd.common.seed, { "train_report.jsonl", "curves.svg" });
    fmt::print("gap {}: P(correct cell) {:.4f} -> {:.4f}, P(tool call) {:.4f} -> {:.4f}\n", cmd.gap,
               report.initialPCorrectCell, report.finalPCorrectCell(), report.initialPToolCall,
               report.finalPToolCall());
    return Success;
}

// eval / diagnose -----------------------------------------------------------

struct DiagnoseCmd
{
    Common common;
    ToyFlags toy;
    PolicyFlags policy;
    Source source;
    std::string mode = "all";
    int gtLevel = 2;
    double lowOverlap = 0.2;
    bool noiseTest = false;
    std::string fixtureRecords;
    std::string fixtureTable;
    double tolerance = 0.05;
};

auto runFixtureCheck(const DiagnoseCmd& cmd, const fs::path& out, std::vector<std::string>& outputs) -> bool
{
    auto const records = loadFixtureRecords(cmd.fixtureRecords);
    auto const published = loadPublishedTable(cmd.fixtureTable);
    auto const cells = aggregateFixture(records);
    auto const comparisons = compareTables(cells, published, cmd.tolerance);
    auto lines = std::string {};
    auto failures = 0;
    for (auto const& c: comparisons)
    {
        failures += c.withinTolerance ? 0 : 1;
        lines += canonicalLine({
                     { "model", c.published.model },
                     { "budget", c.published.budget },
                     { "mode", std::string(toString(c.published.mode)) },
                     { "benchmark", c.published.benchmark },
                     { "column", c.published.column },
                     { "published", c.published.value },
                     { "computed", c.computed ? nlohmann::json(*c.computed) : nlohmann::json(nullptr) },
                     { "within_tolerance", c.withinTolerance },
                 })
                 + "\n";
    }
    writeFile(out / "fixture_check.jsonl", lines);
    writeFile(out / "fixture_table.md", tableMarkdown(cells));
    outputs.push_back("fixture_check.jsonl");
    outputs.push_back("fixture_table.md");
    fmt::print("fixture: {} of {} cells within ±{}\n", comparisons.size() - std::size_t(failures), comparisons.size(),
               cmd.tolerance);
    return failures == 0;
}

auto runDiagnose(CLI::App& sub, const DiagnoseCmd& cmd, bool evalOnly) -> int
{
    auto const out = fs::path(cmd.common.out);
    fs::create_directories(out);
    auto outputs = std::vector<std::string> {};
    auto ok = true;

    if (!cmd.fixtureRecords.empty() || !cmd.fixtureTable.empty())
    {
        if (cmd.fixtureRecords.empty() || cmd.fixtureTable.empty())
            throw UsageProblem("--fixture-records and --fixture-table go together");
        ok = runFixtureCheck(cmd, out, outputs);
        if (cmd.source.dataset.empty() && cmd.source.toy == 0)
        {
            writeRunManifest(out, "diagnose", effectiveOptions(sub), cmd.common.seed, outputs);
            return ok ? Success : ValidationFailure;
        }
    }

    auto const items = loadItems(cmd.source, cmd.toy);
    auto policy = makePolicy(cmd.policy, cmd.toy);
    auto modes = std::vector<SubstitutionMode> {};
    if (evalOnly || cmd.mode == "prediction")
        modes = { SubstitutionMode::Prediction };
    else if (cmd.mode == "all")
        modes = { SubstitutionMode::Prediction, SubstitutionMode::GroundTruth, SubstitutionMode::RandomNoise };
    else
        modes = { parseSubstitutionMode(cmd.mode) };

    auto reports = std::vector<EvalReport> {};
    auto timing = std::string {};
    for (auto const mode: modes)
    {
        auto cfg = DiagnosticsConfig {};
        cfg.episode = episodeConfig(cmd.common);
        cfg.mode = mode;
        cfg.seed = cmd.common.seed;
        cfg.gtLevel = cmd.gtLevel;
        cfg.workers = cmd.common.workers;
        reports.push_back(substitutionEval(*policy, items, cfg));
        auto const name = evalOnly ? std::string("eval_report.jsonl")
                                   : fmt::format("diagnose_{}.jsonl", toString(mode));
        writeFile(out / name, reportJsonl(reports.back()));
        outputs.push_back(name);
        timing += timingJsonl(reports.back());
    }

    auto md = fmt::format("# {}\n\n{}", evalOnly ? "Evaluation" : "Crop substitution diagnostics",
                          reportMarkdown(reports));
    auto const* gt = static_cast<const EvalReport*>(nullptr);
    auto const* noise = static_cast<const EvalReport*>(nullptr);
    auto const* pred = static_cast<const EvalReport*>(nullptr);
    for (auto const& r: reports)
    {
        gt = r.mode == SubstitutionMode::GroundTruth ? &r : gt;
        noise = r.mode == SubstitutionMode::RandomNoise ? &r : noise;
        pred = r.mode == SubstitutionMode::Prediction ? &r : pred;
    }
    if (gt && noise)
        md += fmt::format("\nAcc delta (gt - noise): {:.2f} points\n", accDelta(*gt, *noise));
    if (pred && gt)
    {
        auto const low = subsetLowOverlap(*pred, cmd.lowOverlap);
        auto lowIds = std::set<std::string> {};
        for (auto const& r: low.records)
            lowIds.insert(r.instanceId);
        auto gtLow = EvalReport { gt->mode, gt->globalTokenBudget, {} };
        for (auto const& r: gt->records)
            if (lowIds.contains(r.instanceId))
                gtLow.records.push_back(r);
        md += fmt::format("\nLow-overlap subset (overlap <= {}): {} instances, prediction {:.1f}, gt {:.1f}\n",
                          cmd.lowOverlap, low.records.size(), 100.0 * low.accuracy(), 100.0 * gtLow.accuracy());
    }
    if (cmd.noiseTest)
    {
        auto const ids = subsetNoiseTest(*policy, items, episodeConfig(cmd.common), cmd.common.workers);
        writeFile(out / "noise_test_ids.json", nlohmann::json(ids).dump(2) + "\n");
        outputs.push_back("noise_test_ids.json");
        md += fmt::format("\nNoise-test subset: {} instances\n", ids.size());
    }
    auto const mdName = evalOnly ? "eval.md" : "diagnose.md";
    writeFile(out / mdName, md);
    outputs.push_back(mdName);
    writeFile(out / "timing.jsonl", timing);
    writeRunManifest(out, evalOnly ? "eval" : "diagnose", effectiveOptions(sub), cmd.common.seed, outputs);
    fmt::print("{}", md);
    return ok ? Success : ValidationFailure;
}

// annotate-serve ------------------------------------------------------------

struct ServeCmd
{
    Common common;
    std::string dataset;
    std::string annotations = "annotations.jsonl";
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string token;
    std::string staticDir;
};

AnnotServer* g_server = nullptr;

auto runServe(const ServeCmd& cmd) -> int
{
    auto ds = loadManifest(cmd.dataset);
    auto checks = ValidateOptions {};
    if (auto const violations = validate(ds, checks); !violations.empty())
    {
        for (auto const& v: violations)
            fmt::print(stderr, "invalid: {}\n", toString(v));
        throw ValidationError(fmt::format("{} violation(s) in {}", violations.size(), cmd.dataset));
    }
    auto token = cmd.token;
    if (token.empty())
        if (auto const* env = std::getenv("CROPLOOP_ANNOT_TOKEN"))
            token = env;
    auto service = AnnotationService(std::move(ds), cmd.annotations, cmd.common.seed);
    auto server = AnnotServer(service, AnnotServerConfig { cmd.host, cmd.port, token, cmd.staticDir });
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server)
            g_server->stop();
    });
    fmt::print("annotation server on http://{}:{}\n", cmd.host, cmd.port);
    std::fflush(stdout);
    server.run();
    g_server = nullptr;
    return Success;
}

// report --------------------------------------------------------------------

struct ReportCmd
{
    Common common;
    std::vector<std::string> inputs;
};

auto runReport(CLI::App& sub, const ReportCmd& cmd) -> int
{
    auto const out = fs::path(cmd.common.out);
    fs::create_directories(out);
    auto md = std::string("# Training report\n\n| Run | Gap | Iterations | P(correct) first -> last | Tool-call rate first -> last | Reward first 10% -> last 10% |\n|---|---|---|---|---|---|\n");
    auto rewardSeries = std::vector<Series> {};
    auto toolSeries = std::vector<Series> {};
    for (auto const& input: cmd.inputs)
    {
        auto stream = std::istringstream(readTextFile(input));
        auto line = std::string {};
        auto gap = std::string("?");
        auto reward = Series { fs::path(input).parent_path().filename().string(), {} };
        auto tool = reward;
        auto pCorrect = std::vector<double> {};
        while (std::getline(stream, line))
        {
            if (line.empty())
                continue;
            auto const j = nlohmann::json::parse(line);
            auto const type = j.value("type", "");
            if (type == "config")
                gap = j["config"].value("gap", "?");
            else if (type == "iteration")
            {
                reward.values.push_back(j.at("reward_mean").get<double>());
                tool.values.push_back(j.at("tool_call_rate").get<double>());
                pCorrect.push_back(j.at("p_correct_cell").get<double>());
            }
        }
        if (reward.name.empty())
            reward.name = tool.name = input;
        reward.name += " (gap " + gap + ")";
        tool.name = reward.name;
        auto const n = reward.values.size();
        auto const tenth = std::max<std::size_t>(1, n / 10);
        auto const mean = [](auto begin, auto end) {
            auto s = 0.0;
            auto k = 0;
            for (auto it = begin; it != end; ++it, ++k)
                s += *it;
            return k > 0 ? s / k : 0.0;
        };
        if (n > 0)
            md += fmt::format("| {} | {} | {} | {:.3f} -> {:.3f} | {:.3f} -> {:.3f} | {:.3f} -> {:.3f} |\n", input,
                              gap, n, pCorrect.front(), pCorrect.back(), tool.values.front(), tool.values.back(),
                              mean(reward.values.begin(), reward.values.begin() + long(tenth)),
                              mean(reward.values.end() - long(tenth), reward.values.end()));
        rewardSeries.push_back(reward);
        toolSeries.push_back(tool);
    }
    writeFile(out / "reward.svg", svgLineChart("reward mean per iteration", rewardSeries, 0.0, 2.2));
    writeFile(out / "tool_calls.svg", svgLineChart("tool-call rate per iteration", toolSeries, 0.0, 1.0));
    writeFile(out / "report.md", md);
    writeRunManifest(out, "report", effectiveOptions(sub), cmd.common.seed, { "report.md", "reward.svg", "tool_calls.svg" });
    fmt::print("{}", md);
    return Success;
}

} // namespace

auto main(int argc, char** argv) -> int
{
    auto app = CLI::App("croploop: crop-tool agent environment, rewards and diagnostics");
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("croploop ") + CROPLOOP_GIT_REV);

    auto genToy = GenToyCmd {};
    auto* genToySub = app.add_subcommand("gen-toy", "Write a synthetic toy dataset (PNG images + manifest)");
    addCommon(*genToySub, genToy.common, false);
    addToy(*genToySub, genToy.toy);
    genToySub->add_option("--count", genToy.count, "Number of instances")->capture_default_str();

    auto prepare = PrepareCmd {};
    auto* prepareSub = app.add_subcommand("prepare", "Select the global-view resolution of every instance");
    addCommon(*prepareSub, prepare.common, false);
    addToy(*prepareSub, prepare.toy);
    addPolicy(*prepareSub, prepare.policy);
    prepareSub->add_option("--dataset", prepare.dataset, "Dataset manifest")->required();
    prepareSub->add_option("--strategy", prepare.strategy, "answer | hard | random")->capture_default_str();
    prepareSub->add_option("--answerer", prepare.answerer, "toy | policy")->capture_default_str();
    prepareSub->add_option("--decay", prepare.decay, "Ladder decay per rung")->capture_default_str();
    prepareSub->add_option("--floor", prepare.floor, "Ladder floor (long side)")->capture_default_str();

    auto rollout = RolloutCmd {};
    auto* rolloutSub = app.add_subcommand("rollout", "Run episodes and write trajectories with rewards");
    addCommon(*rolloutSub, rollout.common);
    addToy(*rolloutSub, rollout.toy);
    addPolicy(*rolloutSub, rollout.policy);
    addSource(*rolloutSub, rollout.source);
    rolloutSub->add_flag("--save-crops", rollout.saveCrops, "Store crop images under crops/<sha256>.png");
    rolloutSub->add_option("--omega", rollout.omega, "IoU/L1 mix of the grounding reward")->capture_default_str();

    auto train = TrainCmd {};
    auto* trainSub = app.add_subcommand("train-toy", "GRPO training of the tabular toy policy");
    addCommon(*trainSub, train.common, false);
    trainSub->add_option("--max-turns", train.common.maxTurns, "Maximum turns per episode")->capture_default_str();
    addToy(*trainSub, train.toy);
    trainSub->add_option("--iterations", train.iterations, "Training iterations")->capture_default_str();
    trainSub->add_option("--gap", train.gap, "Information gap: on | off")->capture_default_str();
    trainSub->add_option("--group-size", train.groupSize, "Rollouts per group")->capture_default_str();
    trainSub->add_option("--lr", train.learningRate, "Learning rate")->capture_default_str();
    trainSub->add_option("--clip-epsilon", train.clipEpsilon, "Ratio clip epsilon")->capture_default_str();
    trainSub->add_option("--gap-on-budget", train.gapOnBudget, "Global budget with the gap on")->capture_default_str();
    trainSub->add_option("--gap-off-budget", train.gapOffBudget, "Global budget with the gap off")
        ->capture_default_str();
    trainSub->add_option("--read-from", train.readFrom, "global | latest_crop | any_view")->capture_default_str();

    auto evalCmd = DiagnoseCmd {};
    auto* evalSub = app.add_subcommand("eval", "Evaluate a policy on a dataset");
    addCommon(*evalSub, evalCmd.common);
    addToy(*evalSub, evalCmd.toy);
    addPolicy(*evalSub, evalCmd.policy);
    addSource(*evalSub, evalCmd.source);

    auto diagnose = DiagnoseCmd {};
    auto* diagnoseSub = app.add_subcommand("diagnose", "Crop-substitution diagnostics");
    addCommon(*diagnoseSub, diagnose.common);
    addToy(*diagnoseSub, diagnose.toy);
    addPolicy(*diagnoseSub, diagnose.policy);
    addSource(*diagnoseSub, diagnose.source);
    diagnoseSub->add_option("--mode", diagnose.mode, "prediction | gt | noise | all")->capture_default_str();
    diagnoseSub->add_option("--gt-level", diagnose.gtLevel, "Ground-truth level used for gt crops")
        ->capture_default_str();
    diagnoseSub->add_option("--low-overlap", diagnose.lowOverlap, "Overlap threshold of the low-overlap subset")
        ->capture_default_str();
    diagnoseSub->add_flag("--noise-test", diagnose.noiseTest, "Also compute the noise-test subset");
    diagnoseSub->add_option("--fixture-records", diagnose.fixtureRecords, "Stored per-question fixture records");
    diagnoseSub->add_option("--fixture-table", diagnose.fixtureTable, "Published table the fixture must reproduce");
    diagnoseSub->add_option("--tolerance", diagnose.tolerance, "Fixture tolerance in points")->capture_default_str();

    auto serve = ServeCmd {};
    auto* serveSub = app.add_subcommand("annotate-serve", "Serve the annotation REST API");
    addCommon(*serveSub, serve.common, false);
    serveSub->add_option("--dataset", serve.dataset, "Dataset manifest")->required();
    serveSub->add_option("--annotations", serve.annotations, "Annotation JSONL file")->capture_default_str();
    serveSub->add_option("--host", serve.host, "Bind address")->capture_default_str();
    serveSub->add_option("--port", serve.port, "Port (0 = ephemeral)")->capture_default_str();
    serveSub->add_option("--token", serve.token, "Shared token (default: $CROPLOOP_ANNOT_TOKEN)");
    serveSub->add_option("--static", serve.staticDir, "Built UI bundle directory");

    auto report = ReportCmd {};
    auto* reportSub = app.add_subcommand("report", "Summarize training logs");
    addCommon(*reportSub, report.common, false);
    reportSub->add_option("inputs", report.inputs, "train_report.jsonl files")->required()->check(CLI::ExistingFile);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        auto const code = app.exit(e);
        return code == 0 ? Success : UsageError;
    }

    auto* sub = app.get_subcommands().front();
    try
    {
        for (auto* common: { &genToy.common, &prepare.common, &rollout.common, &train.common, &evalCmd.common,
                             &diagnose.common, &serve.common, &report.common })
            if (!common->config.empty() && sub->get_option_no_throw("--config")->count() > 0)
            {
                applyConfigFile(*sub, common->config);
                break;
            }

        auto const name = sub->get_name();
        if (name == "gen-toy")
            return runGenToy(*sub, genToy);
        if (name == "prepare")
            return runPrepare(*sub, prepare);
        if (name == "rollout")
            return runRollout(*sub, rollout);
        if (name == "train-toy")
            return runTrainToy(*sub, train);
        if (name == "eval")
            return runDiagnose(*sub, evalCmd, true);
        if (name == "diagnose")
            return runDiagnose(*sub, diagnose, false);
        if (name == "annotate-serve")
            return runServe(serve);
        if (name == "report")
            return runReport(*sub, report);
        return UsageError;
    }
    catch (const UsageProblem& e)
    {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return UsageError;
    }
    catch (const CLI::ParseError& e)
    {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return UsageError;
    }
    catch (const ValidationError& e)
    {
        fmt::print(stderr, "validation failed: {}\n", e.what());
        return ValidationFailure;
    }
    catch (const ParseError& e)
    {
        fmt::print(stderr, "validation failed: {}\n", e.what());
        return ValidationFailure;
    }
    catch (const ImageMissing& e)
    {
        fmt::print(stderr, "validation failed: {}\n", e.what());
        return ValidationFailure;
    }
    catch (const InvalidArgument& e)
    {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return UsageError;
    }
    catch (const std::exception& e)
    {
        fmt::print(stderr, "error: {}\n", e.what());
        return RuntimeFailure;
    }
}
