// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <croploop/diagnostics.hpp>
#include <croploop/error.hpp>
#include <croploop/util.hpp>
#include <croploop/toyworld.hpp>

#include <gtest/gtest.h>

using namespace croploop;

namespace
{

auto toyItems(int n, ToySpec spec = {}) -> std::vector<EvalItem>
{
    auto out = std::vector<EvalItem> {};
    for (int i = 0; i < n; ++i)
        out.push_back(evalItemFromToy(genTask(std::uint64_t(100 + i), spec)));
    return out;
}

auto run(Policy& policy, const std::vector<EvalItem>& items, SubstitutionMode mode, std::int64_t budget = 64,
         unsigned workers = 1) -> EvalReport
{
    auto cfg = DiagnosticsConfig {};
    cfg.episode.globalTokenBudget = budget;
    cfg.mode = mode;
    cfg.seed = 7;
    cfg.workers = workers;
    return substitutionEval(policy, items, cfg);
}

auto recordWithOverlap(std::string id, std::optional<double> overlapValue) -> EvalRecord
{
    auto r = EvalRecord {};
    r.instanceId = std::move(id);
    r.bestOverlap = overlapValue;
    return r;
}

} // namespace

TEST(Substitution, CropIgnoringPolicyIsInvariant)
{
    auto const items = toyItems(24);
    for (auto budget: { std::int64_t { 64 }, std::int64_t { 1024 } })
    {
        auto policy = ToyActor::cropSalient(ToySpec {}, ReadFrom::Global);
        auto const pred = run(policy, items, SubstitutionMode::Prediction, budget);
        auto const gt = run(policy, items, SubstitutionMode::GroundTruth, budget);
        auto const noise = run(policy, items, SubstitutionMode::RandomNoise, budget);
        EXPECT_EQ(pred.accuracy(), gt.accuracy());
        EXPECT_EQ(gt.accuracy(), noise.accuracy());
        EXPECT_EQ(accDelta(gt, noise), 0.0);
    }
}

TEST(Substitution, CropDependentPolicyShowsContrast)
{
    auto const items = toyItems(24);
    auto policy = ToyActor::cropSalient(ToySpec {}, ReadFrom::LatestCrop);
    auto const gt = run(policy, items, SubstitutionMode::GroundTruth);
    auto const noise = run(policy, items, SubstitutionMode::RandomNoise);
    EXPECT_EQ(gt.accuracy(), 1.0);
    // Noise crops always read as the distractor, which is never a valid option.
    EXPECT_EQ(noise.accuracy(), 0.0);
    EXPECT_DOUBLE_EQ(accDelta(gt, noise), 100.0 * (1.0 - noise.accuracy()));
}

TEST(Substitution, NoisePreservesTrajectoryShape)
{
    auto const items = toyItems(10);
    auto policy = ToyActor::cropCell(ToySpec {}, 5, ReadFrom::LatestCrop);
    auto const pred = run(policy, items, SubstitutionMode::Prediction);
    auto const noise = run(policy, items, SubstitutionMode::RandomNoise);
    ASSERT_EQ(pred.records.size(), noise.records.size());
    for (std::size_t i = 0; i < pred.records.size(); ++i)
    {
        EXPECT_EQ(pred.records[i].turns, noise.records[i].turns);
        EXPECT_EQ(pred.records[i].boxes, noise.records[i].boxes);
    }
}

TEST(Substitution, GroundTruthReplacesBoxWithLevelTwo)
{
    auto const items = toyItems(6);
    auto policy = ToyActor::cropCell(ToySpec {}, 0, ReadFrom::LatestCrop);
    auto const gt = run(policy, items, SubstitutionMode::GroundTruth);
    for (std::size_t i = 0; i < items.size(); ++i)
    {
        ASSERT_EQ(gt.records[i].boxes.size(), 1u);
        EXPECT_TRUE(gt.records[i].boxes[0].sameRect(items[i].gt->level(2)));
        EXPECT_DOUBLE_EQ(*gt.records[i].finalIou, 1.0);
    }
}

TEST(Substitution, GroundTruthModeNeedsBoxes)
{
    auto items = toyItems(2);
    items[1].gt.reset();
    auto policy = ToyActor::answerNow(ToySpec {});
    EXPECT_THROW((void)run(policy, items, SubstitutionMode::GroundTruth), MissingGt);
}

TEST(Substitution, WorkerCountDoesNotChangeResults)
{
    auto const items = toyItems(16);
    auto policy = ToyActor::cropSalient(ToySpec {}, ReadFrom::LatestCrop);
    auto const one = run(policy, items, SubstitutionMode::RandomNoise, 64, 1);
    auto const four = run(policy, items, SubstitutionMode::RandomNoise, 64, 4);
    EXPECT_EQ(reportJsonl(one), reportJsonl(four));
}

TEST(AccDelta, Rules)
{
    auto a = EvalReport {};
    auto b = EvalReport {};
    for (int i = 0; i < 200; ++i)
    {
        auto r = EvalRecord {};
        r.instanceId = std::to_string(i);
        r.correct = i < 129;
        a.records.push_back(r);
        r.correct = i < 119;
        b.records.push_back(r);
    }
    EXPECT_NEAR(accDelta(a, b), 5.0, 1e-12);
    EXPECT_EQ(accDelta(a, a), 0.0);
    b.records.pop_back();
    EXPECT_THROW((void)accDelta(a, b), DatasetMismatch);
}

TEST(LowOverlap, Filter)
{
    auto report = EvalReport {};
    report.records = { recordWithOverlap("a", 0.1), recordWithOverlap("b", 0.5), recordWithOverlap("c", 0.0) };
    EXPECT_EQ(subsetLowOverlap(report, 0.2).records.size(), 2u);
    EXPECT_EQ(subsetLowOverlap(report, 1.0).records.size(), 3u);
    auto perfect = EvalReport {};
    perfect.records = { recordWithOverlap("a", 1.0), recordWithOverlap("b", 1.0) };
    EXPECT_TRUE(subsetLowOverlap(perfect, 0.2).records.empty());
}

TEST(NoiseTest, CropDependentPolicyUnderGap)
{
    auto const items = toyItems(12);
    auto reader = ToyActor::cropSalient(ToySpec {}, ReadFrom::AnyView);
    auto episode = EpisodeConfig {};
    episode.globalTokenBudget = 64;
    auto const ids = subsetNoiseTest(reader, items, episode);
    EXPECT_EQ(ids.size(), items.size());
    EXPECT_EQ(ids, subsetNoiseTest(reader, items, episode));

    episode.globalTokenBudget = 1024;
    EXPECT_TRUE(subsetNoiseTest(reader, items, episode).empty());
}

TEST(MeanIou, Conventions)
{
    auto report = EvalReport {};
    auto r = EvalRecord {};
    r.finalIou = 0.2;
    report.records.push_back(r);
    r.finalIou = 0.6;
    report.records.push_back(r);
    EXPECT_NEAR(meanIou(report), 0.4, 1e-15);

    auto const items = toyItems(4);
    auto direct = ToyActor::answerNow(ToySpec {});
    EXPECT_EQ(meanIou(run(direct, items, SubstitutionMode::Prediction)), 0.0);

    report.records.push_back(EvalRecord {});
    EXPECT_THROW((void)meanIou(report), MissingGt);
}

TEST(Reports, JsonlExcludesLatency)
{
    auto const items = toyItems(3);
    auto policy = ToyActor::cropSalient(ToySpec {}, ReadFrom::LatestCrop);
    auto const report = run(policy, items, SubstitutionMode::Prediction);
    EXPECT_EQ(reportJsonl(report).find("latency"), std::string::npos);
    EXPECT_NE(timingJsonl(report).find("latency"), std::string::npos);
    EXPECT_EQ(report.records.size(), items.size());
}

TEST(Fixture, AggregatesAndCompares)
{
    auto records = std::vector<FixtureRecord> {};
    for (int i = 0; i < 100; ++i)
        records.push_back({ "M", 1024, SubstitutionMode::Prediction, "B", "FSP", "f" + std::to_string(i), i < 68 });
    for (int i = 0; i < 100; ++i)
        records.push_back({ "M", 1024, SubstitutionMode::Prediction, "B", "FCP", "c" + std::to_string(i), i < 59 });
    auto const cells = aggregateFixture(records);
    ASSERT_EQ(cells.size(), 3u);
    EXPECT_EQ(cells[0].column, "FSP");
    EXPECT_EQ(cells[1].column, "Overall");
    EXPECT_DOUBLE_EQ(cells[1].value, 63.5);
    EXPECT_DOUBLE_EQ(cells[2].value, 59.0);

    auto published = std::vector<TableCell> { { "M", 1024, SubstitutionMode::Prediction, "B", "Overall", 63.5 },
                                              { "M", 1024, SubstitutionMode::Prediction, "B", "FSP", 68.1 },
                                              { "M", 1024, SubstitutionMode::GroundTruth, "B", "FSP", 70.0 } };
    auto const cmp = compareTables(cells, published, 0.05);
    EXPECT_TRUE(cmp[0].withinTolerance);
    EXPECT_FALSE(cmp[1].withinTolerance);
    EXPECT_FALSE(cmp[2].computed.has_value());
}

TEST(Fixture, ShippedRecordsReproduceHrBenchCells)
{
    auto const dir = croploop::testing::sourceDir() / "data/fixtures";
    auto const computed = aggregateFixture(loadFixtureRecords(dir / "substitution_records.jsonl"));
    auto const published = loadPublishedTable(dir / "substitution_published.json");
    EXPECT_EQ(published.size(), 108u);
    for (auto const& c: compareTables(computed, published, 0.05))
    {
        if (c.published.benchmark == "V*")
            continue;
        EXPECT_TRUE(c.withinTolerance) << c.published.model << " " << c.published.benchmark << " "
                                       << c.published.column;
    }
}

TEST(Fixture, MalformedRecordReportsLine)
{
    auto dir = croploop::testing::TempDir("fixture");
    atomicWriteFile(dir / "r.jsonl", "{\"model\":\"M\"}\n");
    try
    {
        (void)loadFixtureRecords(dir / "r.jsonl");
        FAIL();
    }
    catch (const ParseError& e)
    {
        EXPECT_EQ(e.line(), 1u);
    }
}
