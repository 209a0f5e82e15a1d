// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <croploop/error.hpp>
#include <croploop/protocol.hpp>
#include <croploop/rewards.hpp>

#include <gtest/gtest.h>

using namespace croploop;
using namespace croploop::testing;

namespace
{

auto validTurn(bool crop) -> TurnRecord
{
    auto t = TurnRecord {};
    t.text = crop ? formatToolCall("look", Box { 0, 0, 10, 10 }) : formatAnswer("done", "B");
    t.parsed = parseTurn(t.text);
    return t;
}

auto trajectory(std::optional<std::string> answer, int crops, bool malformed = false) -> Trajectory
{
    auto traj = Trajectory {};
    traj.originalDims = { 100, 100 };
    traj.globalDims = { 100, 100 };
    for (int i = 0; i < crops; ++i)
    {
        traj.turns.push_back(validTurn(true));
        traj.cropBoxesOriginalSpace.push_back(Box { 10 * i, 0, 10 * i + 10, 10, "o" });
    }
    if (malformed)
    {
        auto t = TurnRecord {};
        t.text = "<answer>B</answer>";
        t.parsed = parseTurn(t.text);
        traj.turns.push_back(t);
        traj.terminatedBy = Termination::ProtocolError;
        traj.errorReason = "missing think block";
    }
    else if (answer)
    {
        traj.turns.push_back(validTurn(false));
        traj.finalAnswer = answer;
        traj.terminatedBy = Termination::Answer;
    }
    return traj;
}

} // namespace

TEST(Accuracy, Normalization)
{
    EXPECT_EQ(accuracyReward("(B)", "B", AnswerKind::Mcq), 1.0);
    EXPECT_EQ(accuracyReward(std::nullopt, "B", AnswerKind::Mcq), 0.0);
    EXPECT_EQ(accuracyReward("the red car", "Red car", AnswerKind::FreeForm), 1.0);
    EXPECT_EQ(accuracyReward("C", "B", AnswerKind::Mcq), 0.0);
}

TEST(Format, Rules)
{
    EXPECT_EQ(formatReward(trajectory("B", 1)), 1.0);
    EXPECT_EQ(formatReward(trajectory(std::nullopt, 0, true)), 0.0);
    auto maxTurns = trajectory(std::nullopt, 5);
    maxTurns.terminatedBy = Termination::MaxTurns;
    EXPECT_EQ(formatReward(maxTurns), 1.0);
}

TEST(Stage1, GateTable)
{
    EXPECT_DOUBLE_EQ(stage1Total(trajectory("B", 1), "B", AnswerKind::Mcq).total, 2.2);
    EXPECT_DOUBLE_EQ(stage1Total(trajectory("B", 0), "B", AnswerKind::Mcq).total, 1.0);
    EXPECT_DOUBLE_EQ(stage1Total(trajectory("C", 2), "B", AnswerKind::Mcq).total, 0.2);
    EXPECT_DOUBLE_EQ(stage1Total(trajectory(std::nullopt, 1, true), "B", AnswerKind::Mcq).total, 0.0);
}

TEST(Stage1, ValuesStayInEnumeratedSet)
{
    // Binary sub-rewards under default weights can only produce these totals.
    auto const allowed = std::vector<double> { 0.0, 0.2, 0.8, 1.0, 2.2 };
    for (auto const& answer: { std::optional<std::string>("B"), std::optional<std::string>("C"),
                               std::optional<std::string>() })
        for (int crops = 0; crops < 3; ++crops)
            for (bool malformed: { false, true })
            {
                auto const total = stage1Total(trajectory(answer, crops, malformed), "B", AnswerKind::Mcq).total;
                auto found = false;
                for (auto v: allowed)
                    found = found || std::abs(v - total) < 1e-12;
                EXPECT_TRUE(found) << total;
            }
}

TEST(Geometry, IouOverlapExamples)
{
    auto const a = Box { 0, 0, 10, 10 };
    auto const b = Box { 5, 5, 15, 15 };
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(iou(a, Box { 20, 20, 30, 30 }), 0.0);
    EXPECT_DOUBLE_EQ(iou(a, b), 25.0 / 175.0);
    EXPECT_DOUBLE_EQ(overlap(Box { 0, 0, 20, 20 }, b), 1.0);
    EXPECT_DOUBLE_EQ(overlap(a, b), 0.25);
    EXPECT_DOUBLE_EQ(overlap(a, Box { 40, 40, 50, 50 }), 0.0);
}

TEST(Geometry, MatchesPixelRasterizationOracle)
{
    auto const boxes = stratifiedBoxes(8, 1);
    auto rasters = std::vector<Raster> {};
    for (auto const& b: boxes)
        rasters.push_back(rasterize(b));
    auto mismatches = 0;
    for (std::size_t i = 0; i < boxes.size(); ++i)
        for (std::size_t j = 0; j < boxes.size(); ++j)
        {
            auto const inter = pixelIntersection(rasters[i], rasters[j]);
            auto const ai = pixelCount(rasters[i]), aj = pixelCount(rasters[j]);
            auto const expectedIou = double(inter) / double(ai + aj - inter);
            auto const expectedOverlap = double(inter) / double(aj);
            mismatches += iou(boxes[i], boxes[j]) == expectedIou ? 0 : 1;
            mismatches += overlap(boxes[i], boxes[j]) == expectedOverlap ? 0 : 1;
        }
    EXPECT_EQ(mismatches, 0);
}

TEST(Geometry, SymmetryAndBounds)
{
    auto const boxes = stratifiedBoxes(2, 9);
    for (auto const& a: boxes)
        for (auto const& b: boxes)
        {
            ASSERT_EQ(iou(a, b), iou(b, a));
            ASSERT_LE(iou(a, b), std::min(overlap(a, b), overlap(b, a)) + 1e-15);
            ASSERT_EQ(overlap(a, b) == 1.0, contains(a, b));
        }
}

TEST(Geometry, ScaleInvariance)
{
    auto const gt = GtBoxSet({ Box { 3, 4, 9, 10 }, Box { 2, 2, 20, 15 } });
    auto const bp = Box { 1, 3, 12, 11 };
    auto const k = 7;
    auto const scale = [k](const Box& b) { return Box { b.x1 * k, b.y1 * k, b.x2 * k, b.y2 * k }; };
    auto const gtK = GtBoxSet({ scale(gt.level(1)), scale(gt.level(2)) });
    EXPECT_DOUBLE_EQ(iou(bp, gt.level(2)), iou(scale(bp), gtK.level(2)));
    EXPECT_DOUBLE_EQ(overlap(bp, gt.level(1)), overlap(scale(bp), gtK.level(1)));
    EXPECT_NEAR(l1Reward(bp, gt, { 40, 30 }), l1Reward(scale(bp), gtK, { 40 * k, 30 * k }), 1e-12);
}

TEST(GtBoxSet, Validation)
{
    EXPECT_THROW(GtBoxSet({}), ValidationError);
    EXPECT_THROW(GtBoxSet({ Box { 0, 0, 0, 5 } }), ValidationError);
    try
    {
        (void)GtBoxSet({ Box { 0, 0, 50, 50 }, Box { 10, 10, 20, 20 } });
        FAIL();
    }
    catch (const ValidationError& e)
    {
        EXPECT_NE(std::string(e.what()).find("nesting violated at index 1"), std::string::npos);
    }
}

TEST(IouReward, GateAtTau)
{
    auto const b1 = Box { 0, 0, 10, 10 };
    auto const b2 = Box { 0, 0, 20, 20 };
    auto const gt = GtBoxSet({ b1, b2 });
    EXPECT_DOUBLE_EQ(iouReward(b2, gt, 0.9), 1.0);
    // bp inside B_1 covering 80 of its 100 pixels.
    EXPECT_DOUBLE_EQ(iouReward(Box { 0, 0, 10, 8 }, gt, 0.9), 0.0);
    // 89 and 91 percent coverage around the gate.
    auto const wide = GtBoxSet({ Box { 0, 0, 100, 1 } });
    EXPECT_DOUBLE_EQ(iouReward(Box { 0, 0, 89, 1 }, wide, 0.9), 0.0);
    EXPECT_DOUBLE_EQ(iouReward(Box { 0, 0, 91, 1 }, wide, 0.9), 0.91);
    EXPECT_DOUBLE_EQ(iouReward(Box { 0, 0, 90, 1 }, wide, 0.9), 0.0);
}

TEST(IouReward, LooseBoxAroundOutermost)
{
    auto const gt = GtBoxSet({ Box { 4, 4, 6, 6 }, Box { 0, 0, 10, 10 } });
    EXPECT_DOUBLE_EQ(iouReward(Box { 0, 0, 20, 10 }, gt, 0.9), 0.5);
}

TEST(L1Reward, Examples)
{
    auto const gt = GtBoxSet({ Box { 0, 0, 1, 1 } });
    EXPECT_DOUBLE_EQ(l1Reward(Box { 0, 0, 1, 1 }, gt, { 100, 100 }), 1.0);
    EXPECT_DOUBLE_EQ(l1Reward(Box { 99, 0, 100, 1 }, gt, { 100, 100 }), 0.505);
    auto const chain = GtBoxSet({ Box { 0, 0, 1, 1 }, Box { 0, 0, 60, 60 } });
    EXPECT_DOUBLE_EQ(l1Reward(Box { 0, 0, 60, 60 }, chain, { 100, 100 }), 1.0);
}

TEST(GeoReward, ConvexCombination)
{
    auto const gt = GtBoxSet({ Box { 0, 0, 10, 10 }, Box { 0, 0, 30, 30 } });
    auto const bp = Box { 0, 0, 12, 11 };
    auto cfg = RewardConfig {};
    cfg.omega = 1.0;
    EXPECT_DOUBLE_EQ(geoReward(bp, gt, { 100, 100 }, cfg), iouReward(bp, gt, 0.9));
    cfg.omega = 0.0;
    EXPECT_DOUBLE_EQ(geoReward(bp, gt, { 100, 100 }, cfg), l1Reward(bp, gt, { 100, 100 }));
    cfg.omega = 0.5;
    EXPECT_DOUBLE_EQ(geoReward(gt.level(1), gt, { 100, 100 }, cfg), 1.0);
}

TEST(Stage2, Composition)
{
    auto const gt = std::optional<GtBoxSet>(GtBoxSet({ Box { 0, 0, 10, 10, "o" }, Box { 0, 0, 40, 40, "o" } }));
    auto correct = trajectory("B", 1);
    correct.cropBoxesOriginalSpace = { Box { 0, 0, 10, 10, "o" } };
    EXPECT_DOUBLE_EQ(stage2Total(correct, "B", AnswerKind::Mcq, gt).total, 3.2);
    EXPECT_DOUBLE_EQ(stage2Total(trajectory("B", 0), "B", AnswerKind::Mcq, gt).total, 1.0);
    auto wrong = correct;
    wrong.finalAnswer = "C";
    EXPECT_DOUBLE_EQ(stage2Total(wrong, "B", AnswerKind::Mcq, gt).total, 1.2);
    EXPECT_THROW((void)stage2Total(correct, "B", AnswerKind::Mcq, std::nullopt), MissingGt);
}

TEST(RewardConfig, JsonRoundTripAndValidation)
{
    auto cfg = RewardConfig {};
    cfg.omega = 0.25;
    auto copy = RewardConfig {};
    applyJson(copy, toJson(cfg));
    EXPECT_DOUBLE_EQ(copy.omega, 0.25);
    EXPECT_THROW(applyJson(copy, nlohmann::json { { "bogus", 1 } }), InvalidArgument);
    cfg.tau = 1.5;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
}
