// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/datastore.hpp>
#include <croploop/policy.hpp>
#include <croploop/protocol.hpp>
#include <croploop/rewards.hpp>
#include <croploop/toyworld.hpp>

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace croploop
{

enum class SubstitutionMode
{
    Prediction,
    GroundTruth,
    RandomNoise,
};

/// "prediction", "gt", "noise".
[[nodiscard]] auto toString(SubstitutionMode mode) -> std::string_view;
[[nodiscard]] auto parseSubstitutionMode(std::string_view text) -> SubstitutionMode;

/// One evaluation instance with its image in memory.
struct EvalItem
{
    std::string id;
    std::string question;
    std::string answer;
    AnswerKind kind = AnswerKind::Mcq;
    std::shared_ptr<const ImageBuffer> image;
    std::optional<Dims> selectedDims;
    std::optional<GtBoxSet> gt;
    /// Reporting group (benchmark split, source tag).
    std::string subset;
};

[[nodiscard]] auto evalItemFromToy(const SyntheticInstance& inst) -> EvalItem;
/// Loads every image of the dataset; throws ImageMissing.
[[nodiscard]] auto loadEvalItems(const Dataset& dataset) -> std::vector<EvalItem>;

struct DiagnosticsConfig
{
    EpisodeConfig episode;
    SubstitutionMode mode = SubstitutionMode::Prediction;
    std::uint64_t seed = 0;
    /// Ground-truth level used as the substituted crop (1-based, clamped to the deepest level).
    int gtLevel = 2;
    unsigned workers = 1;
};

struct EvalRecord
{
    std::string instanceId;
    std::string subset;
    bool correct = false;
    std::optional<std::string> predicted;
    int turns = 0;
    int toolCalls = 0;
    Termination terminatedBy = Termination::MaxTurns;
    std::string error;
    /// Executed crops in original pixels (after substitution).
    std::vector<Box> boxes;
    /// Largest overlap of any executed crop with B_1; 0 without crops. Absent without ground truth.
    std::optional<double> bestOverlap;
    /// IoU of the final crop with the best-matching B_i; 0 without crops. Absent without ground truth.
    std::optional<double> finalIou;
    /// Wall-clock seconds for the episode; kept out of deterministic outputs.
    double latencySeconds = 0.0;
};

struct EvalReport
{
    SubstitutionMode mode = SubstitutionMode::Prediction;
    std::int64_t globalTokenBudget = 0;
    std::vector<EvalRecord> records;

    /// Fraction correct in [0,1]; 0 for an empty report.
    [[nodiscard]] auto accuracy() const -> double;
    /// Per-subset accuracy keyed by subset label.
    [[nodiscard]] auto subsetAccuracy() const -> std::map<std::string, double>;
    [[nodiscard]] auto meanLatency() const -> double;
    [[nodiscard]] auto ids() const -> std::vector<std::string>;
};

/// Runs every item under `cfg.mode`. GroundTruth mode throws MissingGt when an item lacks boxes.
/// Noise seeds derive from (seed, instance id, turn), so worker count never changes results.
[[nodiscard]] auto substitutionEval(Policy& policy, std::span<const EvalItem> items, const DiagnosticsConfig& cfg)
    -> EvalReport;

/// 100 * (Acc(gt) - Acc(noise)). Throws DatasetMismatch unless both cover the same ids.
[[nodiscard]] auto accDelta(const EvalReport& gt, const EvalReport& noise) -> double;

/// Records whose best overlap with B_1 is <= threshold. Records without overlap values are dropped.
[[nodiscard]] auto subsetLowOverlap(const EvalReport& report, double threshold = 0.2) -> EvalReport;

/// Ids that are wrong with the tool disabled and right with it enabled.
[[nodiscard]] auto subsetNoiseTest(Policy& policy, std::span<const EvalItem> items, const EpisodeConfig& episode,
                                   unsigned workers = 1) -> std::vector<std::string>;

/// Mean of finalIou over records. Throws MissingGt when any record lacks ground truth.
[[nodiscard]] auto meanIou(const EvalReport& report) -> double;

[[nodiscard]] auto recordToJson(const EvalRecord& record, bool withTiming = false) -> nlohmann::json;
/// Canonical JSONL of the records followed by one summary line. Latency is excluded.
[[nodiscard]] auto reportJsonl(const EvalReport& report) -> std::string;
/// Per-instance latency lines.
[[nodiscard]] auto timingJsonl(const EvalReport& report) -> std::string;
[[nodiscard]] auto reportMarkdown(std::span<const EvalReport> reports) -> std::string;

/// One stored per-question outcome from a published evaluation.
struct FixtureRecord
{
    std::string model;
    std::int64_t budget = 0;
    SubstitutionMode mode = SubstitutionMode::Prediction;
    std::string benchmark;
    std::string subset;
    std::string instanceId;
    bool correct = false;
};

[[nodiscard]] auto loadFixtureRecords(const std::filesystem::path& path) -> std::vector<FixtureRecord>;

/// One table cell: accuracy in percent for a subset column or "Overall".
struct TableCell
{
    std::string model;
    std::int64_t budget = 0;
    SubstitutionMode mode = SubstitutionMode::Prediction;
    std::string benchmark;
    std::string column;
    double value = 0.0;
};

/// Subset columns plus an "Overall" column pooled over every record of the benchmark.
[[nodiscard]] auto aggregateFixture(std::span<const FixtureRecord> records) -> std::vector<TableCell>;
/// {"cells":[{"model","budget","mode","benchmark","column","value"}]}.
[[nodiscard]] auto loadPublishedTable(const std::filesystem::path& path) -> std::vector<TableCell>;

struct CellComparison
{
    TableCell published;
    std::optional<double> computed;
    bool withinTolerance = false;
};

[[nodiscard]] auto compareTables(std::span<const TableCell> computed, std::span<const TableCell> published,
                                 double tolerance) -> std::vector<CellComparison>;
[[nodiscard]] auto tableMarkdown(std::span<const TableCell> cells) -> std::string;

} // namespace croploop
