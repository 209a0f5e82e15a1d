// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/grpo.hpp>
#include <croploop/imaging.hpp>
#include <croploop/policy.hpp>
#include <croploop/protocol.hpp>
#include <croploop/rewards.hpp>

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace croploop
{

/// Shape of the synthetic task family.
struct ToySpec
{
    /// Grid side; the image holds G*G cells.
    int grid = 4;
    /// Number of glyph classes (at most 8).
    int classes = 4;
    /// Readability threshold: minimum glyph side, in view pixels, that perception can read.
    int rho = 28;
    int imageSide = 896;

    void validate() const;
    [[nodiscard]] auto cellCount() const noexcept -> int { return grid * grid; }
    /// Rendered glyph side: 2*rho, shrunk to the cell when cells are smaller.
    [[nodiscard]] auto glyphSide() const noexcept -> int;
};

/// Answer returned by perception when no glyph is readable. Never a class label.
inline constexpr auto kToyDistractor = std::string_view("unknown");

struct SyntheticInstance
{
    std::string id;
    ToySpec spec;
    std::shared_ptr<const ImageBuffer> image;
    int targetRow = 0;
    int targetCol = 0;
    int classIndex = 0;
    /// B_1 = glyph bounds, B_2 = target cell bounds.
    GtBoxSet gt;
    std::string question;
    /// Option letter of the glyph class ("A", "B", ...).
    std::string answer;

    [[nodiscard]] auto targetCell() const noexcept -> int { return targetRow * spec.grid + targetCol; }
};

[[nodiscard]] auto toyLabel(int classIndex) -> std::string;
[[nodiscard]] auto toyPaletteColor(int classIndex) -> std::array<std::uint8_t, 3>;

/// Deterministic per seed: grey canvas, one solid glyph of a palette colour at a
/// uniform position inside a uniformly chosen cell.
[[nodiscard]] auto genTask(std::uint64_t seed, const ToySpec& spec = {}) -> SyntheticInstance;

/// Cell bounds in a view of `dims`: columns split at floor(c*w/G).
[[nodiscard]] auto toyCellBox(int cell, int grid, Dims dims, std::string space = {}) -> Box;
/// Cell containing the box centre.
[[nodiscard]] auto toyCellOf(const Box& box, int grid, Dims dims) -> int;

/// Label of the glyph whose longest horizontal run of its palette colour in
/// `view` reaches rho pixels; kToyDistractor otherwise.
[[nodiscard]] auto perceive(const ImageBuffer& view, const ToySpec& spec) -> std::string;

/// Cell of the largest non-background blob in a (possibly blurred) global view.
[[nodiscard]] auto locateSalientCell(const ImageBuffer& view, int grid) -> std::optional<int>;

enum class ReadFrom
{
    /// Only the global view.
    Global,
    /// Only the most recent crop.
    LatestCrop,
    /// Any view that is readable, newest crop first.
    AnyView,
};

[[nodiscard]] auto toString(ReadFrom r) -> std::string_view;
[[nodiscard]] auto parseReadFrom(std::string_view text) -> ReadFrom;

/// Scripted toy agent. Turn 0 either answers from the global view or crops
/// one cell; later turns answer from the views allowed by `readFrom`.
class ToyActor final: public Policy
{
  public:
    enum class Opening
    {
        AnswerNow,
        CropCell,
        /// Crop the cell located from the global view.
        CropSalient,
    };

    ToyActor(ToySpec spec, Opening opening, int cell, ReadFrom readFrom);

    static auto answerNow(ToySpec spec) -> ToyActor { return { spec, Opening::AnswerNow, 0, ReadFrom::Global }; }
    static auto cropCell(ToySpec spec, int cell, ReadFrom readFrom) -> ToyActor
    {
        return { spec, Opening::CropCell, cell, readFrom };
    }
    static auto cropSalient(ToySpec spec, ReadFrom readFrom) -> ToyActor
    {
        return { spec, Opening::CropSalient, 0, readFrom };
    }

    auto complete(const MessageSequence& messages, int maxTokens) -> std::string override;

  private:
    ToySpec _spec;
    Opening _opening;
    int _cell;
    ReadFrom _readFrom;
};

/// Tabular softmax policy over (crop cell 0..G*G-1, answer now).
class ToyPolicy final: public DifferentiablePolicy
{
  public:
    explicit ToyPolicy(int grid);

    [[nodiscard]] auto parameters() const -> std::vector<double> override;
    void setParameters(std::span<const double> params) override;
    [[nodiscard]] auto logProb(const Trajectory& traj) const -> double override;
    void accumulateLogProbGradient(const Trajectory& traj, double scale, std::span<double> grad) const override;

    [[nodiscard]] auto actionCount() const noexcept -> int { return _grid * _grid + 1; }
    [[nodiscard]] auto answerNowAction() const noexcept -> int { return _grid * _grid; }
    [[nodiscard]] auto probabilities() const -> std::vector<double>;
    /// Action index a trajectory took: the first crop's cell, or answerNowAction().
    [[nodiscard]] auto actionOf(const Trajectory& traj) const -> int;
    [[nodiscard]] auto sample(std::mt19937_64& rng) const -> int;

  private:
    int _grid;
    /// G*G cell logits followed by the answer-now bias.
    std::vector<double> _logits;
};

struct ToyTrainConfig
{
    ToySpec spec;
    bool gapOn = true;
    int iterations = 500;
    std::uint64_t seed = 0;
    int groupSize = 16;
    double learningRate = 0.1;
    double clipEpsilon = 0.2;
    /// Global-view budget with the information gap on (glyph unreadable) and off (readable).
    std::int64_t gapOnGlobalBudget = 64;
    std::int64_t gapOffGlobalBudget = 1024;
    std::int64_t cropTokenCap = 16384;
    int maxTurns = 5;
    ReadFrom readFrom = ReadFrom::AnyView;
    RewardConfig rewards;
    unsigned workers = 1;

    void validate() const;
    [[nodiscard]] auto globalBudget() const noexcept -> std::int64_t
    {
        return gapOn ? gapOnGlobalBudget : gapOffGlobalBudget;
    }
    [[nodiscard]] auto episodeConfig() const -> EpisodeConfig;
};

[[nodiscard]] auto toJson(const ToyTrainConfig& cfg) -> nlohmann::json;
/// Applies the keys present in `j` onto `cfg`; unknown keys throw InvalidArgument.
void applyJson(ToyTrainConfig& cfg, const nlohmann::json& j);

struct IterationMetrics
{
    int iteration = 0;
    double rewardMean = 0.0;
    double accuracy = 0.0;
    /// Share of rollouts with at least one crop.
    double toolCallRate = 0.0;
    double meanToolCalls = 0.0;
    /// Mean overlap of the final crop with B_1; rollouts without a crop count 0.
    double meanOverlap = 0.0;
    /// Policy probabilities after this iteration's update.
    double pCorrectCell = 0.0;
    double pToolCall = 0.0;
    StepReport step;
};

struct TrainReport
{
    ToyTrainConfig config;
    std::string instanceId;
    int targetCell = 0;
    double initialPCorrectCell = 0.0;
    double initialPToolCall = 0.0;
    std::vector<IterationMetrics> iterations;
    std::vector<double> finalProbabilities;

    [[nodiscard]] auto finalPCorrectCell() const -> double;
    /// Expected tool-call rate of the final policy (1 - P(answer now)).
    [[nodiscard]] auto finalPToolCall() const -> double;
    /// Mean reward over iterations [begin, end) given as fractions of the run.
    [[nodiscard]] auto meanReward(double fromFraction, double toFraction) const -> double;
};

/// GRPO on one generated instance: each iteration samples a group of first
/// actions, plays them through the episode protocol, scores Stage-I rewards
/// and takes one clipped policy-gradient step.
[[nodiscard]] auto trainToy(const ToyTrainConfig& cfg) -> TrainReport;

/// JSONL: a config line, one line per iteration, then a summary line.
[[nodiscard]] auto trainReportJsonl(const TrainReport& report) -> std::string;

struct ActionOutcome
{
    int action = 0;
    bool cropsTarget = false;
    double acc = 0.0;
    double total = 0.0;
};

/// Plays every first action of the tabular policy once and scores it.
[[nodiscard]] auto exhaustiveActionOutcomes(const SyntheticInstance& inst, const ToyTrainConfig& cfg)
    -> std::vector<ActionOutcome>;

} // namespace croploop
