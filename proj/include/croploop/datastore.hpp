// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/answer.hpp>
#include <croploop/geometry.hpp>
#include <croploop/rewards.hpp>

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace croploop
{

inline constexpr int kSchemaVersion = 1;

enum class Split
{
    Train,
    Eval,
};

[[nodiscard]] auto toString(Split s) -> std::string_view;
[[nodiscard]] auto parseSplit(std::string_view text) -> Split;

struct DataInstance
{
    std::string id;
    std::string question;
    std::string answer;
    AnswerKind answerKind = AnswerKind::Mcq;
    /// As written in the manifest; relative paths resolve against the manifest directory.
    std::string originalImage;
    Dims imageDims;
    std::optional<Dims> selectedDims;
    /// B_1 ... B_n in original pixels, innermost first.
    std::optional<std::vector<Box>> gtBoxes;
    Split split = Split::Eval;
    std::string source;

    /// Throws ValidationError when the boxes are absent-but-required or not nested.
    [[nodiscard]] auto gtSet() const -> std::optional<GtBoxSet>;

    friend auto operator==(const DataInstance&, const DataInstance&) -> bool = default;
};

struct Dataset
{
    /// Directory relative image paths resolve against.
    std::filesystem::path baseDir;
    std::vector<DataInstance> instances;

    [[nodiscard]] auto imagePath(const DataInstance& inst) const -> std::filesystem::path;
    [[nodiscard]] auto find(std::string_view id) const -> const DataInstance*;
};

[[nodiscard]] auto toJson(const DataInstance& inst) -> nlohmann::json;
/// Throws InvalidArgument on missing or unknown keys and wrong types.
[[nodiscard]] auto instanceFromJson(const nlohmann::json& j) -> DataInstance;

/// One canonical line (sorted keys, no trailing newline).
[[nodiscard]] auto canonicalLine(const nlohmann::json& j) -> std::string;

/// JSONL, one instance per line; blank lines are skipped. Throws ParseError with the line number.
[[nodiscard]] auto loadManifest(const std::filesystem::path& path) -> Dataset;
[[nodiscard]] auto parseManifest(std::string_view text, std::filesystem::path baseDir = {}) -> Dataset;
/// Canonical, byte-stable JSONL written by atomic replace.
void saveManifest(const Dataset& dataset, const std::filesystem::path& path);
[[nodiscard]] auto manifestText(const Dataset& dataset) -> std::string;

struct Violation
{
    std::string instanceId;
    std::string field;
    std::string message;

    friend auto operator==(const Violation&, const Violation&) -> bool = default;
};

[[nodiscard]] auto toString(const Violation& v) -> std::string;

struct ValidateOptions
{
    bool checkImages = true;
    double ladderDecay = 0.75;
    int ladderFloor = 224;
};

/// Every invariant breach, in instance order.
[[nodiscard]] auto validate(const Dataset& dataset, const ValidateOptions& options = {}) -> std::vector<Violation>;

/// Throws ImageMissing for the first instance whose image file does not exist.
void requireImages(const Dataset& dataset);

struct AnnotationRecord
{
    std::string instanceId;
    std::string annotator;
    std::vector<Box> boxes;
    /// ISO-8601 UTC.
    std::string timestamp;

    friend auto operator==(const AnnotationRecord&, const AnnotationRecord&) -> bool = default;
};

[[nodiscard]] auto toJson(const AnnotationRecord& rec) -> nlohmann::json;
[[nodiscard]] auto annotationFromJson(const nlohmann::json& j) -> AnnotationRecord;

/// Breaches for a would-be annotation against the image dims.
[[nodiscard]] auto validateAnnotation(const AnnotationRecord& rec, Dims imageDims) -> std::vector<Violation>;

[[nodiscard]] auto loadAnnotations(const std::filesystem::path& path) -> std::vector<AnnotationRecord>;
void saveAnnotations(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path);

} // namespace croploop
