// SPDX-License-Identifier: Apache-2.0
#include <croploop/datastore.hpp>
#include <croploop/error.hpp>
#include <croploop/png_io.hpp>
#include <croploop/protocol.hpp>
#include <croploop/resolution.hpp>
#include <croploop/util.hpp>

#include <fmt/format.h>

#include <set>
#include <sstream>

namespace croploop
{

auto toString(Split s) -> std::string_view
{
    return s == Split::Train ? "train" : "eval";
}

auto parseSplit(std::string_view text) -> Split
{
    if (text == "train")
        return Split::Train;
    if (text == "eval")
        return Split::Eval;
    throw InvalidArgument(fmt::format("unknown split '{}'", text));
}

auto DataInstance::gtSet() const -> std::optional<GtBoxSet>
{
    if (!gtBoxes)
        return std::nullopt;
    return GtBoxSet(*gtBoxes);
}

auto Dataset::imagePath(const DataInstance& inst) const -> std::filesystem::path
{
    auto const p = std::filesystem::path(inst.originalImage);
    return p.is_absolute() || baseDir.empty() ? p : baseDir / p;
}

auto Dataset::find(std::string_view id) const -> const DataInstance*
{
    for (auto const& inst: instances)
        if (inst.id == id)
            return &inst;
    return nullptr;
}

namespace
{

    auto dimsJson(Dims d) -> nlohmann::json { return nlohmann::json::array({ d.width, d.height }); }

    auto dimsFrom(const nlohmann::json& j, std::string_view field) -> Dims
    {
        if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
            throw InvalidArgument(fmt::format("{} must be [width, height]", field));
        return Dims { j[0].get<int>(), j[1].get<int>() };
    }

    auto stringField(const nlohmann::json& j, const char* key) -> std::string
    {
        auto it = j.find(key);
        if (it == j.end() || !it->is_string())
            throw InvalidArgument(fmt::format("field '{}' must be a string", key));
        return it->get<std::string>();
    }

    void rejectUnknownKeys(const nlohmann::json& j, std::initializer_list<std::string_view> known)
    {
        for (auto const& [key, value]: j.items())
        {
            auto found = false;
            for (auto k: known)
                found = found || k == key;
            if (!found)
                throw InvalidArgument(fmt::format("unknown field '{}'", key));
        }
    }

    void checkSchema(const nlohmann::json& j)
    {
        auto it = j.find("schema");
        if (it == j.end() || !it->is_number_integer())
            throw InvalidArgument("field 'schema' must be an integer");
        if (it->get<int>() != kSchemaVersion)
            throw InvalidArgument(fmt::format("unsupported schema {}", it->get<int>()));
    }

    auto boxesJson(const std::vector<Box>& boxes) -> nlohmann::json
    {
        auto out = nlohmann::json::array();
        for (auto const& b: boxes)
            out.push_back(boxToJson(b));
        return out;
    }

    auto boxesFrom(const nlohmann::json& j, std::string_view field) -> std::vector<Box>
    {
        if (!j.is_array())
            throw InvalidArgument(fmt::format("{} must be a list of boxes", field));
        auto out = std::vector<Box> {};
        for (auto const& b: j)
            out.push_back(boxFromJson(b));
        return out;
    }

    template <typename Parse>
    auto parseLines(std::string_view text, Parse&& parse)
    {
        auto stream = std::istringstream(std::string(text));
        auto line = std::string {};
        auto number = std::size_t { 0 };
        while (std::getline(stream, line))
        {
            ++number;
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (line.find_first_not_of(" \t") == std::string::npos)
                continue;
            auto const j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                throw ParseError("not a JSON object", number);
            try
            {
                parse(j);
            }
            catch (const InvalidArgument& e)
            {
                throw ParseError(e.what(), number);
            }
            catch (const nlohmann::json::exception& e)
            {
                throw ParseError(e.what(), number);
            }
        }
    }

} // namespace

auto toJson(const DataInstance& inst) -> nlohmann::json
{
    auto j = nlohmann::json {
        { "schema", kSchemaVersion },
        { "id", inst.id },
        { "question", inst.question },
        { "answer", inst.answer },
        { "answer_kind", std::string(toString(inst.answerKind)) },
        { "original_image", inst.originalImage },
        { "image_dims", dimsJson(inst.imageDims) },
        { "split", std::string(toString(inst.split)) },
        { "source", inst.source },
    };
    if (inst.selectedDims)
        j["selected_dims"] = dimsJson(*inst.selectedDims);
    if (inst.gtBoxes)
        j["gt_boxes"] = boxesJson(*inst.gtBoxes);
    return j;
}

auto instanceFromJson(const nlohmann::json& j) -> DataInstance
{
    if (!j.is_object())
        throw InvalidArgument("instance must be a JSON object");
    rejectUnknownKeys(j, { "schema", "id", "question", "answer", "answer_kind", "original_image", "image_dims",
                           "selected_dims", "gt_boxes", "split", "source" });
    checkSchema(j);
    auto inst = DataInstance {};
    inst.id = stringField(j, "id");
    inst.question = stringField(j, "question");
    inst.answer = stringField(j, "answer");
    inst.answerKind = parseAnswerKind(stringField(j, "answer_kind"));
    inst.originalImage = stringField(j, "original_image");
    if (!j.contains("image_dims"))
        throw InvalidArgument("field 'image_dims' is required");
    inst.imageDims = dimsFrom(j["image_dims"], "image_dims");
    if (j.contains("selected_dims") && !j["selected_dims"].is_null())
        inst.selectedDims = dimsFrom(j["selected_dims"], "selected_dims");
    if (j.contains("gt_boxes") && !j["gt_boxes"].is_null())
        inst.gtBoxes = boxesFrom(j["gt_boxes"], "gt_boxes");
    inst.split = parseSplit(j.contains("split") ? stringField(j, "split") : "eval");
    inst.source = j.contains("source") ? stringField(j, "source") : "";
    return inst;
}

auto canonicalLine(const nlohmann::json& j) -> std::string
{
    // nlohmann objects are std::map backed, so keys serialize sorted.
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

auto parseManifest(std::string_view text, std::filesystem::path baseDir) -> Dataset
{
    auto ds = Dataset { std::move(baseDir), {} };
    parseLines(text, [&](const nlohmann::json& j) { ds.instances.push_back(instanceFromJson(j)); });
    return ds;
}

auto loadManifest(const std::filesystem::path& path) -> Dataset
{
    return parseManifest(readTextFile(path), path.parent_path());
}

auto manifestText(const Dataset& dataset) -> std::string
{
    auto out = std::string {};
    for (auto const& inst: dataset.instances)
    {
        out += canonicalLine(toJson(inst));
        out += '\n';
    }
    return out;
}

void saveManifest(const Dataset& dataset, const std::filesystem::path& path)
{
    atomicWriteFile(path, manifestText(dataset));
}

auto toString(const Violation& v) -> std::string
{
    return fmt::format("{}: {}: {}", v.instanceId, v.field, v.message);
}

namespace
{

    void checkBoxes(const std::string& id, const std::vector<Box>& boxes, Dims dims, std::string_view field,
                    std::vector<Violation>& out)
    {
        if (boxes.empty())
            out.push_back({ id, std::string(field), "at least one box is required" });
        for (std::size_t i = 0; i < boxes.size(); ++i)
            if (!boxes[i].validIn(dims))
                out.push_back({ id, std::string(field),
                                fmt::format("box {} [{},{},{},{}] is outside {}x{} or degenerate", i, boxes[i].x1,
                                            boxes[i].y1, boxes[i].x2, boxes[i].y2, dims.width, dims.height) });
        if (auto const bad = nestingViolation(boxes))
            out.push_back({ id, std::string(field), fmt::format("nesting violated at index {}", *bad) });
    }

} // namespace

auto validate(const Dataset& dataset, const ValidateOptions& options) -> std::vector<Violation>
{
    auto out = std::vector<Violation> {};
    auto seen = std::set<std::string> {};
    for (auto const& inst: dataset.instances)
    {
        auto const& id = inst.id;
        if (id.empty())
            out.push_back({ id, "id", "must not be empty" });
        else if (!seen.insert(id).second)
            out.push_back({ id, "id", "duplicate id" });
        if (inst.question.empty())
            out.push_back({ id, "question", "must not be empty" });
        if (inst.answer.empty())
            out.push_back({ id, "answer", "must not be empty" });
        if (inst.imageDims.width < 1 || inst.imageDims.height < 1)
        {
            out.push_back({ id, "image_dims", "must be positive" });
            continue;
        }

        if (options.checkImages)
        {
            auto const path = dataset.imagePath(inst);
            try
            {
                auto const actual = pngDims(path);
                if (actual != inst.imageDims)
                    out.push_back({ id, "image_dims",
                                    fmt::format("recorded {}x{} but the image is {}x{}", inst.imageDims.width,
                                                inst.imageDims.height, actual.width, actual.height) });
            }
            catch (const ImageMissing& e)
            {
                out.push_back({ id, "original_image", e.what() });
            }
            catch (const Error& e)
            {
                out.push_back({ id, "original_image", e.what() });
            }
        }

        if (inst.selectedDims)
        {
            auto const ladder = buildLadder(inst.imageDims, options.ladderDecay,
                                            std::min(options.ladderFloor, std::max(28, inst.imageDims.longSide())));
            auto const& rungs = ladder.rungs;
            if (std::find(rungs.begin(), rungs.end(), *inst.selectedDims) == rungs.end())
                out.push_back({ id, "selected_dims",
                                fmt::format("{}x{} is not a rung of the resolution ladder", inst.selectedDims->width,
                                            inst.selectedDims->height) });
        }
        if (inst.gtBoxes)
            checkBoxes(id, *inst.gtBoxes, inst.imageDims, "gt_boxes", out);
    }
    return out;
}

void requireImages(const Dataset& dataset)
{
    for (auto const& inst: dataset.instances)
    {
        auto const path = dataset.imagePath(inst);
        if (!std::filesystem::is_regular_file(path))
            throw ImageMissing(path.string());
    }
}

auto toJson(const AnnotationRecord& rec) -> nlohmann::json
{
    return {
        { "schema", kSchemaVersion },   { "instance_id", rec.instanceId }, { "annotator", rec.annotator },
        { "boxes", boxesJson(rec.boxes) }, { "timestamp", rec.timestamp },
    };
}

auto annotationFromJson(const nlohmann::json& j) -> AnnotationRecord
{
    if (!j.is_object())
        throw InvalidArgument("annotation must be a JSON object");
    rejectUnknownKeys(j, { "schema", "instance_id", "annotator", "boxes", "timestamp" });
    checkSchema(j);
    return AnnotationRecord {
        .instanceId = stringField(j, "instance_id"),
        .annotator = stringField(j, "annotator"),
        .boxes = boxesFrom(j.at("boxes"), "boxes"),
        .timestamp = stringField(j, "timestamp"),
    };
}

auto validateAnnotation(const AnnotationRecord& rec, Dims imageDims) -> std::vector<Violation>
{
    auto out = std::vector<Violation> {};
    if (rec.annotator.empty())
        out.push_back({ rec.instanceId, "annotator", "must not be empty" });
    checkBoxes(rec.instanceId, rec.boxes, imageDims, "boxes", out);
    return out;
}

auto loadAnnotations(const std::filesystem::path& path) -> std::vector<AnnotationRecord>
{
    auto out = std::vector<AnnotationRecord> {};
    if (!std::filesystem::exists(path))
        return out;
    parseLines(readTextFile(path), [&](const nlohmann::json& j) { out.push_back(annotationFromJson(j)); });
    return out;
}

void saveAnnotations(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path)
{
    auto text = std::string {};
    for (auto const& r: records)
    {
        text += canonicalLine(toJson(r));
        text += '\n';
    }
    atomicWriteFile(path, text);
}

} // namespace croploop
