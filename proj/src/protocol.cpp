// SPDX-License-Identifier: Apache-2.0
#include <croploop/protocol.hpp>
#include <croploop/util.hpp>

#include <fmt/format.h>

#include <cctype>
#include <cmath>

namespace croploop
{

namespace
{

    constexpr auto kSystemPrompt = std::string_view(
        "You are a visual assistant that answers questions about an image.\n"
        "The image you see may be downsampled. You can inspect any region at full resolution\n"
        "with the crop tool; the cropped region is returned as a new image.\n"
        "\n"
        "Every reply must start with your reasoning inside <think></think>, followed by exactly one of:\n"
        "  <tool_call>{\"name\":\"crop\",\"bbox\":[x1,y1,x2,y2]}</tool_call>\n"
        "  <answer>your final answer</answer>\n"
        "\n"
        "Box coordinates are integer pixels in the image you were shown, origin at the top-left,\n"
        "with x2 and y2 exclusive. For multiple-choice questions answer with the option letter only.\n");

    auto trim(std::string_view s) -> std::string_view
    {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
            s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
            s.remove_suffix(1);
        return s;
    }

    auto malformed(std::string reason, std::string think = {}) -> ParsedTurn
    {
        return ParsedTurn { std::move(think), Malformed { std::move(reason) } };
    }

    auto parseToolPayload(std::string_view payload, std::string think) -> ParsedTurn
    {
        auto const j = nlohmann::json::parse(payload, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            return malformed("tool_call payload is not a JSON object", std::move(think));
        if (!j.contains("name") || !j["name"].is_string())
            return malformed("tool_call has no name", std::move(think));
        if (j["name"].get<std::string>() != "crop")
            return malformed(fmt::format("unknown tool '{}'", j["name"].get<std::string>()), std::move(think));
        if (!j.contains("bbox") || !j["bbox"].is_array() || j["bbox"].size() != 4)
            return malformed("bbox must be four numbers", std::move(think));
        int coords[4] = {};
        for (std::size_t i = 0; i < 4; ++i)
        {
            auto const& v = j["bbox"][i];
            if (!v.is_number())
                return malformed("bbox must be four numbers", std::move(think));
            auto const d = v.get<double>();
            if (!std::isfinite(d) || std::abs(d) > 1e9)
                return malformed("bbox coordinate out of range", std::move(think));
            coords[i] = int(std::lround(d));
        }
        if (coords[0] >= coords[2] || coords[1] >= coords[3])
            return malformed("degenerate bbox", std::move(think));
        return ParsedTurn { std::move(think),
                            ToolCall { Box { coords[0], coords[1], coords[2], coords[3], {} } } };
    }

    struct Block
    {
        std::string_view body;
        std::string_view rest;
    };

    auto takeBlock(std::string_view s, std::string_view open, std::string_view close) -> std::optional<Block>
    {
        auto const end = s.find(close, open.size());
        if (end == std::string_view::npos)
            return std::nullopt;
        return Block { s.substr(open.size(), end - open.size()), s.substr(end + close.size()) };
    }

} // namespace

auto parseTurn(std::string_view text) -> ParsedTurn
{
    auto s = trim(text);
    if (!s.starts_with("<think>"))
        return malformed("missing think block");
    auto const think = takeBlock(s, "<think>", "</think>");
    if (!think)
        return malformed("unterminated think block");
    auto thinkText = std::string(trim(think->body));
    if (think->body.find("<think>") != std::string_view::npos)
        return malformed("nested think block", std::move(thinkText));

    auto const rest = trim(think->rest);
    if (rest.starts_with("<think>"))
        return malformed("multiple think blocks", std::move(thinkText));

    if (rest.starts_with("<tool_call>"))
    {
        auto const block = takeBlock(rest, "<tool_call>", "</tool_call>");
        if (!block)
            return malformed("unterminated tool_call block", std::move(thinkText));
        if (!trim(block->rest).empty())
            return malformed("trailing content after action", std::move(thinkText));
        return parseToolPayload(trim(block->body), std::move(thinkText));
    }
    if (rest.starts_with("<answer>"))
    {
        auto const block = takeBlock(rest, "<answer>", "</answer>");
        if (!block)
            return malformed("unterminated answer block", std::move(thinkText));
        if (!trim(block->rest).empty())
            return malformed("trailing content after action", std::move(thinkText));
        auto answer = trim(block->body);
        if (answer.empty())
            return malformed("empty answer", std::move(thinkText));
        return ParsedTurn { std::move(thinkText), FinalAnswer { std::string(answer) } };
    }
    if (rest.empty())
        return malformed("missing action block", std::move(thinkText));
    return malformed("unexpected content after think block", std::move(thinkText));
}

auto formatToolCall(std::string_view think, const Box& box) -> std::string
{
    return fmt::format("<think>{}</think><tool_call>{{\"name\":\"crop\",\"bbox\":[{},{},{},{}]}}</tool_call>", think,
                       box.x1, box.y1, box.x2, box.y2);
}

auto formatAnswer(std::string_view think, std::string_view answer) -> std::string
{
    return fmt::format("<think>{}</think><answer>{}</answer>", think, answer);
}

auto toString(Termination t) -> std::string_view
{
    switch (t)
    {
        case Termination::Answer: return "answer";
        case Termination::MaxTurns: return "max_turns";
        case Termination::ProtocolError: return "protocol_error";
    }
    return "protocol_error";
}

auto parseTermination(std::string_view text) -> Termination
{
    if (text == "answer")
        return Termination::Answer;
    if (text == "max_turns")
        return Termination::MaxTurns;
    if (text == "protocol_error")
        return Termination::ProtocolError;
    throw InvalidArgument(fmt::format("unknown termination '{}'", text));
}

auto Trajectory::finalCropBox() const -> std::optional<Box>
{
    if (cropBoxesOriginalSpace.empty())
        return std::nullopt;
    return cropBoxesOriginalSpace.back();
}

auto EpisodeTask::make(std::string instanceId, std::string question, std::shared_ptr<const ImageBuffer> original,
                       std::optional<Dims> selectedDims, std::int64_t globalBudget, PatchGrid grid) -> EpisodeTask
{
    if (!original)
        throw InvalidArgument("episode task needs an original image");
    auto base = selectedDims && *selectedDims != original->dims() ? resizeArea(*original, *selectedDims) : *original;
    auto global = fitToBudget(base, globalBudget, grid);
    global.setId(fmt::format("{}#global", original->id()));
    return EpisodeTask {
        .instanceId = std::move(instanceId),
        .question = std::move(question),
        .original = std::move(original),
        .globalView = std::make_shared<const ImageBuffer>(std::move(global)),
    };
}

auto systemPrompt() -> std::string_view
{
    return kSystemPrompt;
}

auto renderMessages(const EpisodeTask& task, const Trajectory& prefix, const EpisodeConfig& cfg) -> MessageSequence
{
    auto seq = MessageSequence {};
    seq.toolEnabled = cfg.toolEnabled;
    seq.messages.push_back(Message { Role::System, { TextPart { std::string(systemPrompt()) } } });

    auto const& global = *task.globalView;
    auto userText = fmt::format("Image size: {}x{} pixels.\nQuestion: {}", global.width(), global.height(),
                                task.question);
    if (!cfg.toolEnabled)
        userText += "\nThe crop tool is unavailable; answer directly.";
    seq.messages.push_back(Message { Role::User, { ImagePart { task.globalView }, TextPart { std::move(userText) } } });

    auto cropIndex = std::size_t { 0 };
    for (auto const& turn: prefix.turns)
    {
        seq.messages.push_back(Message { Role::Assistant, { TextPart { turn.text } } });
        if (!turn.cropImageId)
            continue;
        auto const& image = prefix.cropImages.at(cropIndex++);
        auto const& box = *turn.cropBox;
        seq.messages.push_back(Message {
            Role::Tool,
            {
                TextPart { fmt::format("Crop of region [{},{},{},{}], shown at {}x{} pixels.", box.x1, box.y1,
                                       box.x2, box.y2, image->width(), image->height()) },
                ImagePart { image },
            },
        });
    }
    return seq;
}

auto contentId(const ImageBuffer& img) -> std::string
{
    auto bytes = std::vector<std::uint8_t> {};
    auto const header = fmt::format("{}x{}:", img.width(), img.height());
    bytes.reserve(header.size() + img.pixels().size());
    bytes.insert(bytes.end(), header.begin(), header.end());
    bytes.insert(bytes.end(), img.pixels().begin(), img.pixels().end());
    return "sha256:" + sha256Hex(bytes);
}

auto runEpisode(Policy& policy, const EpisodeTask& task, const EpisodeConfig& cfg, const EpisodeHooks& hooks)
    -> Trajectory
{
    if (cfg.maxTurns < 1)
        throw InvalidArgument("max_turns must be >= 1");
    if (cfg.globalTokenBudget < 1 || cfg.cropTokenCap < 1)
        throw InvalidArgument("token budgets must be >= 1");

    auto const& original = *task.original;
    auto const& global = *task.globalView;
    auto traj = Trajectory {};
    traj.instanceId = task.instanceId;
    traj.globalDims = global.dims();
    traj.originalDims = original.dims();

    auto const stop = [&](Termination why, std::string reason = {}) {
        traj.terminatedBy = why;
        traj.errorReason = std::move(reason);
        return traj;
    };

    for (int turn = 0; turn < cfg.maxTurns; ++turn)
    {
        auto const messages = renderMessages(task, traj, cfg);
        auto text = std::string {};
        try
        {
            text = policy.complete(messages, cfg.maxResponseTokens);
        }
        catch (const TransportError& e)
        {
            throw PolicyTransportError(e.what(), traj);
        }
        catch (const RemoteError& e)
        {
            throw PolicyTransportError(e.what(), traj);
        }

        auto parsed = parseTurn(text);
        traj.turns.push_back(TurnRecord { std::move(text), parsed, std::nullopt, std::nullopt });

        if (auto const* bad = std::get_if<Malformed>(&parsed.action))
            return stop(Termination::ProtocolError, bad->reason);
        if (auto const* answer = std::get_if<FinalAnswer>(&parsed.action))
        {
            traj.finalAnswer = answer->text;
            return stop(Termination::Answer);
        }

        auto request = std::get<ToolCall>(parsed.action).box;
        if (!cfg.toolEnabled)
            return stop(Termination::ProtocolError, "tool disabled");
        request.space = global.id();
        auto const clamped = clampBox(request, global.dims());
        if (!clamped)
            return stop(Termination::ProtocolError, "crop box outside image");

        auto box = mapBox(*clamped, global.dims(), original.dims(), original.id());
        if (hooks.substituteBox)
        {
            auto replaced = clampBox(hooks.substituteBox(box, turn), original.dims());
            if (!replaced)
                throw OutOfBounds("substituted crop box has no area inside the original image");
            box = *replaced;
            box.space = original.id();
        }

        auto cropped = fitToBudget(crop(original, box), cfg.cropTokenCap, cfg.grid);
        if (hooks.substituteCrop)
            cropped = hooks.substituteCrop(cropped, turn);
        cropped.setId(contentId(cropped));

        auto& record = traj.turns.back();
        record.cropImageId = cropped.id();
        record.cropBox = box;
        traj.cropBoxesOriginalSpace.push_back(box);
        traj.cropImages.push_back(std::make_shared<const ImageBuffer>(std::move(cropped)));
    }
    return stop(Termination::MaxTurns);
}

auto boxToJson(const Box& box) -> nlohmann::json
{
    return nlohmann::json::array({ box.x1, box.y1, box.x2, box.y2 });
}

auto boxFromJson(const nlohmann::json& j, std::string space) -> Box
{
    if (!j.is_array() || j.size() != 4)
        throw InvalidArgument("box must be an array of four integers");
    for (auto const& v: j)
        if (!v.is_number_integer())
            throw InvalidArgument("box must be an array of four integers");
    return Box { j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>(), std::move(space) };
}

namespace
{

    auto actionToJson(const TurnAction& action) -> nlohmann::json
    {
        if (auto const* call = std::get_if<ToolCall>(&action))
            return { { "type", "tool_call" }, { "bbox", boxToJson(call->box) } };
        if (auto const* answer = std::get_if<FinalAnswer>(&action))
            return { { "type", "answer" }, { "text", answer->text } };
        return { { "type", "malformed" }, { "reason", std::get<Malformed>(action).reason } };
    }

    auto dimsToJson(Dims d) -> nlohmann::json { return nlohmann::json::array({ d.width, d.height }); }

    auto dimsFromJson(const nlohmann::json& j) -> Dims { return Dims { j.at(0).get<int>(), j.at(1).get<int>() }; }

} // namespace

auto trajectoryToJson(const Trajectory& traj) -> nlohmann::json
{
    auto turns = nlohmann::json::array();
    for (auto const& t: traj.turns)
    {
        turns.push_back({
            { "text", t.text },
            { "think", t.parsed.think },
            { "action", actionToJson(t.parsed.action) },
            { "crop_image_id", t.cropImageId ? nlohmann::json(*t.cropImageId) : nlohmann::json(nullptr) },
            { "crop_box", t.cropBox ? boxToJson(*t.cropBox) : nlohmann::json(nullptr) },
        });
    }
    auto crops = nlohmann::json::array();
    for (auto const& b: traj.cropBoxesOriginalSpace)
        crops.push_back(boxToJson(b));
    return {
        { "schema", 1 },
        { "instance_id", traj.instanceId },
        { "turns", std::move(turns) },
        { "final_answer", traj.finalAnswer ? nlohmann::json(*traj.finalAnswer) : nlohmann::json(nullptr) },
        { "turn_count", traj.turnCount() },
        { "terminated_by", std::string(toString(traj.terminatedBy)) },
        { "error", traj.errorReason },
        { "crop_boxes_original_space", std::move(crops) },
        { "global_dims", dimsToJson(traj.globalDims) },
        { "original_dims", dimsToJson(traj.originalDims) },
    };
}

auto trajectoryFromJson(const nlohmann::json& j) -> Trajectory
{
    auto traj = Trajectory {};
    traj.instanceId = j.at("instance_id").get<std::string>();
    for (auto const& t: j.at("turns"))
    {
        auto record = TurnRecord {};
        record.text = t.at("text").get<std::string>();
        record.parsed = parseTurn(record.text);
        if (!t.at("crop_image_id").is_null())
            record.cropImageId = t.at("crop_image_id").get<std::string>();
        if (!t.at("crop_box").is_null())
            record.cropBox = boxFromJson(t.at("crop_box"));
        traj.turns.push_back(std::move(record));
    }
    if (!j.at("final_answer").is_null())
        traj.finalAnswer = j.at("final_answer").get<std::string>();
    traj.terminatedBy = parseTermination(j.at("terminated_by").get<std::string>());
    traj.errorReason = j.value("error", std::string {});
    for (auto const& b: j.at("crop_boxes_original_space"))
        traj.cropBoxesOriginalSpace.push_back(boxFromJson(b));
    traj.globalDims = dimsFromJson(j.at("global_dims"));
    traj.originalDims = dimsFromJson(j.at("original_dims"));
    return traj;
}

} // namespace croploop
