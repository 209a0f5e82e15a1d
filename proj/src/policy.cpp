// SPDX-License-Identifier: Apache-2.0
#include <croploop/error.hpp>
#include <croploop/png_io.hpp>
#include <croploop/policy.hpp>
#include <croploop/util.hpp>

#include <fmt/format.h>

namespace croploop
{

auto toString(Role role) -> std::string_view
{
    switch (role)
    {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
        case Role::Tool: return "tool";
    }
    return "user";
}

auto Message::text() const -> std::string
{
    auto out = std::string {};
    for (auto const& part: parts)
        if (auto const* t = std::get_if<TextPart>(&part))
            out += t->text;
    return out;
}

auto MessageSequence::assistantTurns() const -> int
{
    auto n = 0;
    for (auto const& m: messages)
        n += m.role == Role::Assistant ? 1 : 0;
    return n;
}

auto MessageSequence::globalImage() const -> const ImageBuffer*
{
    for (auto const& m: messages)
    {
        if (m.role != Role::User)
            continue;
        for (auto const& part: m.parts)
            if (auto const* img = std::get_if<ImagePart>(&part))
                return img->image.get();
        return nullptr;
    }
    return nullptr;
}

auto MessageSequence::toolImages() const -> std::vector<const ImageBuffer*>
{
    auto out = std::vector<const ImageBuffer*> {};
    for (auto const& m: messages)
        if (m.role == Role::Tool)
            for (auto const& part: m.parts)
                if (auto const* img = std::get_if<ImagePart>(&part))
                    out.push_back(img->image.get());
    return out;
}

auto messagesToJson(const MessageSequence& messages, ImageEncoding encoding) -> nlohmann::json
{
    auto list = nlohmann::json::array();
    for (auto const& m: messages.messages)
    {
        auto content = nlohmann::json::array();
        for (auto const& part: m.parts)
        {
            if (auto const* t = std::get_if<TextPart>(&part))
            {
                content.push_back({ { "type", "text" }, { "text", t->text } });
                continue;
            }
            auto const& img = *std::get<ImagePart>(part).image;
            if (encoding == ImageEncoding::InlinePng)
            {
                auto const png = encodePng(img);
                content.push_back({
                    { "type", "image_url" },
                    { "image_url", { { "url", "data:image/png;base64," + base64Encode(png) } } },
                    { "width", img.width() },
                    { "height", img.height() },
                });
            }
            else
            {
                content.push_back({
                    { "type", "image_ref" },
                    { "sha256", sha256Hex(img.pixels()) },
                    { "width", img.width() },
                    { "height", img.height() },
                });
            }
        }
        list.push_back({ { "role", std::string(toString(m.role)) }, { "content", std::move(content) } });
    }
    return list;
}

ScriptedPolicy::ScriptedPolicy(std::vector<ScriptRule> rules): _rules(std::move(rules))
{
    if (_rules.empty())
        throw InvalidArgument("scripted policy needs at least one rule");
}

auto ScriptedPolicy::replay(std::vector<std::string> turns) -> ScriptedPolicy
{
    if (turns.empty())
        throw InvalidArgument("replay needs at least one turn");
    auto shared = std::make_shared<const std::vector<std::string>>(std::move(turns));
    return ScriptedPolicy({ ScriptRule {
        .name = "replay",
        .matches = [](const Observation&) { return true; },
        .emit =
            [shared](const Observation& obs) {
                auto const i = std::min(std::size_t(obs.turnIndex), shared->size() - 1);
                return (*shared)[i];
            },
    } });
}

auto ScriptedPolicy::complete(const MessageSequence& messages, int) -> std::string
{
    auto const obs = Observation { messages, messages.assistantTurns() };
    for (auto const& rule: _rules)
        if (rule.matches(obs))
            return rule.emit(obs);
    throw InvalidArgument(fmt::format("no scripted rule matches turn {}", obs.turnIndex));
}

} // namespace croploop
