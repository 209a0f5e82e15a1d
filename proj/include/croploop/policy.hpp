// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/imaging.hpp>

#include <json.hpp>

#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace croploop
{

enum class Role
{
    System,
    User,
    Assistant,
    Tool,
};

[[nodiscard]] auto toString(Role role) -> std::string_view;

struct TextPart
{
    std::string text;
};

struct ImagePart
{
    std::shared_ptr<const ImageBuffer> image;
};

using MessagePart = std::variant<TextPart, ImagePart>;

struct Message
{
    Role role = Role::User;
    std::vector<MessagePart> parts;

    [[nodiscard]] auto text() const -> std::string;
};

/// Conversation handed to a policy: system prompt, the question with the global
/// view, then alternating assistant turns and tool-result crops.
struct MessageSequence
{
    std::vector<Message> messages;
    /// False when the episode forbids crops; the user message says so as well.
    bool toolEnabled = true;

    [[nodiscard]] auto size() const noexcept -> std::size_t { return messages.size(); }
    [[nodiscard]] auto assistantTurns() const -> int;
    /// First image of the first user message.
    [[nodiscard]] auto globalImage() const -> const ImageBuffer*;
    /// Images attached to tool messages, oldest first.
    [[nodiscard]] auto toolImages() const -> std::vector<const ImageBuffer*>;
};

/// How images are written into the wire JSON.
enum class ImageEncoding
{
    /// data:image/png;base64 URL, as sent to real backends.
    InlinePng,
    /// sha256 of the raw pixels plus dims; compact and stable for logs and golden files.
    Digest,
};

/// Chat-completions style body fragment: {"messages":[{"role":..,"content":[..]}]}.
[[nodiscard]] auto messagesToJson(const MessageSequence& messages, ImageEncoding encoding) -> nlohmann::json;

/// Anything that turns a conversation into the next assistant turn.
class Policy
{
  public:
    virtual ~Policy() = default;
    virtual auto complete(const MessageSequence& messages, int maxTokens) -> std::string = 0;
};

/// What a scripted rule sees.
struct Observation
{
    const MessageSequence& messages;
    int turnIndex = 0;
};

struct ScriptRule
{
    std::string name;
    std::function<bool(const Observation&)> matches;
    std::function<std::string(const Observation&)> emit;
};

/// Deterministic rule-driven policy: the first matching rule produces the turn.
/// Rules must be total; a state no rule matches raises InvalidArgument.
class ScriptedPolicy final: public Policy
{
  public:
    explicit ScriptedPolicy(std::vector<ScriptRule> rules);

    /// Emits turns[i] at turn i and repeats the last turn afterwards.
    static auto replay(std::vector<std::string> turns) -> ScriptedPolicy;

    auto complete(const MessageSequence& messages, int maxTokens) -> std::string override;

  private:
    std::vector<ScriptRule> _rules;
};

} // namespace croploop
