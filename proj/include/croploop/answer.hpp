// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace croploop
{

enum class AnswerKind
{
    Mcq,
    FreeForm,
};

[[nodiscard]] auto toString(AnswerKind kind) -> std::string_view;
[[nodiscard]] auto parseAnswerKind(std::string_view text) -> AnswerKind;

/// Canonical form used both by the accuracy reward and by resolution selection.
///
/// Mcq: the option letter, uppercased, with surrounding parentheses, periods and
/// whitespace removed ("(b)." -> "B"). Text that does not start with an option
/// letter is stripped of those characters and uppercased whole.
///
/// FreeForm: ASCII casefold, whitespace collapsed and trimmed, trailing
/// punctuation (.,!?;:) removed, one leading article (a/an/the) removed.
[[nodiscard]] auto normalizeAnswer(std::string_view text, AnswerKind kind) -> std::string;

[[nodiscard]] auto answersMatch(std::optional<std::string_view> predicted, std::string_view gold, AnswerKind kind)
    -> bool;

} // namespace croploop
