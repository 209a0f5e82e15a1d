// SPDX-License-Identifier: Apache-2.0
#include <croploop/answer.hpp>
#include <croploop/error.hpp>

#include <algorithm>
#include <array>
#include <cctype>

namespace croploop
{

auto toString(AnswerKind kind) -> std::string_view
{
    return kind == AnswerKind::Mcq ? "mcq" : "free_form";
}

auto parseAnswerKind(std::string_view text) -> AnswerKind
{
    if (text == "mcq")
        return AnswerKind::Mcq;
    if (text == "free_form")
        return AnswerKind::FreeForm;
    throw InvalidArgument("unknown answer kind '" + std::string(text) + "'");
}

namespace
{

    auto isSpace(char c) -> bool { return std::isspace(static_cast<unsigned char>(c)) != 0; }
    auto isAlpha(char c) -> bool { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
    auto upper(char c) -> char { return char(std::toupper(static_cast<unsigned char>(c))); }
    auto lower(char c) -> char { return char(std::tolower(static_cast<unsigned char>(c))); }

    auto trim(std::string_view s) -> std::string_view
    {
        while (!s.empty() && isSpace(s.front()))
            s.remove_prefix(1);
        while (!s.empty() && isSpace(s.back()))
            s.remove_suffix(1);
        return s;
    }

    auto normalizeMcq(std::string_view text) -> std::string
    {
        auto s = trim(text);
        auto const body = !s.empty() && s.front() == '(' ? s.substr(1) : s;
        if (!body.empty() && isAlpha(body.front()))
        {
            auto const next = body.size() > 1 ? body[1] : '\0';
            if (next == '\0' || next == ')' || next == '.' || next == ':' || isSpace(next))
                return std::string(1, upper(body.front()));
        }
        auto out = std::string {};
        for (auto c: s)
            if (c != '(' && c != ')' && c != '.' && !isSpace(c))
                out += upper(c);
        return out;
    }

    auto normalizeFreeForm(std::string_view text) -> std::string
    {
        auto collapsed = std::string {};
        auto pendingSpace = false;
        for (auto c: trim(text))
        {
            if (isSpace(c))
            {
                pendingSpace = true;
                continue;
            }
            if (pendingSpace && !collapsed.empty())
                collapsed += ' ';
            pendingSpace = false;
            collapsed += lower(c);
        }

        constexpr auto terminal = std::string_view(".,!?;:");
        while (!collapsed.empty() && terminal.find(collapsed.back()) != std::string_view::npos)
            collapsed.pop_back();
        while (!collapsed.empty() && collapsed.back() == ' ')
            collapsed.pop_back();

        for (auto article: std::array<std::string_view, 3> { "a ", "an ", "the " })
        {
            if (collapsed.starts_with(article) && collapsed.size() > article.size())
            {
                collapsed.erase(0, article.size());
                break;
            }
        }
        return collapsed;
    }

} // namespace

auto normalizeAnswer(std::string_view text, AnswerKind kind) -> std::string
{
    return kind == AnswerKind::Mcq ? normalizeMcq(text) : normalizeFreeForm(text);
}

auto answersMatch(std::optional<std::string_view> predicted, std::string_view gold, AnswerKind kind) -> bool
{
    if (!predicted)
        return false;
    return normalizeAnswer(*predicted, kind) == normalizeAnswer(gold, kind);
}

} // namespace croploop
