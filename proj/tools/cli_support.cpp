// SPDX-License-Identifier: Apache-2.0
#include "cli_support.hpp"

#include <croploop/datastore.hpp>
#include <croploop/util.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace croploop::cli
{

namespace
{

    auto scalarText(const nlohmann::json& v) -> std::string
    {
        if (v.is_string())
            return v.get<std::string>();
        if (v.is_boolean())
            return v.get<bool>() ? "true" : "false";
        if (v.is_number() || v.is_null())
            return v.dump();
        throw UsageProblem(fmt::format("config value {} must be a scalar or a list of scalars", v.dump()));
    }

    struct Item
    {
        std::string name;
        std::vector<std::string> inputs;
    };

    auto jsonItems(const std::filesystem::path& path) -> std::vector<Item>
    {
        auto const j = nlohmann::json::parse(readTextFile(path), nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw UsageProblem(fmt::format("config file '{}' must hold a JSON object", path.string()));
        auto out = std::vector<Item> {};
        for (auto const& [key, value]: j.items())
        {
            auto item = Item { key, {} };
            if (value.is_array())
                for (auto const& v: value)
                    item.inputs.push_back(scalarText(v));
            else
                item.inputs.push_back(scalarText(value));
            out.push_back(std::move(item));
        }
        return out;
    }

    auto tomlItems(const std::filesystem::path& path) -> std::vector<Item>
    {
        auto in = std::ifstream(path);
        if (!in)
            throw UsageProblem(fmt::format("cannot read config file '{}'", path.string()));
        auto out = std::vector<Item> {};
        for (auto const& item: CLI::ConfigTOML().from_config(in))
        {
            if (item.name == "++" || item.name == "--")
                continue;
            if (!item.parents.empty())
                throw UsageProblem(fmt::format("config sections are not supported ('{}')", item.fullname()));
            out.push_back(Item { item.name, item.inputs });
        }
        return out;
    }

} // namespace

void applyConfigFile(CLI::App& sub, const std::filesystem::path& path)
{
    auto const items = path.extension() == ".json" ? jsonItems(path) : tomlItems(path);
    for (auto const& item: items)
    {
        auto name = item.name;
        std::replace(name.begin(), name.end(), '_', '-');
        auto* opt = sub.get_option_no_throw("--" + name);
        if (opt == nullptr || name == "config" || name == "help")
            throw UsageProblem(fmt::format("unknown config key '{}'", item.name));
        if (opt->count() > 0)
            continue;
        for (auto const& input: item.inputs)
            opt->add_result(input);
        opt->run_callback();
    }
}

auto effectiveOptions(const CLI::App& sub) -> nlohmann::json
{
    auto out = nlohmann::json::object();
    for (auto const* opt: sub.get_options())
    {
        auto const name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "config" || name == "out" || name == "workers")
            continue;
        if (opt->count() > 0)
        {
            auto values = opt->results();
            out[name] = values.size() == 1 ? nlohmann::json(values.front()) : nlohmann::json(values);
        }
        else
        {
            out[name] = opt->get_default_str();
        }
    }
    return out;
}

void writeRunManifest(const std::filesystem::path& outDir, const std::string& command, const nlohmann::json& options,
                      std::uint64_t seed, const std::vector<std::string>& primaryOutputs)
{
    auto const canonical = canonicalLine(options);
    auto const manifest = nlohmann::json {
        { "schema", kSchemaVersion },
        { "command", command },
        { "options", options },
        { "config_hash", "sha256:" + sha256Hex(canonical) },
        { "seed", seed },
        { "git_rev", CROPLOOP_GIT_REV },
        { "primary_outputs", primaryOutputs },
    };
    atomicWriteFile(outDir / "run_manifest.json", manifest.dump(2) + "\n");
}

auto svgLineChart(const std::string& title, const std::vector<Series>& series, double yMin, double yMax)
    -> std::string
{
    constexpr auto width = 640.0;
    constexpr auto height = 360.0;
    constexpr auto left = 56.0;
    constexpr auto right = 16.0;
    constexpr auto top = 36.0;
    constexpr auto bottom = 40.0;
    constexpr std::array<std::string_view, 6> colours { "#1f77b4", "#d62728", "#2ca02c",
                                                        "#9467bd", "#ff7f0e", "#17becf" };
    if (!(yMax > yMin))
        yMax = yMin + 1.0;

    auto points = std::size_t { 0 };
    for (auto const& s: series)
        points = std::max(points, s.values.size());
    auto const plotW = width - left - right;
    auto const plotH = height - top - bottom;
    auto const xOf = [&](std::size_t i) { return left + (points > 1 ? plotW * double(i) / double(points - 1) : 0.0); };
    auto const yOf = [&](double v) {
        return top + plotH * (1.0 - (std::clamp(v, yMin, yMax) - yMin) / (yMax - yMin));
    };

    auto svg = std::ostringstream {};
    svg << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">)",
                       width, height, width, height)
        << "\n";
    svg << R"(<rect width="100%" height="100%" fill="white"/>)" << "\n";
    svg << fmt::format(R"(<text x="{}" y="22" font-family="sans-serif" font-size="15">{}</text>)", left, title)
        << "\n";
    svg << fmt::format(R"(<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#888"/>)", left, top, plotW,
                       plotH)
        << "\n";
    for (int t = 0; t <= 4; ++t)
    {
        auto const v = yMin + (yMax - yMin) * t / 4.0;
        svg << fmt::format(R"(<text x="{:.1f}" y="{:.1f}" font-family="sans-serif" font-size="11" text-anchor="end">{:.2f}</text>)",
                           left - 6, yOf(v) + 4, v)
            << "\n";
    }
    svg << fmt::format(R"(<text x="{:.1f}" y="{:.1f}" font-family="sans-serif" font-size="11" text-anchor="middle">iteration (0..{})</text>)",
                       left + plotW / 2, height - 10, points > 0 ? points - 1 : 0)
        << "\n";

    for (std::size_t k = 0; k < series.size(); ++k)
    {
        auto const& s = series[k];
        auto const colour = colours[k % colours.size()];
        auto path = std::string {};
        for (std::size_t i = 0; i < s.values.size(); ++i)
            path += fmt::format("{}{:.2f},{:.2f}", i == 0 ? "M" : " L", xOf(i), yOf(s.values[i]));
        svg << fmt::format(R"(<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>)", path, colour) << "\n";
        svg << fmt::format(R"(<text x="{:.1f}" y="{:.1f}" font-family="sans-serif" font-size="11" fill="{}">{}</text>)",
                           left + 8, top + 14 + 14 * double(k), colour, s.name)
            << "\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace croploop::cli
