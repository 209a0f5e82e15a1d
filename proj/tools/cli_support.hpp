// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace croploop::cli
{

/// Exit codes shared by all subcommands.
enum ExitCode : int
{
    Success = 0,
    UsageError = 1,
    ValidationFailure = 2,
    RuntimeFailure = 3,
};

/// Thrown for bad flag combinations and config files; maps to UsageError.
class UsageProblem: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Apply a JSON (.json) or TOML (anything else) config file to `sub`.
/// Keys are option names without dashes (underscores or dashes both accepted);
/// flags given on the command line win. Unknown keys throw UsageProblem.
void applyConfigFile(CLI::App& sub, const std::filesystem::path& path);

/// Effective option values of `sub` (command line, config file, then defaults), sorted by name.
[[nodiscard]] auto effectiveOptions(const CLI::App& sub) -> nlohmann::json;

/// Writes <out>/run_manifest.json: command, effective options, their sha256, seed, git revision
/// and the primary output files. Deterministic for equal inputs.
void writeRunManifest(const std::filesystem::path& outDir, const std::string& command, const nlohmann::json& options,
                      std::uint64_t seed, const std::vector<std::string>& primaryOutputs);

struct Series
{
    std::string name;
    std::vector<double> values;
};

/// Minimal self-contained SVG line chart, x = index.
[[nodiscard]] auto svgLineChart(const std::string& title, const std::vector<Series>& series, double yMin, double yMax)
    -> std::string;

} // namespace croploop::cli
