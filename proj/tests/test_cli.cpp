// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <croploop/util.hpp>

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdlib>
#include <sys/wait.h>

using croploop::readTextFile;
using croploop::testing::TempDir;

namespace
{

auto run(const std::string& args) -> int
{
    auto const command = std::string(CROPLOOP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    auto const status = std::system(command.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

auto quoted(const std::filesystem::path& p) -> std::string
{
    return "'" + p.string() + "'";
}

} // namespace

TEST(Cli, UsageErrorsExitOne)
{
    auto dir = TempDir("cli-usage");
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run("no-such-command"), 1);
    EXPECT_EQ(run("train-toy --gap sideways --out " + quoted(dir.path())), 1);
    EXPECT_EQ(run("prepare --out " + quoted(dir.path())), 1);
    EXPECT_EQ(run("rollout --out " + quoted(dir.path())), 1);
}

TEST(Cli, ValidationErrorsExitTwo)
{
    auto dir = TempDir("cli-validation");
    croploop::atomicWriteFile(dir / "m.jsonl",
                              R"({"schema":1,"id":"a","question":"q","answer":"A","answer_kind":"mcq",)"
                              R"("original_image":"missing.png","image_dims":[100,100],"split":"eval"})"
                              "\n");
    EXPECT_EQ(run("rollout --dataset " + quoted(dir / "m.jsonl") + " --out " + quoted(dir / "o")), 2);
    croploop::atomicWriteFile(dir / "bad.jsonl", "{oops\n");
    EXPECT_EQ(run("rollout --dataset " + quoted(dir / "bad.jsonl") + " --out " + quoted(dir / "o")), 2);
}

TEST(Cli, DiagnoseIsByteReproducible)
{
    auto dir = TempDir("cli-diagnose");
    auto const args = " --mode noise --seed 7 --toy 12 --workers 3 --out ";
    ASSERT_EQ(run("diagnose" + std::string(args) + quoted(dir / "a")), 0);
    ASSERT_EQ(run("diagnose --mode noise --seed 7 --toy 12 --workers 1 --out " + quoted(dir / "b")), 0);
    for (auto const* name: { "diagnose_noise.jsonl", "diagnose.md", "run_manifest.json" })
        EXPECT_EQ(readTextFile(dir / "a" / name), readTextFile(dir / "b" / name)) << name;
}

TEST(Cli, TrainToyIsByteReproducible)
{
    auto dir = TempDir("cli-train");
    auto const args = std::string("train-toy --iterations 5 --seed 3 --out ");
    ASSERT_EQ(run(args + quoted(dir / "a")), 0);
    ASSERT_EQ(run(args + quoted(dir / "b") + " --workers 2"), 0);
    EXPECT_EQ(readTextFile(dir / "a" / "train_report.jsonl"), readTextFile(dir / "b" / "train_report.jsonl"));
    EXPECT_EQ(readTextFile(dir / "a" / "run_manifest.json"), readTextFile(dir / "b" / "run_manifest.json"));
}

TEST(Cli, GenToyIsByteReproducible)
{
    auto dir = TempDir("cli-gen");
    ASSERT_EQ(run("gen-toy --count 4 --seed 9 --out " + quoted(dir / "a")), 0);
    ASSERT_EQ(run("gen-toy --count 4 --seed 9 --out " + quoted(dir / "b")), 0);
    EXPECT_EQ(readTextFile(dir / "a" / "manifest.jsonl"), readTextFile(dir / "b" / "manifest.jsonl"));
}

TEST(Cli, ConfigFilePrecedence)
{
    auto dir = TempDir("cli-config");
    croploop::atomicWriteFile(dir / "c.toml", "iterations = 2\nseed = 4\ngroup_size = 4\n");
    ASSERT_EQ(run("train-toy --config " + quoted(dir / "c.toml") + " --seed 5 --out " + quoted(dir / "o")), 0);
    auto const manifest = nlohmann::json::parse(readTextFile(dir / "o" / "run_manifest.json"));
    EXPECT_EQ(manifest.at("options").at("iterations"), "2");
    EXPECT_EQ(manifest.at("options").at("group-size"), "4");
    EXPECT_EQ(manifest.at("seed"), 5);

    croploop::atomicWriteFile(dir / "c.json", R"({"iterations": 2, "learning_rat": 0.1})");
    EXPECT_EQ(run("train-toy --config " + quoted(dir / "c.json") + " --out " + quoted(dir / "p")), 1);
}
