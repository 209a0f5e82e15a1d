// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <croploop/error.hpp>
#include <croploop/policy.hpp>
#include <croploop/protocol.hpp>
#include <croploop/remote_policy.hpp>
#include <croploop/util.hpp>

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

using namespace croploop;
using namespace std::chrono_literals;

namespace
{

auto tinySequence() -> MessageSequence
{
    auto img = ImageBuffer::filled("g", 2, 2, { 10, 20, 30 });
    img.set(1, 1, { 200, 100, 0 });
    auto seq = MessageSequence {};
    seq.messages.push_back(Message { Role::System, { TextPart { "sys" } } });
    seq.messages.push_back(
        Message { Role::User, { ImagePart { std::make_shared<const ImageBuffer>(img) }, TextPart { "Question: q" } } });
    return seq;
}

auto fastConfig(const std::string& endpoint) -> RemotePolicyConfig
{
    auto cfg = RemotePolicyConfig {};
    cfg.endpoint = endpoint;
    cfg.backoff = 1ms;
    cfg.timeout = 5000ms;
    return cfg;
}

} // namespace

TEST(Scripted, RuleReplay)
{
    auto const center = formatToolCall("look at the middle", Box { 25, 25, 75, 75 });
    auto policy = ScriptedPolicy({
        ScriptRule { "first", [](const Observation& o) { return o.turnIndex == 0; },
                     [&](const Observation&) { return center; } },
        ScriptRule { "rest", [](const Observation&) { return true; },
                     [](const Observation&) { return formatAnswer("x", "A"); } },
    });
    auto seq = tinySequence();
    EXPECT_EQ(policy.complete(seq, 100), center);
    EXPECT_EQ(policy.complete(seq, 100), center);
    seq.messages.push_back(Message { Role::Assistant, { TextPart { center } } });
    EXPECT_EQ(policy.complete(seq, 100), formatAnswer("x", "A"));
}

TEST(Scripted, NoMatchingRuleThrows)
{
    auto policy = ScriptedPolicy({ ScriptRule { "never", [](const Observation&) { return false; },
                                                [](const Observation&) { return std::string(); } } });
    auto const seq = tinySequence();
    EXPECT_THROW((void)policy.complete(seq, 10), InvalidArgument);
}

TEST(Wire, RequestMatchesGoldenFile)
{
    auto const body = chatRequestBody(tinySequence(), 2048, 0.0, ImageEncoding::InlinePng);
    auto const path = croploop::testing::sourceDir() / "tests/golden/chat_request.json";
    if (std::getenv("CROPLOOP_UPDATE_GOLDEN") != nullptr)
        atomicWriteFile(path, body.dump(2) + "\n");
    EXPECT_EQ(body.dump(2) + "\n", readTextFile(path));
}

TEST(Wire, ResponseText)
{
    EXPECT_EQ(chatResponseText(nlohmann::json::parse(R"({"choices":[{"message":{"content":"hi"}}]})")), "hi");
    EXPECT_EQ(chatResponseText(nlohmann::json::parse(R"({"text":"yo"})")), "yo");
    EXPECT_THROW((void)chatResponseText(nlohmann::json::parse(R"({"nothing":1})")), RemoteError);
}

TEST(Remote, CannedTurnsOverLoopback)
{
    auto server = StubChatServer(StubChatServer::cannedTurns({ "first", "second" }));
    auto policy = RemotePolicy(fastConfig(server.endpoint()));
    auto seq = tinySequence();
    EXPECT_EQ(policy.complete(seq, 64), "first");
    seq.messages.push_back(Message { Role::Assistant, { TextPart { "first" } } });
    EXPECT_EQ(policy.complete(seq, 64), "second");
    ASSERT_EQ(server.requestCount(), 2);
    auto const sent = nlohmann::json::parse(server.requests()[0]);
    EXPECT_EQ(sent.at("max_tokens"), 64);
    EXPECT_EQ(sent.at("temperature"), 0.0);
    EXPECT_EQ(sent.at("messages").size(), 2u);
}

TEST(Remote, ServerErrorsExhaustRetries)
{
    auto server = StubChatServer([](const nlohmann::json&) { return StubReply { 500, "boom" }; });
    auto policy = RemotePolicy(fastConfig(server.endpoint()));
    try
    {
        (void)policy.complete(tinySequence(), 16);
        FAIL();
    }
    catch (const TransportError& e)
    {
        EXPECT_EQ(e.attempts(), 3);
    }
    EXPECT_EQ(server.requestCount(), 3);
}

TEST(Remote, ClientErrorIsNotRetried)
{
    auto server = StubChatServer([](const nlohmann::json&) { return StubReply { 422, "bad request body" }; });
    auto policy = RemotePolicy(fastConfig(server.endpoint()));
    try
    {
        (void)policy.complete(tinySequence(), 16);
        FAIL();
    }
    catch (const RemoteError& e)
    {
        EXPECT_EQ(e.status(), 422);
        EXPECT_NE(e.body().find("bad request"), std::string::npos);
    }
    EXPECT_EQ(server.requestCount(), 1);
}

TEST(Remote, RecoversAfterTransientFailure)
{
    auto count = std::make_shared<std::atomic<int>>(0);
    auto server = StubChatServer([count](const nlohmann::json&) {
        return (*count)++ == 0 ? StubReply { 503, "busy" } : StubReply::turn("ok");
    });
    auto policy = RemotePolicy(fastConfig(server.endpoint()));
    EXPECT_EQ(policy.complete(tinySequence(), 16), "ok");
    EXPECT_EQ(server.requestCount(), 2);
}

TEST(Remote, UnreachableEndpoint)
{
    auto cfg = fastConfig("http://127.0.0.1:1");
    cfg.timeout = 200ms;
    auto policy = RemotePolicy(cfg);
    EXPECT_THROW((void)policy.complete(tinySequence(), 16), TransportError);
}

TEST(Remote, InFlightLimit)
{
    auto active = std::make_shared<std::atomic<int>>(0);
    auto peak = std::make_shared<std::atomic<int>>(0);
    auto server = StubChatServer([active, peak](const nlohmann::json&) {
        auto const now = ++*active;
        auto seen = peak->load();
        while (now > seen && !peak->compare_exchange_weak(seen, now))
        {
        }
        std::this_thread::sleep_for(20ms);
        --*active;
        return StubReply::turn("done");
    });
    auto cfg = fastConfig(server.endpoint());
    cfg.maxInFlight = 2;
    auto policy = RemotePolicy(cfg);
    auto threads = std::vector<std::thread> {};
    for (int i = 0; i < 6; ++i)
        threads.emplace_back([&policy] { (void)policy.complete(tinySequence(), 8); });
    for (auto& t: threads)
        t.join();
    EXPECT_LE(peak->load(), 2);
    EXPECT_EQ(server.requestCount(), 6);
}

TEST(Remote, DrivesAnEpisode)
{
    auto server = StubChatServer(StubChatServer::cannedTurns({
        formatToolCall("zoom", Box { 0, 0, 28, 28 }),
        formatAnswer("seen", "B"),
    }));
    auto policy = RemotePolicy(fastConfig(server.endpoint()));
    auto const img = std::make_shared<const ImageBuffer>(ImageBuffer::filled("o", 300, 200, { 5, 5, 5 }));
    auto const traj = runEpisode(policy, EpisodeTask::make("i", "q", img, std::nullopt, 64), EpisodeConfig {});
    EXPECT_EQ(traj.terminatedBy, Termination::Answer);
    EXPECT_EQ(traj.finalAnswer, "B");
    auto const second = nlohmann::json::parse(server.requests()[1]);
    EXPECT_EQ(second.at("messages").size(), 4u);
    EXPECT_EQ(second["messages"][3]["role"], "tool");
}
