// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <croploop/annot_server.hpp>
#include <croploop/png_io.hpp>

#include <gtest/gtest.h>
#include <httplib.h>

using namespace croploop;
using croploop::testing::TempDir;

namespace
{

auto writeDataset(const TempDir& dir, int n) -> Dataset
{
    auto ds = Dataset {};
    ds.baseDir = dir.path();
    std::filesystem::create_directories(dir / "images");
    for (int i = 0; i < n; ++i)
    {
        auto inst = DataInstance {};
        inst.id = "item-" + std::to_string(i);
        inst.question = "Where is the cat?";
        inst.answer = "A";
        inst.originalImage = "images/" + inst.id + ".png";
        inst.imageDims = { 1200 + 100 * i, 900 };
        savePng(ImageBuffer::filled(inst.id, inst.imageDims.width, inst.imageDims.height, { 40, 80, 120 }),
                dir.path() / inst.originalImage);
        ds.instances.push_back(std::move(inst));
    }
    return ds;
}

auto boxesBody(const std::string& id, const std::string& boxes) -> std::string
{
    return R"({"instance_id":")" + id + R"(","annotator":"ann","boxes":)" + boxes + "}";
}

auto errorOf(const httplib::Result& res) -> std::string
{
    return nlohmann::json::parse(res->body).at("error").get<std::string>();
}

class AnnotServerTest: public ::testing::Test
{
  protected:
    void SetUp() override
    {
        _service = std::make_unique<AnnotationService>(writeDataset(_dir, 3), _dir / "annotations.jsonl", 11);
        _server = std::make_unique<AnnotServer>(*_service, AnnotServerConfig {});
        _server->start();
        _client = std::make_unique<httplib::Client>("127.0.0.1", _server->port());
    }

    void TearDown() override { _server->stop(); }

    TempDir _dir { "annot" };
    std::unique_ptr<AnnotationService> _service;
    std::unique_ptr<AnnotServer> _server;
    std::unique_ptr<httplib::Client> _client;
};

} // namespace

TEST_F(AnnotServerTest, NextTaskThenNestedSubmitPersists)
{
    auto const task = _client->Get("/api/tasks/next?annotator=ann");
    ASSERT_TRUE(task);
    ASSERT_EQ(task->status, 200);
    auto const t = nlohmann::json::parse(task->body);
    auto const id = t.at("instance_id").get<std::string>();
    EXPECT_EQ(id, _service->queue().front());

    auto const post = _client->Post("/api/annotations", boxesBody(id, "[[100,100,200,200],[50,50,400,400]]"),
                                    "application/json");
    ASSERT_TRUE(post);
    EXPECT_EQ(post->status, 200);

    auto const reloaded = loadAnnotations(_dir / "annotations.jsonl");
    ASSERT_EQ(reloaded.size(), 1u);
    EXPECT_EQ(reloaded[0].instanceId, id);
    EXPECT_EQ(reloaded[0].boxes.size(), 2u);
    EXPECT_TRUE(reloaded[0].boxes[0].sameRect(Box { 100, 100, 200, 200 }));

    auto const fresh = AnnotationService(writeDataset(_dir, 3), _dir / "annotations.jsonl", 11);
    EXPECT_EQ(fresh.records().size(), 1u);

    auto const next = _client->Get("/api/tasks/next?annotator=ann");
    EXPECT_NE(nlohmann::json::parse(next->body).at("instance_id").get<std::string>(), id);
}

TEST_F(AnnotServerTest, RejectsReversedNesting)
{
    auto const id = _service->queue().front();
    auto const post = _client->Post("/api/annotations", boxesBody(id, "[[50,50,400,400],[100,100,200,200]]"),
                                    "application/json");
    ASSERT_TRUE(post);
    EXPECT_EQ(post->status, 400);
    EXPECT_EQ(errorOf(post), "nesting violated at index 1");
    EXPECT_TRUE(_service->records().empty());
}

TEST_F(AnnotServerTest, ErrorStatuses)
{
    auto const unknown = _client->Post("/api/annotations", boxesBody("nope", "[[0,0,1,1]]"), "application/json");
    EXPECT_EQ(unknown->status, 404);

    auto const id = _service->queue().front();
    EXPECT_EQ(_client->Post("/api/annotations", boxesBody(id, "[[0,0,10,10]]"), "application/json")->status, 200);
    EXPECT_EQ(_client->Post("/api/annotations", boxesBody(id, "[[0,0,10,10]]"), "application/json")->status, 409);

    EXPECT_EQ(_client->Post("/api/annotations", "not json", "application/json")->status, 400);
    EXPECT_EQ(_client->Post("/api/annotations", boxesBody(id, "[[0,0,1]]"), "application/json")->status, 400);
    auto const outside = _client->Post("/api/annotations", boxesBody(_service->queue()[1], "[[0,0,5000,10]]"),
                                       "application/json");
    EXPECT_EQ(outside->status, 400);
    EXPECT_EQ(_client->Get("/api/image/nope")->status, 404);
    EXPECT_EQ(_client->Get("/api/image/item-0?maxtokens=x")->status, 400);
}

TEST_F(AnnotServerTest, ImageBudgets)
{
    auto const fitted = _client->Get("/api/image/item-2?maxtokens=1024");
    ASSERT_EQ(fitted->status, 200);
    EXPECT_EQ(fitted->get_header_value("Content-Type"), "image/png");
    auto const bytes = std::vector<std::uint8_t>(fitted->body.begin(), fitted->body.end());
    auto const small = decodePng(bytes, "fitted");
    EXPECT_LE(tokenCount(small.dims()), 1024);

    auto const original = _client->Get("/api/image/item-2?maxtokens=0");
    auto const raw = std::vector<std::uint8_t>(original->body.begin(), original->body.end());
    EXPECT_EQ(decodePng(raw, "original").dims(), (Dims { 1400, 900 }));
}

TEST_F(AnnotServerTest, ProgressAndExhaustion)
{
    for (auto const& id: _service->queue())
        EXPECT_EQ(_client->Post("/api/annotations", boxesBody(id, "[[0,0,10,10]]"), "application/json")->status, 200);
    auto const done = _client->Get("/api/tasks/next?annotator=ann");
    EXPECT_EQ(done->status, 204);
    EXPECT_EQ(_client->Get("/api/tasks/next?annotator=other")->status, 200);

    auto const p = nlohmann::json::parse(_client->Get("/api/progress")->body);
    EXPECT_EQ(p.at("total"), 3);
    EXPECT_EQ(p.at("annotated"), 3);
    EXPECT_EQ(p.at("records"), 3);
    EXPECT_EQ(p.at("per_annotator").at("ann"), 3);
}

TEST(AnnotService, QueueDependsOnlyOnSeed)
{
    auto dir = TempDir("queue");
    auto const ds = writeDataset(dir, 3);
    auto big = Dataset {};
    for (int i = 0; i < 40; ++i)
    {
        auto inst = ds.instances[0];
        inst.id = "q" + std::to_string(i);
        big.instances.push_back(inst);
    }
    auto const a = AnnotationService(big, dir / "a.jsonl", 5).queue();
    auto const b = AnnotationService(big, dir / "b.jsonl", 5).queue();
    auto const c = AnnotationService(big, dir / "c.jsonl", 6).queue();
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
}

TEST(AnnotServerAuth, TokenRequired)
{
    auto dir = TempDir("auth");
    auto service = AnnotationService(writeDataset(dir, 1), dir / "a.jsonl");
    auto config = AnnotServerConfig {};
    config.token = "s3cret";
    auto server = AnnotServer(service, config);
    server.start();
    auto client = httplib::Client("127.0.0.1", server.port());
    EXPECT_EQ(client.Get("/api/progress")->status, 401);
    EXPECT_EQ(client.Get("/api/progress", { { "Authorization", "Bearer wrong" } })->status, 401);
    EXPECT_EQ(client.Get("/api/progress", { { "Authorization", "Bearer s3cret" } })->status, 200);
    server.stop();
}
