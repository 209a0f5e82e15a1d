// SPDX-License-Identifier: Apache-2.0
#include <croploop/annot_server.hpp>
#include <croploop/error.hpp>
#include <croploop/png_io.hpp>
#include <croploop/protocol.hpp>
#include <croploop/util.hpp>

#include <fmt/format.h>
#include <httplib.h>

#include <chrono>
#include <ctime>
#include <random>
#include <set>
#include <thread>

namespace croploop
{

namespace
{

    auto utcTimestamp() -> std::string
    {
        auto const now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        auto tm = std::tm {};
        gmtime_r(&now, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    auto errorBody(std::string_view message) -> std::string
    {
        return nlohmann::json { { "error", message } }.dump();
    }

} // namespace

AnnotationService::AnnotationService(Dataset dataset, std::filesystem::path annotationsPath, std::uint64_t seed,
                                     PatchGrid grid):
    _dataset(std::move(dataset)), _annotationsPath(std::move(annotationsPath)), _grid(grid)
{
    for (auto const& inst: _dataset.instances)
        _queue.push_back(inst.id);
    auto rng = std::mt19937_64(mixSeed(seed, "annotation-queue"));
    for (auto i = _queue.size(); i > 1; --i)
    {
        auto const j = std::min(i - 1, std::size_t(unitInterval(rng()) * double(i)));
        std::swap(_queue[i - 1], _queue[j]);
    }
    _records = loadAnnotations(_annotationsPath);
}

auto AnnotationService::nextTask(const std::string& annotator) -> std::optional<TaskView>
{
    auto lock = std::lock_guard(_mutex);
    auto done = std::set<std::string> {};
    for (auto const& r: _records)
        if (r.annotator == annotator)
            done.insert(r.instanceId);
    for (auto const& id: _queue)
    {
        if (done.contains(id))
            continue;
        auto const* inst = _dataset.find(id);
        return TaskView { id, inst->question, inst->imageDims, fmt::format("/api/image/{}?maxtokens=1024", id) };
    }
    return std::nullopt;
}

auto AnnotationService::submit(const std::string& instanceId, const std::string& annotator, std::vector<Box> boxes)
    -> SubmitResult
{
    auto lock = std::lock_guard(_mutex);
    auto const* inst = _dataset.find(instanceId);
    if (inst == nullptr)
        return { 404, fmt::format("unknown instance '{}'", instanceId) };
    for (auto const& r: _records)
        if (r.instanceId == instanceId && r.annotator == annotator)
            return { 409, fmt::format("instance '{}' already annotated by '{}'", instanceId, annotator) };

    for (auto& b: boxes)
        b.space = instanceId;
    auto record = AnnotationRecord { instanceId, annotator, std::move(boxes), utcTimestamp() };
    auto const violations = validateAnnotation(record, inst->imageDims);
    if (!violations.empty())
        return { 400, violations.front().message };

    auto next = _records;
    next.push_back(std::move(record));
    saveAnnotations(next, _annotationsPath);
    _records = std::move(next);
    return { 200, "ok" };
}

auto AnnotationService::imagePng(const std::string& instanceId, std::int64_t maxTokens)
    -> std::optional<std::vector<std::uint8_t>>
{
    auto const* inst = _dataset.find(instanceId);
    if (inst == nullptr)
        return std::nullopt;
    auto const image = loadPng(_dataset.imagePath(*inst));
    if (maxTokens <= 0)
        return encodePng(image);
    return encodePng(fitToBudget(image, maxTokens, _grid));
}

auto AnnotationService::progress() const -> Progress
{
    auto lock = std::lock_guard(_mutex);
    auto p = Progress {};
    p.total = _dataset.instances.size();
    p.records = _records.size();
    auto annotated = std::set<std::string> {};
    for (auto const& r: _records)
    {
        annotated.insert(r.instanceId);
        ++p.perAnnotator[r.annotator];
    }
    p.annotated = annotated.size();
    return p;
}

auto AnnotationService::records() const -> std::vector<AnnotationRecord>
{
    auto lock = std::lock_guard(_mutex);
    return _records;
}

auto toJson(const TaskView& task) -> nlohmann::json
{
    return {
        { "instance_id", task.instanceId },
        { "question", task.question },
        { "width", task.dims.width },
        { "height", task.dims.height },
        { "image_url", task.imageUrl },
        { "original_url", fmt::format("/api/image/{}?maxtokens=0", task.instanceId) },
    };
}

auto toJson(const Progress& progress) -> nlohmann::json
{
    return {
        { "total", progress.total },
        { "annotated", progress.annotated },
        { "records", progress.records },
        { "per_annotator", progress.perAnnotator },
    };
}

struct AnnotServer::Impl
{
    explicit Impl(AnnotationService& svc): service(svc) {}

    AnnotationService& service;
    httplib::Server server;
    std::thread thread;
};

AnnotServer::AnnotServer(AnnotationService& service, AnnotServerConfig config):
    _impl(std::make_unique<Impl>(service)), _config(std::move(config))
{
    auto& server = _impl->server;
    auto& svc = _impl->service;
    auto const token = _config.token;

    server.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
        if (token.empty() || !req.path.starts_with("/api/"))
            return httplib::Server::HandlerResponse::Unhandled;
        if (req.get_header_value("Authorization") == "Bearer " + token)
            return httplib::Server::HandlerResponse::Unhandled;
        res.status = 401;
        res.set_content(errorBody("missing or wrong token"), "application/json");
        return httplib::Server::HandlerResponse::Handled;
    });

    server.Get("/api/tasks/next", [&svc](const httplib::Request& req, httplib::Response& res) {
        auto const annotator = req.has_param("annotator") ? req.get_param_value("annotator") : "anonymous";
        auto const task = svc.nextTask(annotator);
        if (!task)
        {
            res.status = 204;
            return;
        }
        res.set_content(toJson(*task).dump(), "application/json");
    });

    server.Get(R"(/api/image/(.+))", [&svc](const httplib::Request& req, httplib::Response& res) {
        auto maxTokens = std::int64_t { 1024 };
        if (req.has_param("maxtokens"))
        {
            try
            {
                maxTokens = std::stoll(req.get_param_value("maxtokens"));
            }
            catch (const std::exception&)
            {
                res.status = 400;
                res.set_content(errorBody("maxtokens must be an integer"), "application/json");
                return;
            }
        }
        try
        {
            auto const png = svc.imagePng(req.matches[1], maxTokens);
            if (!png)
            {
                res.status = 404;
                res.set_content(errorBody("unknown instance"), "application/json");
                return;
            }
            res.set_content(std::string(png->begin(), png->end()), "image/png");
        }
        catch (const Error& e)
        {
            res.status = 500;
            res.set_content(errorBody(e.what()), "application/json");
        }
    });

    server.Post("/api/annotations", [&svc](const httplib::Request& req, httplib::Response& res) {
        auto const body = nlohmann::json::parse(req.body, nullptr, false);
        auto const fail = [&](int status, std::string_view message) {
            res.status = status;
            res.set_content(errorBody(message), "application/json");
        };
        if (body.is_discarded() || !body.is_object())
            return fail(400, "body must be a JSON object");
        if (!body.contains("instance_id") || !body["instance_id"].is_string())
            return fail(400, "instance_id must be a string");
        if (!body.contains("boxes") || !body["boxes"].is_array())
            return fail(400, "boxes must be a list of [x1,y1,x2,y2]");
        auto boxes = std::vector<Box> {};
        try
        {
            for (auto const& b: body["boxes"])
                boxes.push_back(boxFromJson(b));
        }
        catch (const InvalidArgument& e)
        {
            return fail(400, e.what());
        }
        auto const annotator = body.contains("annotator") && body["annotator"].is_string()
                                   ? body["annotator"].get<std::string>()
                                   : std::string("anonymous");
        auto const result = svc.submit(body["instance_id"].get<std::string>(), annotator, std::move(boxes));
        if (result.status != 200)
            return fail(result.status, result.message);
        res.set_content(R"({"status":"ok"})", "application/json");
    });

    server.Get("/api/progress", [&svc](const httplib::Request&, httplib::Response& res) {
        res.set_content(toJson(svc.progress()).dump(), "application/json");
    });

    if (!_config.staticDir.empty())
        server.set_mount_point("/", _config.staticDir.string());
}

AnnotServer::~AnnotServer()
{
    stop();
}

void AnnotServer::bind()
{
    _port = _config.port == 0 ? _impl->server.bind_to_any_port(_config.host)
                              : (_impl->server.bind_to_port(_config.host, _config.port) ? _config.port : -1);
    if (_port <= 0)
        throw Error(fmt::format("cannot bind {}:{}", _config.host, _config.port));
}

void AnnotServer::start()
{
    bind();
    _impl->thread = std::thread([this] { _impl->server.listen_after_bind(); });
    _impl->server.wait_until_ready();
}

void AnnotServer::run()
{
    bind();
    _impl->server.listen_after_bind();
}

void AnnotServer::stop()
{
    _impl->server.stop();
    if (_impl->thread.joinable())
        _impl->thread.join();
}

} // namespace croploop
