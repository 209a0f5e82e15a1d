// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/datastore.hpp>
#include <croploop/imaging.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace croploop
{

struct TaskView
{
    std::string instanceId;
    std::string question;
    Dims dims;
    std::string imageUrl;
};

struct SubmitResult
{
    int status = 200;
    std::string message;
};

struct Progress
{
    std::size_t total = 0;
    /// Instances with at least one annotation.
    std::size_t annotated = 0;
    std::size_t records = 0;
    std::map<std::string, std::size_t> perAnnotator;
};

/// Annotation bookkeeping behind the HTTP layer. Thread safe; all writes go
/// through one mutex and replace the annotations file atomically.
class AnnotationService
{
  public:
    /// Loads existing records from `annotationsPath` when it exists.
    AnnotationService(Dataset dataset, std::filesystem::path annotationsPath, std::uint64_t seed = 0,
                      PatchGrid grid = {});

    /// First queued instance this annotator has not annotated; the same task is
    /// returned until it is submitted. nullopt when the queue is exhausted.
    [[nodiscard]] auto nextTask(const std::string& annotator) -> std::optional<TaskView>;

    /// 200 persisted, 400 invalid (message names the breach), 404 unknown instance, 409 already annotated.
    auto submit(const std::string& instanceId, const std::string& annotator, std::vector<Box> boxes) -> SubmitResult;

    /// PNG of the instance image fitted to `maxTokens` (0 = original). nullopt for unknown ids.
    [[nodiscard]] auto imagePng(const std::string& instanceId, std::int64_t maxTokens) -> std::optional<std::vector<std::uint8_t>>;

    [[nodiscard]] auto progress() const -> Progress;
    [[nodiscard]] auto records() const -> std::vector<AnnotationRecord>;
    [[nodiscard]] auto queue() const -> const std::vector<std::string>& { return _queue; }

  private:
    Dataset _dataset;
    std::filesystem::path _annotationsPath;
    PatchGrid _grid;
    std::vector<std::string> _queue;
    mutable std::mutex _mutex;
    std::vector<AnnotationRecord> _records;
};

[[nodiscard]] auto toJson(const TaskView& task) -> nlohmann::json;
[[nodiscard]] auto toJson(const Progress& progress) -> nlohmann::json;

struct AnnotServerConfig
{
    std::string host = "127.0.0.1";
    /// 0 binds an ephemeral port.
    int port = 0;
    /// Shared token; when non-empty every /api request needs "Authorization: Bearer <token>".
    std::string token;
    /// Built UI bundle served at "/"; ignored when empty.
    std::filesystem::path staticDir;
};

/// REST front end:
///   GET  /api/tasks/next?annotator=NAME
///   GET  /api/image/{id}?maxtokens=N
///   POST /api/annotations  {"instance_id", "annotator", "boxes":[[x1,y1,x2,y2],...]}
///   GET  /api/progress
class AnnotServer
{
  public:
    AnnotServer(AnnotationService& service, AnnotServerConfig config);
    ~AnnotServer();

    AnnotServer(const AnnotServer&) = delete;
    auto operator=(const AnnotServer&) -> AnnotServer& = delete;

    /// Binds and serves on a background thread.
    void start();
    /// Binds and serves on the calling thread until stop().
    void run();
    void stop();

    [[nodiscard]] auto port() const noexcept -> int { return _port; }

  private:
    void bind();

    struct Impl;
    std::unique_ptr<Impl> _impl;
    AnnotServerConfig _config;
    int _port = 0;
};

} // namespace croploop
