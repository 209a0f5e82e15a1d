// SPDX-License-Identifier: Apache-2.0
#include <croploop/error.hpp>
#include <croploop/remote_policy.hpp>

#include <fmt/format.h>
#include <httplib.h>

#include <cstdlib>

namespace croploop
{

namespace
{

    constexpr auto kExcerptLength = std::size_t { 200 };

    auto excerpt(std::string_view body) -> std::string
    {
        return std::string(body.substr(0, std::min(body.size(), kExcerptLength)));
    }

} // namespace

auto RemotePolicyConfig::fromEnvironment() -> std::optional<RemotePolicyConfig>
{
    auto const* endpoint = std::getenv("CROPLOOP_ENDPOINT");
    if (endpoint == nullptr || *endpoint == '\0')
        return std::nullopt;
    auto cfg = RemotePolicyConfig {};
    cfg.endpoint = endpoint;
    if (auto const* token = std::getenv("CROPLOOP_TOKEN"))
        cfg.token = token;
    return cfg;
}

auto chatRequestBody(const MessageSequence& messages, int maxTokens, double temperature, ImageEncoding encoding)
    -> nlohmann::json
{
    return {
        { "messages", messagesToJson(messages, encoding) },
        { "max_tokens", maxTokens },
        { "temperature", temperature },
    };
}

auto chatResponseText(const nlohmann::json& response) -> std::string
{
    if (response.is_object())
    {
        if (auto it = response.find("choices"); it != response.end() && it->is_array() && !it->empty())
        {
            auto const& first = (*it)[0];
            if (first.contains("message") && first["message"].contains("content")
                && first["message"]["content"].is_string())
                return first["message"]["content"].get<std::string>();
        }
        if (auto it = response.find("text"); it != response.end() && it->is_string())
            return it->get<std::string>();
    }
    throw RemoteError(200, excerpt(response.dump()));
}

RemotePolicy::RemotePolicy(RemotePolicyConfig config): _config(std::move(config))
{
    if (_config.endpoint.empty())
        throw InvalidArgument("remote policy needs an endpoint");
    if (_config.attempts < 1)
        throw InvalidArgument("remote policy needs at least one attempt");
    if (_config.maxInFlight < 1)
        throw InvalidArgument("in-flight limit must be >= 1");
}

auto RemotePolicy::attemptOnce(const std::string& body, int& status, std::string& responseBody) -> bool
{
    auto client = httplib::Client(_config.endpoint);
    auto const seconds = _config.timeout.count() / 1000;
    auto const micros = (_config.timeout.count() % 1000) * 1000;
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);
    auto headers = httplib::Headers {};
    if (!_config.token.empty())
        headers.emplace("Authorization", "Bearer " + _config.token);

    auto result = client.Post(_config.path, headers, body, "application/json");
    if (!result)
    {
        status = 0;
        responseBody = httplib::to_string(result.error());
        return false;
    }
    status = result->status;
    responseBody = result->body;
    return true;
}

auto RemotePolicy::complete(const MessageSequence& messages, int maxTokens) -> std::string
{
    auto const body = chatRequestBody(messages, maxTokens, _config.temperature, _config.encoding).dump();

    {
        auto lock = std::unique_lock(_slotMutex);
        _slotFree.wait(lock, [this] { return _inFlight < _config.maxInFlight; });
        ++_inFlight;
    }
    struct SlotGuard
    {
        RemotePolicy& self;
        ~SlotGuard()
        {
            {
                auto lock = std::lock_guard(self._slotMutex);
                --self._inFlight;
            }
            self._slotFree.notify_one();
        }
    } guard { *this };

    auto lastFailure = std::string {};
    for (int attempt = 1; attempt <= _config.attempts; ++attempt)
    {
        if (attempt > 1)
            std::this_thread::sleep_for(_config.backoff * (1 << (attempt - 2)));

        auto status = 0;
        auto responseBody = std::string {};
        if (!attemptOnce(body, status, responseBody))
        {
            lastFailure = fmt::format("transport: {}", responseBody);
            continue;
        }
        if (status >= 500)
        {
            lastFailure = fmt::format("HTTP {}: {}", status, excerpt(responseBody));
            continue;
        }
        if (status >= 400)
            throw RemoteError(status, excerpt(responseBody));

        auto const parsed = nlohmann::json::parse(responseBody, nullptr, false);
        if (parsed.is_discarded())
            throw RemoteError(status, excerpt(responseBody));
        return chatResponseText(parsed);
    }
    throw TransportError(fmt::format("chat request failed after {} attempts ({})", _config.attempts, lastFailure),
                         _config.attempts);
}

auto StubReply::turn(std::string_view text) -> StubReply
{
    auto const body = nlohmann::json {
        { "choices", nlohmann::json::array({ { { "message", { { "role", "assistant" }, { "content", text } } } } }) },
    };
    return StubReply { 200, body.dump() };
}

struct StubChatServer::Impl
{
    httplib::Server server;
    std::thread thread;
    Handler handler;
    mutable std::mutex mutex;
    std::vector<std::string> requests;
};

StubChatServer::StubChatServer(Handler handler): _impl(std::make_unique<Impl>())
{
    _impl->handler = std::move(handler);
    auto* impl = _impl.get();
    impl->server.Post("/v1/chat", [impl](const httplib::Request& req, httplib::Response& res) {
        {
            auto lock = std::lock_guard(impl->mutex);
            impl->requests.push_back(req.body);
        }
        auto const request = nlohmann::json::parse(req.body, nullptr, false);
        if (request.is_discarded())
        {
            res.status = 400;
            res.set_content(R"({"error":"invalid json"})", "application/json");
            return;
        }
        auto const reply = impl->handler(request);
        res.status = reply.status;
        res.set_content(reply.body, "application/json");
    });
    _port = impl->server.bind_to_any_port("127.0.0.1");
    if (_port <= 0)
        throw TransportError("stub server could not bind a port", 1);
    impl->thread = std::thread([impl] { impl->server.listen_after_bind(); });
    impl->server.wait_until_ready();
}

StubChatServer::~StubChatServer()
{
    _impl->server.stop();
    if (_impl->thread.joinable())
        _impl->thread.join();
}

auto StubChatServer::cannedTurns(std::vector<std::string> turns) -> Handler
{
    if (turns.empty())
        throw InvalidArgument("canned turns must not be empty");
    return [turns = std::move(turns)](const nlohmann::json& request) {
        auto assistant = std::size_t { 0 };
        for (auto const& m: request.value("messages", nlohmann::json::array()))
            assistant += m.value("role", "") == "assistant" ? 1 : 0;
        return StubReply::turn(turns[std::min(assistant, turns.size() - 1)]);
    };
}

auto StubChatServer::endpoint() const -> std::string
{
    return fmt::format("http://127.0.0.1:{}", _port);
}

auto StubChatServer::requestCount() const -> int
{
    auto lock = std::lock_guard(_impl->mutex);
    return int(_impl->requests.size());
}

auto StubChatServer::requests() const -> std::vector<std::string>
{
    auto lock = std::lock_guard(_impl->mutex);
    return _impl->requests;
}

} // namespace croploop
