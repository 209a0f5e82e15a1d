// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/policy.hpp>

#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace croploop
{

struct RemotePolicyConfig
{
    /// Base URL, e.g. "http://127.0.0.1:8080". Only plain http is supported.
    std::string endpoint;
    std::string path = "/v1/chat";
    /// Sent as "Authorization: Bearer <token>" when non-empty.
    std::string token;
    double temperature = 0.0;
    std::chrono::milliseconds timeout { 60'000 };
    int attempts = 3;
    /// Delay before retry k (1-based) is backoff * 2^(k-1).
    std::chrono::milliseconds backoff { 250 };
    int maxInFlight = 4;
    ImageEncoding encoding = ImageEncoding::InlinePng;

    /// Endpoint from CROPLOOP_ENDPOINT and token from CROPLOOP_TOKEN; nullopt when the endpoint is unset.
    static auto fromEnvironment() -> std::optional<RemotePolicyConfig>;
};

/// Request body for one completion: {"messages", "max_tokens", "temperature"}.
[[nodiscard]] auto chatRequestBody(const MessageSequence& messages, int maxTokens, double temperature,
                                   ImageEncoding encoding) -> nlohmann::json;

/// Extracts choices[0].message.content, falling back to a top-level "text" string.
/// Throws RemoteError(200, excerpt) when neither is present.
[[nodiscard]] auto chatResponseText(const nlohmann::json& response) -> std::string;

/// JSON-over-HTTP chat client. Transport failures and 5xx responses are retried;
/// 4xx responses fail immediately with RemoteError.
class RemotePolicy final: public Policy
{
  public:
    explicit RemotePolicy(RemotePolicyConfig config);

    auto complete(const MessageSequence& messages, int maxTokens) -> std::string override;

    [[nodiscard]] auto config() const noexcept -> const RemotePolicyConfig& { return _config; }

  private:
    auto attemptOnce(const std::string& body, int& status, std::string& responseBody) -> bool;

    RemotePolicyConfig _config;
    std::mutex _slotMutex;
    std::condition_variable _slotFree;
    int _inFlight = 0;
};

struct StubReply
{
    int status = 200;
    std::string body;

    /// 200 with {"choices":[{"message":{"role":"assistant","content":text}}]}.
    static auto turn(std::string_view text) -> StubReply;
};

/// Loopback chat server for tests and local demos. Binds 127.0.0.1 on an
/// ephemeral port and answers POST /v1/chat through `handler`.
class StubChatServer
{
  public:
    using Handler = std::function<StubReply(const nlohmann::json& request)>;

    explicit StubChatServer(Handler handler);
    ~StubChatServer();

    StubChatServer(const StubChatServer&) = delete;
    auto operator=(const StubChatServer&) -> StubChatServer& = delete;

    /// Replies with turns[k], k = number of assistant messages in the request (last turn repeats).
    static auto cannedTurns(std::vector<std::string> turns) -> Handler;

    [[nodiscard]] auto port() const noexcept -> int { return _port; }
    [[nodiscard]] auto endpoint() const -> std::string;
    [[nodiscard]] auto requestCount() const -> int;
    /// Raw request bodies in arrival order.
    [[nodiscard]] auto requests() const -> std::vector<std::string>;

  private:
    struct Impl;
    std::unique_ptr<Impl> _impl;
    int _port = 0;
};

} // namespace croploop
