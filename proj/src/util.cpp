// SPDX-License-Identifier: Apache-2.0
#include <croploop/error.hpp>
#include <croploop/util.hpp>

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <fstream>
#include <memory>
#include <sstream>

namespace croploop
{

auto sha256Hex(std::span<const std::uint8_t> bytes) -> std::string
{
    auto digest = std::array<unsigned char, EVP_MAX_MD_SIZE> {};
    auto length = 0u;
    auto ctx = std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)>(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1
        || EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1
        || EVP_DigestFinal_ex(ctx.get(), digest.data(), &length) != 1)
        throw Error("sha256 failed");
    auto out = std::string {};
    out.reserve(length * 2);
    for (auto i = 0u; i < length; ++i)
        out += fmt::format("{:02x}", digest[i]);
    return out;
}

auto sha256Hex(std::string_view text) -> std::string
{
    return sha256Hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace
{
    constexpr auto alphabet = std::string_view("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/");
}

auto base64Encode(std::span<const std::uint8_t> bytes) -> std::string
{
    auto out = std::string {};
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3)
    {
        auto const n = (std::uint32_t(bytes[i]) << 16) | (std::uint32_t(bytes[i + 1]) << 8) | bytes[i + 2];
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += alphabet[(n >> 6) & 63];
        out += alphabet[n & 63];
    }
    if (auto const rest = bytes.size() - i; rest > 0)
    {
        auto n = std::uint32_t(bytes[i]) << 16;
        if (rest == 2)
            n |= std::uint32_t(bytes[i + 1]) << 8;
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += rest == 2 ? alphabet[(n >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

auto base64Decode(std::string_view text) -> std::vector<std::uint8_t>
{
    auto out = std::vector<std::uint8_t> {};
    std::uint32_t buffer = 0;
    int bits = 0;
    for (auto c: text)
    {
        if (c == '=')
            break;
        auto const pos = alphabet.find(c);
        if (pos == std::string_view::npos)
        {
            if (c == '\n' || c == '\r' || c == ' ')
                continue;
            throw InvalidArgument("invalid base64 character");
        }
        buffer = (buffer << 6) | std::uint32_t(pos);
        bits += 6;
        if (bits >= 8)
        {
            bits -= 8;
            out.push_back(std::uint8_t((buffer >> bits) & 0xFF));
        }
    }
    return out;
}

void atomicWriteFile(const std::filesystem::path& path, std::string_view contents)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        auto out = std::ofstream(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(fmt::format("cannot write '{}'", tmp.string()));
        out.write(contents.data(), std::streamsize(contents.size()));
        if (!out)
            throw Error(fmt::format("short write to '{}'", tmp.string()));
    }
    std::filesystem::rename(tmp, path);
}

auto readTextFile(const std::filesystem::path& path) -> std::string
{
    auto in = std::ifstream(path, std::ios::binary);
    if (!in)
        throw Error(fmt::format("cannot read '{}'", path.string()));
    auto ss = std::ostringstream {};
    ss << in.rdbuf();
    return ss.str();
}

auto mixSeed(std::uint64_t seed, std::string_view tag) -> std::uint64_t
{
    // FNV-1a over the tag, folded into the seed.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto c: tag)
    {
        h ^= std::uint8_t(c);
        h *= 0x100000001b3ULL;
    }
    return mixSeed(seed ^ mixSeed(h));
}

void parallelFor(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn)
{
    if (workers == 0)
        workers = std::max(1u, std::thread::hardware_concurrency());
    workers = unsigned(std::min<std::size_t>(workers, n));
    if (workers <= 1)
    {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }

    auto next = std::atomic<std::size_t> { 0 };
    auto failed = std::atomic<bool> { false };
    auto firstError = std::exception_ptr {};
    auto errorMutex = std::mutex {};
    auto const work = [&] {
        for (auto i = next++; i < n && !failed; i = next++)
        {
            try
            {
                fn(i);
            }
            catch (...)
            {
                auto lock = std::lock_guard(errorMutex);
                if (!firstError)
                    firstError = std::current_exception();
                failed = true;
            }
        }
    };
    auto threads = std::vector<std::thread> {};
    for (unsigned t = 0; t < workers; ++t)
        threads.emplace_back(work);
    for (auto& t: threads)
        t.join();
    if (firstError)
        std::rethrow_exception(firstError);
}

} // namespace croploop
