// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace croploop
{

[[nodiscard]] auto sha256Hex(std::span<const std::uint8_t> bytes) -> std::string;
[[nodiscard]] auto sha256Hex(std::string_view text) -> std::string;

[[nodiscard]] auto base64Encode(std::span<const std::uint8_t> bytes) -> std::string;
[[nodiscard]] auto base64Decode(std::string_view text) -> std::vector<std::uint8_t>;

/// Write to a sibling temp file, then rename over `path`.
void atomicWriteFile(const std::filesystem::path& path, std::string_view contents);

[[nodiscard]] auto readTextFile(const std::filesystem::path& path) -> std::string;

/// Uniform double in [0,1) from the top 53 bits of a 64-bit word.
[[nodiscard]] constexpr auto unitInterval(std::uint64_t word) noexcept -> double
{
    return double(word >> 11) * 0x1.0p-53;
}

/// splitmix64 mixing step, used to derive independent seeds.
[[nodiscard]] constexpr auto mixSeed(std::uint64_t x) noexcept -> std::uint64_t
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

[[nodiscard]] auto mixSeed(std::uint64_t seed, std::string_view tag) -> std::uint64_t;

/// Run fn(i) for i in [0, n) on up to `workers` threads (0 = hardware concurrency).
/// The first exception thrown by any call is rethrown after all workers stop.
void parallelFor(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn);

} // namespace croploop
