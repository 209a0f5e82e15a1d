// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/imaging.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace croploop
{

/// Decode any PNG libpng understands into 8-bit RGB. The image id is the path.
[[nodiscard]] auto loadPng(const std::filesystem::path& path) -> ImageBuffer;

/// Read only the header; throws ImageMissing when the file does not exist.
[[nodiscard]] auto pngDims(const std::filesystem::path& path) -> Dims;

void savePng(const ImageBuffer& img, const std::filesystem::path& path);

[[nodiscard]] auto encodePng(const ImageBuffer& img) -> std::vector<std::uint8_t>;
[[nodiscard]] auto decodePng(std::span<const std::uint8_t> bytes, std::string id) -> ImageBuffer;

} // namespace croploop
