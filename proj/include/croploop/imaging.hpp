// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <croploop/geometry.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace croploop
{

/// Row-major RGB image, three bytes per pixel.
class ImageBuffer
{
  public:
    /// Throws InvalidArgument unless width, height >= 1 and pixels.size() == 3*w*h.
    ImageBuffer(std::string id, int width, int height, std::vector<std::uint8_t> pixels);

    /// Solid-colour image.
    static auto filled(std::string id, int width, int height, std::array<std::uint8_t, 3> rgb) -> ImageBuffer;

    [[nodiscard]] auto id() const noexcept -> const std::string& { return _id; }
    [[nodiscard]] auto width() const noexcept -> int { return _width; }
    [[nodiscard]] auto height() const noexcept -> int { return _height; }
    [[nodiscard]] auto dims() const noexcept -> Dims { return { _width, _height }; }
    [[nodiscard]] auto pixels() const noexcept -> std::span<const std::uint8_t> { return _pixels; }
    [[nodiscard]] auto mutablePixels() noexcept -> std::span<std::uint8_t> { return _pixels; }

    [[nodiscard]] auto at(int x, int y) const noexcept -> std::array<std::uint8_t, 3>
    {
        auto const* p = &_pixels[(std::size_t(y) * std::size_t(_width) + std::size_t(x)) * 3];
        return { p[0], p[1], p[2] };
    }

    void set(int x, int y, std::array<std::uint8_t, 3> rgb) noexcept
    {
        auto* p = &_pixels[(std::size_t(y) * std::size_t(_width) + std::size_t(x)) * 3];
        p[0] = rgb[0];
        p[1] = rgb[1];
        p[2] = rgb[2];
    }

    void setId(std::string id) { _id = std::move(id); }

    /// Same dimensions and bytes; ids are ignored.
    [[nodiscard]] auto samePixels(const ImageBuffer& other) const noexcept -> bool
    {
        return _width == other._width && _height == other._height && _pixels == other._pixels;
    }

  private:
    std::string _id;
    int _width;
    int _height;
    std::vector<std::uint8_t> _pixels;
};

/// Patch-grid visual-token granularity: one token per patch_size x patch_size cell.
struct PatchGrid
{
    int patchSize = 28;
};

/// ceil(w/p) * ceil(h/p).
[[nodiscard]] auto tokenCount(int width, int height, PatchGrid grid = {}) -> std::int64_t;
[[nodiscard]] inline auto tokenCount(Dims dims, PatchGrid grid = {}) -> std::int64_t
{
    return tokenCount(dims.width, dims.height, grid);
}

/// Target dimensions fit_to_budget would produce for an image of `dims`.
///
/// Images already within budget keep their dims. Otherwise the result is the
/// largest-area patch-multiple grid (cols x rows) with cols*rows <= budget,
/// no upsampling beyond the source grid, and the long-side count within one
/// patch of short-side count times the source aspect ratio. Ties prefer the
/// smaller aspect error, then more columns.
[[nodiscard]] auto budgetDims(Dims dims, std::int64_t budget, PatchGrid grid = {}) -> Dims;

/// Area-averaging resize to budgetDims; returns the input unchanged when it fits.
[[nodiscard]] auto fitToBudget(const ImageBuffer& img, std::int64_t budget, PatchGrid grid = {}) -> ImageBuffer;

/// Box-filter (exact area coverage) resampling to arbitrary dims.
[[nodiscard]] auto resizeArea(const ImageBuffer& img, Dims target) -> ImageBuffer;

/// Pixel-exact copy of `box` (clamped to the image). Throws InvalidArgument
/// when box.space differs from img.id(), OutOfBounds when nothing remains.
[[nodiscard]] auto crop(const ImageBuffer& img, const Box& box) -> ImageBuffer;

/// Seeded iid uniform bytes; a pure function of (width, height, seed).
[[nodiscard]] auto noiseLike(int width, int height, std::uint64_t seed) -> ImageBuffer;

/// Rescale a box between pixel spaces: round to nearest, clamp to `to`,
/// and grow degenerate results to at least 1x1.
[[nodiscard]] auto mapBox(const Box& box, Dims from, Dims to, std::string toSpace) -> Box;

} // namespace croploop
