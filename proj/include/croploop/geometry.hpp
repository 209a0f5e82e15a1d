// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace croploop
{

/// Width and height in pixels.
struct Dims
{
    int width = 0;
    int height = 0;

    [[nodiscard]] auto longSide() const noexcept -> int { return width > height ? width : height; }
    [[nodiscard]] auto shortSide() const noexcept -> int { return width < height ? width : height; }

    friend auto operator==(const Dims&, const Dims&) -> bool = default;
};

/// Axis-aligned half-open pixel rectangle [x1,x2) x [y1,y2) in the image named by `space`.
struct Box
{
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;
    std::string space;

    [[nodiscard]] auto width() const noexcept -> std::int64_t { return std::int64_t(x2) - x1; }
    [[nodiscard]] auto height() const noexcept -> std::int64_t { return std::int64_t(y2) - y1; }
    [[nodiscard]] auto area() const noexcept -> std::int64_t
    {
        return width() > 0 && height() > 0 ? width() * height() : 0;
    }
    [[nodiscard]] auto empty() const noexcept -> bool { return area() == 0; }

    /// True when the box satisfies 0 <= x1 < x2 <= w and 0 <= y1 < y2 <= h.
    [[nodiscard]] auto validIn(Dims dims) const noexcept -> bool
    {
        return x1 >= 0 && y1 >= 0 && x1 < x2 && y1 < y2 && x2 <= dims.width && y2 <= dims.height;
    }

    [[nodiscard]] auto sameRect(const Box& other) const noexcept -> bool
    {
        return x1 == other.x1 && y1 == other.y1 && x2 == other.x2 && y2 == other.y2;
    }

    friend auto operator==(const Box&, const Box&) -> bool = default;
};

[[nodiscard]] auto intersectionArea(const Box& a, const Box& b) noexcept -> std::int64_t;

/// `inner` lies entirely within `outer`.
[[nodiscard]] auto contains(const Box& outer, const Box& inner) noexcept -> bool;

/// Clamp to [0,w) x [0,h); nullopt when nothing of positive area remains.
[[nodiscard]] auto clampBox(const Box& box, Dims dims) -> std::optional<Box>;

/// Index of the first box that fails to contain its predecessor, if any.
/// Boxes are ordered innermost first.
[[nodiscard]] auto nestingViolation(std::span<const Box> boxes) noexcept -> std::optional<std::size_t>;

} // namespace croploop
