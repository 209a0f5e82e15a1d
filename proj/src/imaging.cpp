// SPDX-License-Identifier: Apache-2.0
#include <croploop/error.hpp>
#include <croploop/imaging.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <span>

namespace croploop
{

// ---------------------------------------------------------------------------
// geometry

auto intersectionArea(const Box& a, const Box& b) noexcept -> std::int64_t
{
    auto const x1 = std::max(a.x1, b.x1);
    auto const y1 = std::max(a.y1, b.y1);
    auto const x2 = std::min(a.x2, b.x2);
    auto const y2 = std::min(a.y2, b.y2);
    if (x2 <= x1 || y2 <= y1)
        return 0;
    return (std::int64_t(x2) - x1) * (std::int64_t(y2) - y1);
}

auto contains(const Box& outer, const Box& inner) noexcept -> bool
{
    return outer.x1 <= inner.x1 && outer.y1 <= inner.y1 && inner.x2 <= outer.x2 && inner.y2 <= outer.y2;
}

auto clampBox(const Box& box, Dims dims) -> std::optional<Box>
{
    auto out = Box {
        .x1 = std::clamp(box.x1, 0, dims.width),
        .y1 = std::clamp(box.y1, 0, dims.height),
        .x2 = std::clamp(box.x2, 0, dims.width),
        .y2 = std::clamp(box.y2, 0, dims.height),
        .space = box.space,
    };
    if (out.x2 <= out.x1 || out.y2 <= out.y1)
        return std::nullopt;
    return out;
}

auto nestingViolation(std::span<const Box> boxes) noexcept -> std::optional<std::size_t>
{
    for (std::size_t i = 1; i < boxes.size(); ++i)
        if (!contains(boxes[i], boxes[i - 1]))
            return i;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// ImageBuffer

ImageBuffer::ImageBuffer(std::string id, int width, int height, std::vector<std::uint8_t> pixels):
    _id(std::move(id)), _width(width), _height(height), _pixels(std::move(pixels))
{
    if (width < 1 || height < 1)
        throw InvalidArgument(fmt::format("image dims must be positive, got {}x{}", width, height));
    if (_pixels.size() != std::size_t(width) * std::size_t(height) * 3)
        throw InvalidArgument(
            fmt::format("pixel buffer has {} bytes, expected {} for {}x{} RGB", _pixels.size(),
                        std::size_t(width) * std::size_t(height) * 3, width, height));
}

auto ImageBuffer::filled(std::string id, int width, int height, std::array<std::uint8_t, 3> rgb) -> ImageBuffer
{
    if (width < 1 || height < 1)
        throw InvalidArgument(fmt::format("image dims must be positive, got {}x{}", width, height));
    auto pixels = std::vector<std::uint8_t>(std::size_t(width) * std::size_t(height) * 3);
    for (std::size_t i = 0; i < pixels.size(); i += 3)
    {
        pixels[i] = rgb[0];
        pixels[i + 1] = rgb[1];
        pixels[i + 2] = rgb[2];
    }
    return ImageBuffer(std::move(id), width, height, std::move(pixels));
}

// ---------------------------------------------------------------------------
// token budgeting

auto tokenCount(int width, int height, PatchGrid grid) -> std::int64_t
{
    if (width < 1 || height < 1)
        throw InvalidArgument(fmt::format("token_count needs positive dims, got {}x{}", width, height));
    if (grid.patchSize < 1)
        throw InvalidArgument("patch size must be >= 1");
    auto const p = std::int64_t(grid.patchSize);
    return ((width + p - 1) / p) * ((height + p - 1) / p);
}

auto budgetDims(Dims dims, std::int64_t budget, PatchGrid grid) -> Dims
{
    if (budget < 1)
        throw InvalidArgument("token budget must be >= 1");
    if (tokenCount(dims, grid) <= budget)
        return dims;

    auto const p = std::int64_t(grid.patchSize);
    auto const w = std::int64_t(dims.width);
    auto const h = std::int64_t(dims.height);
    auto const maxCols = std::max<std::int64_t>(1, w / p);
    auto const maxRows = std::max<std::int64_t>(1, h / p);
    auto const tolerance = std::min(w, h);

    // |cols*h - rows*w| <= min(w,h) is "long side within one patch of short side * aspect".
    struct Candidate
    {
        std::int64_t cols = 0, rows = 0, area = 0, aspectError = 0;
    };
    auto best = std::optional<Candidate> {};

    for (std::int64_t rows = 1; rows <= std::min(maxRows, budget); ++rows)
    {
        auto const colsCap = std::min(maxCols, budget / rows);
        // cols*h in [rows*w - tol, rows*w + tol]
        auto const lo = std::max<std::int64_t>(1, (rows * w - tolerance + h - 1) / h);
        auto const hi = std::min(colsCap, (rows * w + tolerance) / h);
        if (lo > hi)
            continue;
        auto const cols = hi;
        auto const c = Candidate { cols, rows, cols * rows, std::abs(cols * h - rows * w) };
        if (!best || c.area > best->area || (c.area == best->area && c.aspectError < best->aspectError)
            || (c.area == best->area && c.aspectError == best->aspectError && c.cols > best->cols))
            best = c;
    }

    if (!best)
    {
        // Aspect too extreme for the budget: one patch on the short side.
        if (w >= h)
            best = Candidate { std::min(maxCols, budget), 1, 0, 0 };
        else
            best = Candidate { 1, std::min(maxRows, budget), 0, 0 };
    }
    return Dims { int(best->cols * p), int(best->rows * p) };
}

namespace
{

    struct Tap
    {
        int index;
        double weight;
    };

    // Taps of destination d are taps[begin[d] .. begin[d + 1]), in source order.
    struct TapTable
    {
        std::vector<std::size_t> begin;
        std::vector<Tap> taps;

        [[nodiscard]] auto of(int d) const -> std::span<const Tap>
        {
            return { taps.data() + begin[std::size_t(d)], begin[std::size_t(d) + 1] - begin[std::size_t(d)] };
        }
    };

    // Exact coverage weights of source pixels [i, i+1) under each destination interval.
    auto areaTaps(int srcLen, int dstLen) -> TapTable
    {
        auto table = TapTable {};
        table.begin.reserve(std::size_t(dstLen) + 1);
        auto const scale = double(srcLen) / double(dstLen);
        for (int d = 0; d < dstLen; ++d)
        {
            table.begin.push_back(table.taps.size());
            auto const lo = d * scale;
            auto const hi = (d + 1) * scale;
            auto const first = int(std::floor(lo));
            auto const last = std::min(srcLen - 1, int(std::ceil(hi)) - 1);
            for (int s = first; s <= last; ++s)
            {
                auto const cover = std::min(hi, double(s + 1)) - std::max(lo, double(s));
                if (cover > 0)
                    table.taps.push_back({ s, cover / scale });
            }
        }
        table.begin.push_back(table.taps.size());
        return table;
    }

    auto toByte(double v) -> std::uint8_t
    {
        // Half away from zero, as std::lround, without the libm call.
        v = std::clamp(v, 0.0, 255.0);
        auto const whole = int(v);
        return std::uint8_t(whole + (v - whole >= 0.5 ? 1 : 0));
    }

} // namespace

auto resizeArea(const ImageBuffer& img, Dims target) -> ImageBuffer
{
    if (target.width < 1 || target.height < 1)
        throw InvalidArgument(fmt::format("resize target must be positive, got {}x{}", target.width, target.height));
    if (target == img.dims())
        return img;

    auto const srcW = img.width();
    auto const srcH = img.height();
    auto const src = img.pixels();
    auto const xTaps = areaTaps(srcW, target.width);
    auto const yTaps = areaTaps(srcH, target.height);

    // Vertical pass over whole source rows (contiguous, vectorizes), then a
    // horizontal pass on the single accumulated row.
    auto const srcStride = std::size_t(srcW) * 3;
    auto const rowStride = std::size_t(target.width) * 3;
    auto pixels = std::vector<std::uint8_t>(std::size_t(target.height) * rowStride);
    auto column = std::vector<double>(srcStride);
    for (int y = 0; y < target.height; ++y)
    {
        std::fill(column.begin(), column.end(), 0.0);
        for (auto const& tap: yTaps.of(y))
        {
            auto const* in = &src[std::size_t(tap.index) * srcStride];
            for (std::size_t i = 0; i < srcStride; ++i)
                column[i] += tap.weight * double(in[i]);
        }
        auto* out = &pixels[std::size_t(y) * rowStride];
        for (int x = 0; x < target.width; ++x)
        {
            auto r = 0.0, g = 0.0, b = 0.0;
            for (auto const& tap: xTaps.of(x))
            {
                auto const* px = &column[std::size_t(tap.index) * 3];
                r += tap.weight * px[0];
                g += tap.weight * px[1];
                b += tap.weight * px[2];
            }
            out[std::size_t(x) * 3] = toByte(r);
            out[std::size_t(x) * 3 + 1] = toByte(g);
            out[std::size_t(x) * 3 + 2] = toByte(b);
        }
    }
    return ImageBuffer(fmt::format("{}~{}x{}", img.id(), target.width, target.height), target.width, target.height,
                       std::move(pixels));
}

auto fitToBudget(const ImageBuffer& img, std::int64_t budget, PatchGrid grid) -> ImageBuffer
{
    auto const target = budgetDims(img.dims(), budget, grid);
    if (target == img.dims())
        return img;
    return resizeArea(img, target);
}

auto crop(const ImageBuffer& img, const Box& box) -> ImageBuffer
{
    if (box.space != img.id())
        throw InvalidArgument(fmt::format("box lives in '{}' but image is '{}'", box.space, img.id()));
    auto const clamped = clampBox(box, img.dims());
    if (!clamped)
        throw OutOfBounds(fmt::format("box ({},{},{},{}) has no area inside {}x{}", box.x1, box.y1, box.x2, box.y2,
                                      img.width(), img.height()));
    auto const& b = *clamped;
    auto const w = int(b.width());
    auto const h = int(b.height());
    auto pixels = std::vector<std::uint8_t>(std::size_t(w) * std::size_t(h) * 3);
    auto const src = img.pixels();
    for (int y = 0; y < h; ++y)
    {
        auto const srcOffset = (std::size_t(b.y1 + y) * std::size_t(img.width()) + std::size_t(b.x1)) * 3;
        std::copy_n(src.begin() + std::ptrdiff_t(srcOffset), std::size_t(w) * 3,
                    pixels.begin() + std::ptrdiff_t(std::size_t(y) * std::size_t(w) * 3));
    }
    return ImageBuffer(fmt::format("{}@{},{},{},{}", img.id(), b.x1, b.y1, b.x2, b.y2), w, h, std::move(pixels));
}

auto noiseLike(int width, int height, std::uint64_t seed) -> ImageBuffer
{
    if (width < 1 || height < 1)
        throw InvalidArgument(fmt::format("noise dims must be positive, got {}x{}", width, height));
    auto pixels = std::vector<std::uint8_t>(std::size_t(width) * std::size_t(height) * 3);
    // Raw engine words keep the byte stream identical across standard libraries.
    auto engine = std::mt19937_64(seed);
    for (std::size_t i = 0; i < pixels.size(); i += 8)
    {
        auto word = engine();
        for (std::size_t k = 0; k < 8 && i + k < pixels.size(); ++k, word >>= 8)
            pixels[i + k] = std::uint8_t(word & 0xFF);
    }
    return ImageBuffer(fmt::format("noise:{}x{}:{}", width, height, seed), width, height, std::move(pixels));
}

namespace
{

    auto scaleCoord(int v, int from, int to) -> int
    {
        // round-half-up of v * to / from for non-negative v
        auto const num = 2 * std::int64_t(v) * to + from;
        return int(num / (2 * std::int64_t(from)));
    }

    // Scales [v1, v2) along one axis. A span that rounds to zero width grows by one
    // pixel towards the side its unrounded centre lies on.
    void scaleSpan(int v1, int v2, int from, int to, int& lo, int& hi)
    {
        v1 = std::max(v1, 0);
        v2 = std::max(v2, 0);
        lo = std::clamp(scaleCoord(v1, from, to), 0, to);
        hi = std::clamp(scaleCoord(v2, from, to), 0, to);
        if (hi > lo)
            return;
        auto const centreBelow = (std::int64_t(v1) + v2) * to < 2 * std::int64_t(lo) * from;
        if (lo == to || (centreBelow && lo > 0))
        {
            hi = lo;
            lo = hi - 1;
        }
        else
            hi = lo + 1;
    }

} // namespace

auto mapBox(const Box& box, Dims from, Dims to, std::string toSpace) -> Box
{
    if (from.width < 1 || from.height < 1 || to.width < 1 || to.height < 1)
        throw InvalidArgument("map_box needs positive dims");
    auto out = Box { .space = std::move(toSpace) };
    scaleSpan(box.x1, box.x2, from.width, to.width, out.x1, out.x2);
    scaleSpan(box.y1, box.y2, from.height, to.height, out.y1, out.y2);
    return out;
}

} // namespace croploop
