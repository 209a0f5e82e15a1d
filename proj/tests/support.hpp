// SPDX-License-Identifier: Apache-2.0
// Independent oracles and fixtures shared by the unit tests and the acceptance binary.
#pragma once

#include <croploop/geometry.hpp>
#include <croploop/imaging.hpp>
#include <croploop/grpo.hpp>
#include <croploop/resolution.hpp>
#include <croploop/toyworld.hpp>
#include <croploop/util.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace croploop::testing
{

inline auto sourceDir() -> std::filesystem::path
{
    return CROPLOOP_SOURCE_DIR;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir
{
  public:
    explicit TempDir(const std::string& tag)
    {
        auto rng = std::random_device {};
        _path = std::filesystem::temp_directory_path() / ("croploop-" + tag + "-" + std::to_string(rng()));
        std::filesystem::create_directories(_path);
    }
    ~TempDir()
    {
        auto ec = std::error_code {};
        std::filesystem::remove_all(_path, ec);
    }
    TempDir(const TempDir&) = delete;
    auto operator=(const TempDir&) -> TempDir& = delete;

    [[nodiscard]] auto path() const -> const std::filesystem::path& { return _path; }
    [[nodiscard]] auto operator/(const std::string& name) const -> std::filesystem::path { return _path / name; }

  private:
    std::filesystem::path _path;
};

// Pixel rasterization on a 64x64 grid: a box is the set of pixels (x, y) with
// x1 <= x < x2 and y1 <= y < y2, one 64-bit row mask per scanline.
struct Raster
{
    std::array<std::uint64_t, 64> rows {};
};

inline auto rasterize(const Box& b) -> Raster
{
    auto r = Raster {};
    for (int y = 0; y < 64; ++y)
    {
        if (y < b.y1 || y >= b.y2)
            continue;
        for (int x = b.x1; x < b.x2; ++x)
            r.rows[std::size_t(y)] |= std::uint64_t { 1 } << x;
    }
    return r;
}

inline auto pixelCount(const Raster& r) -> std::int64_t
{
    auto n = std::int64_t { 0 };
    for (auto row: r.rows)
        n += std::popcount(row);
    return n;
}

inline auto pixelIntersection(const Raster& a, const Raster& b) -> std::int64_t
{
    auto n = std::int64_t { 0 };
    for (std::size_t y = 0; y < 64; ++y)
        n += std::popcount(a.rows[y] & b.rows[y]);
    return n;
}

/// Boxes inside 64x64, stratified over (width class, height class, position).
inline auto stratifiedBoxes(int perStratum, std::uint64_t seed) -> std::vector<Box>
{
    constexpr std::array<std::pair<int, int>, 6> sizeClasses { { { 1, 1 }, { 2, 4 }, { 5, 12 }, { 13, 28 }, { 29, 50 },
                                                                { 51, 64 } } };
    auto rng = std::mt19937_64(seed);
    auto pick = [&](int lo, int hi) { return lo + int(rng() % std::uint64_t(hi - lo + 1)); };
    auto out = std::vector<Box> {};
    for (auto [wlo, whi]: sizeClasses)
        for (auto [hlo, hhi]: sizeClasses)
            for (int k = 0; k < perStratum; ++k)
            {
                auto const w = pick(wlo, whi);
                auto const h = pick(hlo, hhi);
                auto const x = pick(0, 64 - w);
                auto const y = pick(0, 64 - h);
                out.push_back(Box { x, y, x + w, y + h, {} });
            }
    return out;
}

/// Exhaustive search over every patch-multiple (cols, rows) grid: largest area
/// within budget whose aspect differs from the source by at most one patch step
/// (|cols*h - rows*w| <= min(w, h)); ties prefer lower aspect error, then wider.
inline auto fitOracle(Dims d, std::int64_t budget, int p) -> Dims
{
    if (std::int64_t((d.width + p - 1) / p) * ((d.height + p - 1) / p) <= budget)
        return d;
    auto const w = std::int64_t(d.width);
    auto const h = std::int64_t(d.height);
    auto const maxCols = std::max<std::int64_t>(1, w / p);
    auto const maxRows = std::max<std::int64_t>(1, h / p);
    auto best = std::optional<std::array<std::int64_t, 3>> {};
    for (std::int64_t c = 1; c <= maxCols; ++c)
        for (std::int64_t r = 1; r <= maxRows; ++r)
        {
            if (c * r > budget)
                break;
            auto const err = std::abs(c * h - r * w);
            if (err > std::min(w, h))
                continue;
            auto const better = !best || c * r > (*best)[0] * (*best)[1]
                                || (c * r == (*best)[0] * (*best)[1]
                                    && (err < (*best)[2] || (err == (*best)[2] && c > (*best)[0])));
            if (better)
                best = std::array<std::int64_t, 3> { c, r, err };
        }
    if (!best)
        return w >= h ? Dims { int(std::min(maxCols, budget) * p), p } : Dims { p, int(std::min(maxRows, budget) * p) };
    return Dims { int((*best)[0] * p), int((*best)[1] * p) };
}

/// Answers the reference label at long side >= threshold and a fixed wrong label below.
class ThresholdAnswerer final: public Answerer
{
  public:
    explicit ThresholdAnswerer(int threshold): _threshold(threshold) {}
    auto answer(const ImageBuffer& view, std::string_view) -> std::string override
    {
        ++calls;
        return view.dims().longSide() >= _threshold ? "A" : "C";
    }
    int calls = 0;

  private:
    int _threshold;
};

/// Expected rung of the Answer strategy for a monotone threshold answerer:
/// the largest rung strictly below the smallest agreeing rung, else the last rung.
inline auto thresholdOracle(const std::vector<Dims>& rungs, int threshold) -> std::size_t
{
    auto const agrees = [&](const Dims& d) { return (d.longSide() >= threshold) == (rungs[0].longSide() >= threshold); };
    auto smallestAgreeing = rungs[0].longSide();
    for (auto const& d: rungs)
        if (agrees(d))
            smallestAgreeing = std::min(smallestAgreeing, d.longSide());
    auto best = std::optional<std::size_t> {};
    for (std::size_t i = 0; i < rungs.size(); ++i)
        if (rungs[i].longSide() < smallestAgreeing && (!best || rungs[i].longSide() > rungs[*best].longSide()))
            best = i;
    return best.value_or(rungs.size() - 1);
}

struct GradientCheck
{
    double maxAbsDiff = 0.0;
    double maxAbsGradient = 0.0;
    [[nodiscard]] auto relativeError() const -> double { return maxAbsDiff / std::max(maxAbsGradient, 1e-300); }
};

/// Random rollout groups for a ToyPolicy(grid) whose behaviour policy differs from
/// the current one, then the analytic surrogate gradient against central differences.
inline auto toyGradientCheck(std::uint64_t seed, int grid = 2, double h = 1e-6) -> GradientCheck
{
    auto rng = std::mt19937_64(seed);
    auto normal = std::normal_distribution<double>(0.0, 1.0);
    auto behaviour = ToyPolicy(grid);
    auto params = behaviour.parameters();
    for (auto& p: params)
        p = normal(rng);
    behaviour.setParameters(params);

    auto const dims = Dims { 100, 100 };
    auto groups = std::vector<RolloutGroup> {};
    for (int g = 0; g < 3; ++g)
    {
        auto trajectories = std::vector<Trajectory> {};
        auto rewards = std::vector<double> {};
        for (int i = 0; i < 8; ++i)
        {
            auto traj = Trajectory {};
            traj.originalDims = dims;
            auto const action = behaviour.sample(rng);
            if (action != behaviour.answerNowAction())
                traj.cropBoxesOriginalSpace.push_back(toyCellBox(action, grid, dims));
            trajectories.push_back(std::move(traj));
            rewards.push_back(normal(rng));
        }
        groups.push_back(RolloutGroup::make("g" + std::to_string(g), std::move(trajectories), std::move(rewards), behaviour));
    }

    auto current = ToyPolicy(grid);
    for (auto& p: params)
        p += 0.25 * normal(rng);
    current.setParameters(params);

    auto const analytic = surrogateGradient(current, groups, 0.2);
    auto out = GradientCheck {};
    for (std::size_t k = 0; k < params.size(); ++k)
    {
        auto plus = params;
        auto minus = params;
        plus[k] += h;
        minus[k] -= h;
        current.setParameters(plus);
        auto const fPlus = surrogateObjective(current, groups, 0.2);
        current.setParameters(minus);
        auto const fMinus = surrogateObjective(current, groups, 0.2);
        auto const numeric = (fPlus - fMinus) / (2 * h);
        out.maxAbsDiff = std::max(out.maxAbsDiff, std::abs(numeric - analytic[k]));
        out.maxAbsGradient = std::max(out.maxAbsGradient, std::abs(numeric));
    }
    return out;
}

} // namespace croploop::testing
