#pragma once

// Discretized 2D world: grid geometry, obstacle raster, inlet wind.
//
// Conventions: row-major cells, origin at the lower-left corner, x grows with
// the column index and y with the row index. World coordinates in meters.
// Cells are half-open boxes [low, high) on both axes.

#include "rankgsl/errors.hpp"

#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rankgsl {

struct Vec2 {
    double x{0.0};
    double y{0.0};

    friend bool operator==(const Vec2&, const Vec2&) = default;

    Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
    Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
    friend Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
    friend Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
    friend Vec2 operator*(double s, const Vec2& v) { return {s * v.x, s * v.y}; }

    double norm() const { return std::hypot(x, y); }
};

inline double distance(const Vec2& a, const Vec2& b) { return (a - b).norm(); }

/// Linear (row-major) index of a grid cell.
struct CellIndex {
    std::size_t value{0};

    friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

struct GridCoord {
    int col{0};
    int row{0};

    friend bool operator==(const GridCoord&, const GridCoord&) = default;
};

/// Axis-aligned obstacle rectangle in meters. A cell is occupied when its
/// center lies inside [x_min, x_max) x [y_min, y_max).
struct Rect {
    double x_min{0.0};
    double y_min{0.0};
    double x_max{0.0};
    double y_max{0.0};

    friend bool operator==(const Rect&, const Rect&) = default;

    bool contains(const Vec2& p) const {
        return p.x >= x_min && p.x < x_max && p.y >= y_min && p.y < y_max;
    }
};

class Environment {
public:
    Environment() = default;

    /// Builds and validates an environment, rasterizing `obstacles` onto the
    /// grid. Throws ValidationError naming the offending field.
    Environment(int width_cells, int height_cells, double cell_size, Vec2 inlet_wind,
                std::uint64_t seed, std::vector<Rect> obstacles = {})
        : width_(width_cells), height_(height_cells), cell_size_(cell_size),
          inlet_wind_(inlet_wind), seed_(seed), obstacles_(std::move(obstacles)) {
        if (width_ <= 0) throw ValidationError("width_cells", "must be a positive integer");
        if (height_ <= 0) throw ValidationError("height_cells", "must be a positive integer");
        if (!(cell_size_ > 0.0) || !std::isfinite(cell_size_))
            throw ValidationError("cell_size", "must be finite and > 0");
        if (!std::isfinite(inlet_wind_.x) || !std::isfinite(inlet_wind_.y))
            throw ValidationError("inlet_wind", "must be finite");
        for (const auto& r : obstacles_) {
            if (!(r.x_max > r.x_min) || !(r.y_max > r.y_min))
                throw ValidationError("obstacles", "rectangle has non-positive extent");
        }
        mask_.assign(cell_count(), 0);
        for (std::size_t i = 0; i < mask_.size(); ++i) {
            const Vec2 c = center_of(i);
            for (const auto& r : obstacles_) {
                if (r.contains(c)) {
                    mask_[i] = 1;
                    break;
                }
            }
        }
        free_count_ = 0;
        for (auto m : mask_) free_count_ += (m == 0);
        if (free_count_ == 0) throw ValidationError("obstacles", "no free cell left in the grid");
    }

    int width_cells() const noexcept { return width_; }
    int height_cells() const noexcept { return height_; }
    double cell_size() const noexcept { return cell_size_; }
    const Vec2& inlet_wind() const noexcept { return inlet_wind_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<Rect>& obstacles() const noexcept { return obstacles_; }
    const std::vector<std::uint8_t>& obstacle_mask() const noexcept { return mask_; }

    std::size_t cell_count() const noexcept {
        return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
    }
    std::size_t free_cell_count() const noexcept { return free_count_; }
    double width_m() const noexcept { return width_ * cell_size_; }
    double height_m() const noexcept { return height_ * cell_size_; }
    double cell_diagonal() const noexcept { return cell_size_ * std::sqrt(2.0); }

    bool in_grid(GridCoord g) const noexcept {
        return g.col >= 0 && g.col < width_ && g.row >= 0 && g.row < height_;
    }
    bool in_grid(CellIndex c) const noexcept { return c.value < cell_count(); }

    bool is_obstacle(CellIndex c) const { return mask_.at(c.value) != 0; }
    bool is_free(CellIndex c) const { return in_grid(c) && mask_[c.value] == 0; }
    bool is_free(GridCoord g) const { return in_grid(g) && mask_[index_unchecked(g)] == 0; }

    CellIndex index_of(GridCoord g) const {
        if (!in_grid(g))
            throw DomainError("grid coordinate (" + std::to_string(g.col) + ", " +
                              std::to_string(g.row) + ") outside grid");
        return CellIndex{index_unchecked(g)};
    }

    GridCoord coord_of(CellIndex c) const {
        if (!in_grid(c)) throw DomainError("cell index " + std::to_string(c.value) + " outside grid");
        return {static_cast<int>(c.value % static_cast<std::size_t>(width_)),
                static_cast<int>(c.value / static_cast<std::size_t>(width_))};
    }

    std::vector<CellIndex> free_cells() const {
        std::vector<CellIndex> out;
        out.reserve(free_count_);
        for (std::size_t i = 0; i < mask_.size(); ++i)
            if (mask_[i] == 0) out.push_back(CellIndex{i});
        return out;
    }

    friend bool operator==(const Environment&, const Environment&) = default;

private:
    std::size_t index_unchecked(GridCoord g) const noexcept {
        return static_cast<std::size_t>(g.row) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(g.col);
    }
    Vec2 center_of(std::size_t i) const {
        const auto w = static_cast<std::size_t>(width_);
        return {(static_cast<double>(i % w) + 0.5) * cell_size_,
                (static_cast<double>(i / w) + 0.5) * cell_size_};
    }

    int width_{0};
    int height_{0};
    double cell_size_{1.0};
    Vec2 inlet_wind_{};
    std::uint64_t seed_{0};
    std::vector<Rect> obstacles_;
    std::vector<std::uint8_t> mask_;
    std::size_t free_count_{0};
};

inline Vec2 cell_center(const Environment& env, CellIndex cell) {
    const GridCoord g = env.coord_of(cell);
    return {(g.col + 0.5) * env.cell_size(), (g.row + 0.5) * env.cell_size()};
}

inline Vec2 cell_center(const Environment& env, GridCoord g) {
    return cell_center(env, env.index_of(g));
}

/// Cell containing `pos`; boundary points go to the higher-index cell.
inline CellIndex position_to_cell(const Environment& env, const Vec2& pos) {
    if (!(pos.x >= 0.0 && pos.y >= 0.0 && pos.x < env.width_m() && pos.y < env.height_m()))
        throw DomainError("position (" + std::to_string(pos.x) + ", " + std::to_string(pos.y) +
                          ") outside grid");
    const int col = std::min(static_cast<int>(std::floor(pos.x / env.cell_size())), env.width_cells() - 1);
    const int row = std::min(static_cast<int>(std::floor(pos.y / env.cell_size())), env.height_cells() - 1);
    return env.index_of({col, row});
}

inline bool contains(const Environment& env, const Vec2& pos) {
    return pos.x >= 0.0 && pos.y >= 0.0 && pos.x < env.width_m() && pos.y < env.height_m();
}

} // namespace rankgsl
