#pragma once

// Posterior-guided goal selection, grid path planning, and sampling along a
// path.
//
// Goal selection clusters the posterior mass with weighted k-means over cell
// centers and heads for the cluster with the best mass / (1 + distance)
// trade-off. Paths are 8-connected A* paths on the free cells (diagonal steps
// may not cut obstacle corners).

#include "rankgsl/env_world.hpp"
#include "rankgsl/errors.hpp"
#include "rankgsl/features.hpp"
#include "rankgsl/plume.hpp"
#include "rankgsl/sensor.hpp"
#include "rankgsl/ste.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <span>
#include <string_view>
#include <tuple>
#include <vector>

namespace rankgsl {

inline constexpr double default_robot_speed = 0.27; // m/s

struct Plan {
    Vec2 goal;
    std::vector<Vec2> waypoints;
    double length{0.0};              // meters
    double expected_travel_time{0.0}; // seconds
};

struct PlannerConfig {
    int clusters{3};
    int kmeans_iterations{25};
    std::uint64_t seed{0};
    /// Cells below this fraction of the peak probability are ignored by the
    /// clustering.
    double mass_floor{1e-9};

    friend bool operator==(const PlannerConfig&, const PlannerConfig&) = default;
};

struct GoalCandidate {
    Vec2 goal;
    CellIndex cell;
    double mass{0.0};
    double score{0.0};
};

namespace detail {

inline CellIndex nearest_free_cell(const Environment& env, const Vec2& p, CellIndex exclude,
                                   std::span<const std::uint8_t> skip = {}) {
    double best = std::numeric_limits<double>::infinity();
    CellIndex out{env.cell_count()};
    for (std::size_t i = 0; i < env.cell_count(); ++i) {
        const CellIndex c{i};
        if (!env.is_free(c) || c == exclude) continue;
        if (!skip.empty() && skip[i]) continue;
        const double d = distance(cell_center(env, c), p);
        if (d < best) {
            best = d;
            out = c;
        }
    }
    return out;
}

} // namespace detail

/// Goal candidates ordered by decreasing score. Empty when every cluster sits
/// on the robot's own cell.
inline std::vector<GoalCandidate> rank_goals(const Environment& env, const Posterior& posterior, const Vec2& robot_pos,
                                             const PlannerConfig& cfg) {
    const CellIndex robot_cell = position_to_cell(env, robot_pos);
    const auto p = posterior.probability();
    const double peak = p[posterior.argmax_cell().value];

    std::vector<Vec2> pts;
    std::vector<double> wts;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0 || p[i] < cfg.mass_floor * peak) continue;
        pts.push_back(cell_center(env, CellIndex{i}));
        wts.push_back(p[i]);
    }
    if (pts.empty()) return {};

    // Weighted k-means++ seeding.
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const auto pick = [&](const std::vector<double>& weights) -> std::size_t {
        const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        double u = uni(rng) * total;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            u -= weights[i];
            if (u <= 0.0 && weights[i] > 0.0) return i;
        }
        for (std::size_t i = weights.size(); i-- > 0;)
            if (weights[i] > 0.0) return i;
        return 0;
    };
    std::vector<Vec2> centers{pts[pick(wts)]};
    std::vector<double> d2(pts.size());
    while (static_cast<int>(centers.size()) < cfg.clusters) {
        double total = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) {
                const Vec2 d = pts[i] - c;
                best = std::min(best, d.x * d.x + d.y * d.y);
            }
            d2[i] = wts[i] * best;
            total += d2[i];
        }
        if (!(total > 0.0)) break;
        centers.push_back(pts[pick(d2)]);
    }

    std::vector<int> label(pts.size(), 0);
    std::vector<double> mass(centers.size());
    for (int it = 0; it < cfg.kmeans_iterations; ++it) {
        bool changed = it == 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            int best_k = 0;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < centers.size(); ++k) {
                const Vec2 d = pts[i] - centers[k];
                const double dd = d.x * d.x + d.y * d.y;
                if (dd < best) {
                    best = dd;
                    best_k = static_cast<int>(k);
                }
            }
            if (label[i] != best_k) changed = true;
            label[i] = best_k;
        }
        std::vector<Vec2> sum(centers.size());
        std::fill(mass.begin(), mass.end(), 0.0);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            sum[label[i]] += wts[i] * pts[i];
            mass[label[i]] += wts[i];
        }
        for (std::size_t k = 0; k < centers.size(); ++k)
            if (mass[k] > 0.0) centers[k] = (1.0 / mass[k]) * sum[k];
        if (!changed) break;
    }

    std::vector<GoalCandidate> out;
    for (std::size_t k = 0; k < centers.size(); ++k) {
        if (!(mass[k] > 0.0)) continue;
        CellIndex cell = contains(env, centers[k]) ? position_to_cell(env, centers[k]) : CellIndex{env.cell_count()};
        if (!env.is_free(cell)) cell = detail::nearest_free_cell(env, centers[k], CellIndex{env.cell_count()});
        if (cell == robot_cell) continue;
        const Vec2 goal = cell_center(env, cell);
        out.push_back({goal, cell, mass[k], mass[k] / (1.0 + distance(robot_pos, goal))});
    }
    std::stable_sort(out.begin(), out.end(), [](const GoalCandidate& a, const GoalCandidate& b) {
        return a.score > b.score || (a.score == b.score && a.cell < b.cell);
    });
    return out;
}

/// Nearest free cell to the robot that is neither its own cell nor visited.
inline Vec2 fallback_goal(const Environment& env, const Vec2& robot_pos, std::span<const std::uint8_t> visited) {
    const CellIndex robot_cell = position_to_cell(env, robot_pos);
    CellIndex c = detail::nearest_free_cell(env, robot_pos, robot_cell, visited);
    if (!env.in_grid(c)) c = detail::nearest_free_cell(env, robot_pos, robot_cell);
    if (!env.in_grid(c)) throw UnreachableError("select_goal: no free cell other than the robot's own");
    return cell_center(env, c);
}

/// `visited` (optional) flags cells already traversed, indexed by cell.
inline Vec2 select_goal(const Environment& env, const Posterior& posterior, const Vec2& robot_pos,
                        const PlannerConfig& cfg, std::span<const std::uint8_t> visited = {}) {
    const auto ranked = rank_goals(env, posterior, robot_pos, cfg);
    if (!ranked.empty()) return ranked.front().goal;
    return fallback_goal(env, robot_pos, visited);
}

/// Shortest 8-connected path between the cells of `start` and `goal`,
/// waypoints at cell centers.
inline Plan plan_path(const Environment& env, const Vec2& start, const Vec2& goal,
                      double robot_speed = default_robot_speed) {
    const CellIndex s = position_to_cell(env, start);
    const CellIndex g = position_to_cell(env, goal);
    if (!env.is_free(s)) throw DomainError("plan_path: start is not in a free cell");
    if (!env.is_free(g)) throw DomainError("plan_path: goal is not in a free cell");
    if (!(robot_speed > 0.0)) throw DomainError("plan_path: robot speed must be > 0");

    const GridCoord gc = env.coord_of(g);
    const auto octile = [&](CellIndex c) {
        const GridCoord a = env.coord_of(c);
        const double dx = std::abs(a.col - gc.col), dy = std::abs(a.row - gc.row);
        return std::max(dx, dy) + (std::sqrt(2.0) - 1.0) * std::min(dx, dy);
    };

    const std::size_t n = env.cell_count();
    std::vector<double> cost(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> parent(n, n);
    std::vector<std::uint8_t> closed(n, 0);
    using Item = std::tuple<double, double, std::size_t>; // f, h, index
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    cost[s.value] = 0.0;
    open.emplace(octile(s), octile(s), s.value);

    static constexpr int dc[8] = {1, -1, 0, 0, 1, 1, -1, -1};
    static constexpr int dr[8] = {0, 0, 1, -1, 1, -1, 1, -1};
    while (!open.empty()) {
        const auto [f, hval, cur] = open.top();
        open.pop();
        if (closed[cur]) continue;
        closed[cur] = 1;
        if (cur == g.value) break;
        const GridCoord a = env.coord_of(CellIndex{cur});
        for (int k = 0; k < 8; ++k) {
            const GridCoord b{a.col + dc[k], a.row + dr[k]};
            if (!env.is_free(b)) continue;
            if (k >= 4 && (!env.is_free(GridCoord{a.col + dc[k], a.row}) || !env.is_free(GridCoord{a.col, a.row + dr[k]})))
                continue;
            const std::size_t nb = env.index_of(b).value;
            if (closed[nb]) continue;
            const double step = k >= 4 ? std::sqrt(2.0) : 1.0;
            const double c = cost[cur] + step;
            if (c < cost[nb]) {
                cost[nb] = c;
                parent[nb] = cur;
                const double hn = octile(CellIndex{nb});
                open.emplace(c + hn, hn, nb);
            }
        }
    }
    if (!closed[g.value]) throw UnreachableError("plan_path: goal cell unreachable from start cell");

    std::vector<std::size_t> cells;
    for (std::size_t c = g.value; c != n; c = parent[c]) cells.push_back(c);
    std::reverse(cells.begin(), cells.end());

    Plan plan;
    plan.goal = cell_center(env, g);
    plan.waypoints.reserve(cells.size());
    for (auto c : cells) plan.waypoints.push_back(cell_center(env, CellIndex{c}));
    for (std::size_t i = 1; i < plan.waypoints.size(); ++i)
        plan.length += distance(plan.waypoints[i - 1], plan.waypoints[i]);
    plan.expected_travel_time = plan.length / robot_speed;
    return plan;
}

// ---------------------------------------------------------------------------
// Sampling

enum class SamplingMode { sense_in_motion, stop_sense_go };

inline std::string_view to_string(SamplingMode m) {
    return m == SamplingMode::sense_in_motion ? "sense_in_motion" : "stop_sense_go";
}

inline SamplingMode parse_sampling_mode(std::string_view s) {
    if (s == "sense_in_motion") return SamplingMode::sense_in_motion;
    if (s == "stop_sense_go") return SamplingMode::stop_sense_go;
    throw ParseError("unknown sampling mode '" + std::string(s) + "'");
}

struct SamplingConfig {
    SamplingMode mode{SamplingMode::sense_in_motion};
    double robot_speed{default_robot_speed};
    /// Dwell per stop for stop_sense_go; <= 0 means 3 * tau_res.
    double settle_time{0.0};

    friend bool operator==(const SamplingConfig&, const SamplingConfig&) = default;
};

/// A sensor carried through a static plume: the true concentration at the
/// robot position feeds the MOX model.
class SensorPipeline {
public:
    SensorPipeline(const Environment& env, const PlumeField& truth, double concentration_scale, SensorParams params,
                   bool calibrated, std::uint64_t seed)
        : env_(&env), truth_(&truth), scale_(concentration_scale), params_(params), calibrated_(calibrated),
          state_(seed, clean_air_voltage(params)) {}

    const SensorParams& params() const noexcept { return params_; }
    bool calibrated() const noexcept { return calibrated_; }
    double clock() const noexcept { return clock_; }
    double reading_voltage() const noexcept { return state_.current_reading; }

    double true_concentration(const Vec2& pos) const {
        return scale_ * evaluate(truth_->concentration, make_stencil(*env_, pos));
    }

    /// Puts the sensor at its steady state for `pos`.
    void settle_at(const Vec2& pos) { state_.current_reading = concentration_to_voltage(params_, true_concentration(pos)); }

    /// Advances dynamics by dt without recording.
    void evolve(const Vec2& pos, double dt) {
        step_dynamics(state_, params_, concentration_to_voltage(params_, true_concentration(pos)), dt);
        clock_ += dt;
    }

    /// Advances dynamics by dt and returns the measurement value d_i.
    double read(const Vec2& pos, double dt) {
        clock_ += dt;
        return sample(state_, params_, true_concentration(pos), dt, calibrated_);
    }

private:
    const Environment* env_;
    const PlumeField* truth_;
    double scale_;
    SensorParams params_;
    bool calibrated_;
    SensorState state_;
    double clock_{0.0};
};

namespace detail {

/// Point at arc length `s` along a polyline.
inline Vec2 point_along(std::span<const Vec2> pts, std::span<const double> cumulative, double s) {
    if (pts.size() == 1 || s <= 0.0) return pts.front();
    if (s >= cumulative.back()) return pts.back();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - cumulative.begin());
    const double seg = cumulative[i] - cumulative[i - 1];
    const double t = seg > 0.0 ? (s - cumulative[i - 1]) / seg : 0.0;
    return pts[i - 1] + t * (pts[i] - pts[i - 1]);
}

} // namespace detail

/// Drives the robot along `plan` and returns the recorded batch.
/// sense_in_motion: one sample every 1/sample_rate seconds while moving at
/// constant speed. stop_sense_go: travel unrecorded, dwell at each waypoint,
/// keep only the final reading of each dwell.
inline std::vector<Measurement> sample_along(const Plan& plan, const SamplingConfig& cfg, SensorPipeline& sensor,
                                             int iteration = 0) {
    std::vector<Measurement> out;
    if (plan.waypoints.empty()) return out;
    const double dt = 1.0 / sensor.params().sample_rate;
    std::vector<double> cum(plan.waypoints.size(), 0.0);
    for (std::size_t i = 1; i < plan.waypoints.size(); ++i)
        cum[i] = cum[i - 1] + distance(plan.waypoints[i - 1], plan.waypoints[i]);

    if (cfg.mode == SamplingMode::sense_in_motion) {
        const double travel = cum.back() / cfg.robot_speed;
        const auto steps = static_cast<std::size_t>(std::floor(travel / dt + 1e-9));
        out.reserve(steps);
        for (std::size_t k = 1; k <= steps; ++k) {
            const Vec2 pos = detail::point_along(plan.waypoints, cum, cfg.robot_speed * dt * static_cast<double>(k));
            const double v = sensor.read(pos, dt);
            out.push_back({pos, sensor.clock(), v, iteration});
        }
        const double rest = travel - static_cast<double>(steps) * dt;
        if (rest > 1e-12) sensor.evolve(plan.waypoints.back(), rest);
        return out;
    }

    const double settle = cfg.settle_time > 0.0 ? cfg.settle_time : 3.0 * sensor.params().tau_res;
    out.reserve(plan.waypoints.size());
    for (std::size_t w = 0; w < plan.waypoints.size(); ++w) {
        if (w > 0) {
            const double seg = cum[w] - cum[w - 1];
            const double travel = seg / cfg.robot_speed;
            double t = 0.0;
            while (t + dt <= travel + 1e-12) {
                t += dt;
                sensor.evolve(detail::point_along(plan.waypoints, cum, cum[w - 1] + cfg.robot_speed * t), dt);
            }
            if (travel - t > 1e-12) sensor.evolve(plan.waypoints[w], travel - t);
        }
        const Vec2 pos = plan.waypoints[w];
        double t = 0.0;
        while (t + dt < settle - 1e-12) {
            sensor.evolve(pos, dt);
            t += dt;
        }
        const double v = sensor.read(pos, settle - t);
        out.push_back({pos, sensor.clock(), v, iteration});
    }
    return out;
}

} // namespace rankgsl
