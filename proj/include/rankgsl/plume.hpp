#pragma once

// Steady 2D advection-diffusion-decay plume model.
//
//   D lap(c) - w . grad(c) - k c + q delta(x - x_s) = 0
//
// Finite volumes on the environment grid: first-order upwind advection,
// central diffusion, implicit decay. Faces touching an obstacle carry no flux
// (the wind is masked to zero inside obstacles). On the outer boundary a face
// with outgoing wind is an outflow face (advective flux only); every other
// outer face is closed to diffusion and admits only clean air.
// The linear system is solved by successive over-relaxation with sweeps
// ordered along the wind.

#include "rankgsl/env_world.hpp"
#include "rankgsl/errors.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace rankgsl {

struct PlumeSettings {
    double diffusion{0.05};      // m^2/s
    double decay{0.01};          // 1/s
    double source_strength{1.0}; // relative units per second
    double tolerance{1e-6};      // relative residual
    int max_sweeps{50000};
    /// SOR factor; 0 picks 1 + 0.5 * (diffusive share of the stencil), which
    /// backs off toward Gauss-Seidel as advection dominates.
    double relaxation{0.0};

    friend bool operator==(const PlumeSettings&, const PlumeSettings&) = default;

    void validate() const {
        if (!(diffusion > 0.0) || !std::isfinite(diffusion)) throw ValidationError("plume.diffusion", "must be > 0");
        if (!(decay >= 0.0) || !std::isfinite(decay)) throw ValidationError("plume.decay", "must be >= 0");
        if (!(source_strength > 0.0)) throw ValidationError("plume.source_strength", "must be > 0");
        if (!(tolerance > 0.0)) throw ValidationError("plume.tolerance", "must be > 0");
        if (max_sweeps < 1) throw ValidationError("plume.max_sweeps", "must be >= 1");
        if (!(relaxation >= 0.0 && relaxation < 2.0))
            throw ValidationError("plume.relaxation", "must be 0 (automatic) or in (0, 2)");
    }
};

struct PlumeField {
    CellIndex source_cell{};
    std::vector<double> concentration; // per cell, zero on obstacles
    double solver_residual{0.0};
    int sweeps{0};

    friend bool operator==(const PlumeField&, const PlumeField&) = default;

    double max() const { return concentration.empty() ? 0.0 : *std::max_element(concentration.begin(), concentration.end()); }
};

/// Discretized operator for one environment; independent of the source cell,
/// so it is assembled once and reused for every hypothesis.
class PlumeOperator {
public:
    PlumeOperator(const Environment& env, const PlumeSettings& settings)
        : env_(&env), settings_(settings), w_(env.width_cells()), h_(env.height_cells()), pw_(w_ + 2) {
        settings_.validate();
        const std::size_t padded = static_cast<std::size_t>(pw_) * static_cast<std::size_t>(h_ + 2);
        diag_.assign(padded, 0.0);
        west_.assign(padded, 0.0);
        east_.assign(padded, 0.0);
        south_.assign(padded, 0.0);
        north_.assign(padded, 0.0);

        const double hsz = env.cell_size();
        const double dcoef = settings_.diffusion / (hsz * hsz);
        const Vec2 wind = env.inlet_wind();
        struct Dir { int dc, dr; double un; std::vector<double>* coef; };
        for (int r = 0; r < h_; ++r) {
            for (int c = 0; c < w_; ++c) {
                if (!env.is_free(GridCoord{c, r})) continue;
                const std::size_t p = padded_index(c, r);
                double ap = settings_.decay;
                const std::array<Dir, 4> dirs{{{-1, 0, -wind.x, &west_},
                                               {1, 0, wind.x, &east_},
                                               {0, -1, -wind.y, &south_},
                                               {0, 1, wind.y, &north_}}};
                for (const auto& d : dirs) {
                    const GridCoord nb{c + d.dc, r + d.dr};
                    if (env.in_grid(nb)) {
                        if (!env.is_free(nb)) continue;
                        ap += dcoef + std::max(d.un, 0.0) / hsz;
                        (*d.coef)[p] = dcoef + std::max(-d.un, 0.0) / hsz;
                    } else if (d.un > 0.0) {
                        ap += d.un / hsz;
                    }
                }
                diag_[p] = ap;
            }
        }
        col_begin_ = wind.x >= 0.0 ? 0 : w_ - 1;
        col_step_ = wind.x >= 0.0 ? 1 : -1;
        row_begin_ = wind.y >= 0.0 ? 0 : h_ - 1;
        row_step_ = wind.y >= 0.0 ? 1 : -1;
        source_density_ = settings_.source_strength / (hsz * hsz);
        if (settings_.relaxation > 0.0) {
            omega_ = settings_.relaxation;
        } else {
            const double diffusive = 4.0 * dcoef;
            const double advective = (std::abs(wind.x) + std::abs(wind.y)) / hsz;
            omega_ = 1.0 + 0.5 * diffusive / (diffusive + advective);
        }
    }

    double relaxation() const noexcept { return omega_; }

    const PlumeSettings& settings() const noexcept { return settings_; }
    const Environment& environment() const noexcept { return *env_; }

    /// Runs exactly `sweeps` SOR sweeps (or stops early once the relative
    /// residual drops below `tolerance`, when `stop_at_tolerance`).
    PlumeField run(CellIndex source, int sweeps, bool stop_at_tolerance) const {
        if (!env_->in_grid(source)) throw DomainError("solve_plume: source cell outside grid");
        if (env_->is_obstacle(source)) throw ValidationError("source_cell", "source lies on an obstacle");
        const GridCoord sg = env_->coord_of(source);
        const std::size_t sp = padded_index(sg.col, sg.row);

        std::vector<double> c(diag_.size(), 0.0);
        const double omega = omega_;
        double residual = 1.0;
        int done = 0;
        while (done < sweeps) {
            for (int ri = 0, r = row_begin_; ri < h_; ++ri, r += row_step_) {
                for (int ci = 0, cc = col_begin_; ci < w_; ++ci, cc += col_step_) {
                    const std::size_t p = padded_index(cc, r);
                    const double ap = diag_[p];
                    if (ap == 0.0) continue;
                    double sum = west_[p] * c[p - 1] + east_[p] * c[p + 1] + south_[p] * c[p - pw_] +
                                 north_[p] * c[p + pw_];
                    if (p == sp) sum += source_density_;
                    c[p] += omega * (sum / ap - c[p]);
                }
            }
            ++done;
            if (stop_at_tolerance) {
                residual = relative_residual(c, sp);
                if (residual < settings_.tolerance) break;
            }
        }
        if (!stop_at_tolerance) residual = relative_residual(c, sp);

        PlumeField field;
        field.source_cell = source;
        field.solver_residual = residual;
        field.sweeps = done;
        field.concentration.assign(env_->cell_count(), 0.0);
        for (int r = 0; r < h_; ++r)
            for (int cc = 0; cc < w_; ++cc) {
                const std::size_t p = padded_index(cc, r);
                if (diag_[p] != 0.0)
                    field.concentration[static_cast<std::size_t>(r) * static_cast<std::size_t>(w_) +
                                        static_cast<std::size_t>(cc)] = std::max(c[p], 0.0);
            }
        return field;
    }

    PlumeField solve(CellIndex source) const {
        PlumeField f = run(source, settings_.max_sweeps, true);
        if (!(f.solver_residual < settings_.tolerance))
            throw ConvergenceError("solve_plume: no convergence after " + std::to_string(f.sweeps) +
                                       " sweeps, residual " + std::to_string(f.solver_residual),
                                   f.solver_residual);
        return f;
    }

private:
    std::size_t padded_index(int c, int r) const noexcept {
        return static_cast<std::size_t>(r + 1) * static_cast<std::size_t>(pw_) + static_cast<std::size_t>(c + 1);
    }

    double relative_residual(const std::vector<double>& c, std::size_t sp) const {
        double acc = 0.0;
        for (int r = 0; r < h_; ++r)
            for (int cc = 0; cc < w_; ++cc) {
                const std::size_t p = padded_index(cc, r);
                const double ap = diag_[p];
                if (ap == 0.0) continue;
                double res = west_[p] * c[p - 1] + east_[p] * c[p + 1] + south_[p] * c[p - pw_] +
                             north_[p] * c[p + pw_] - ap * c[p];
                if (p == sp) res += source_density_;
                acc += res * res;
            }
        return std::sqrt(acc) / source_density_;
    }

    const Environment* env_;
    PlumeSettings settings_;
    int w_, h_, pw_;
    std::vector<double> diag_, west_, east_, south_, north_;
    int col_begin_{0}, col_step_{1}, row_begin_{0}, row_step_{1};
    double source_density_{1.0};
    double omega_{1.0};
};

inline PlumeField solve_plume(const Environment& env, CellIndex source_cell, const PlumeSettings& settings) {
    return PlumeOperator(env, settings).solve(source_cell);
}

/// Bilinear interpolation weights between the four cell centers around a
/// position. Obstacle corners are dropped and the remaining weights
/// renormalized; a position inside an obstacle cell has no weights (value 0).
struct Stencil {
    std::array<std::uint32_t, 4> cell{};
    std::array<double, 4> weight{};
    int count{0};
};

inline Stencil make_stencil(const Environment& env, const Vec2& pos) {
    const CellIndex home = position_to_cell(env, pos);
    Stencil s;
    if (env.is_obstacle(home)) return s;
    const double h = env.cell_size();
    const double gx = std::clamp(pos.x / h - 0.5, 0.0, env.width_cells() - 1.0);
    const double gy = std::clamp(pos.y / h - 0.5, 0.0, env.height_cells() - 1.0);
    const int c0 = std::min(static_cast<int>(std::floor(gx)), env.width_cells() - 1);
    const int r0 = std::min(static_cast<int>(std::floor(gy)), env.height_cells() - 1);
    const double fx = gx - c0;
    const double fy = gy - r0;
    const int c1 = std::min(c0 + 1, env.width_cells() - 1);
    const int r1 = std::min(r0 + 1, env.height_cells() - 1);
    const std::array<GridCoord, 4> corners{{{c0, r0}, {c1, r0}, {c0, r1}, {c1, r1}}};
    const std::array<double, 4> w{(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    double total = 0.0;
    for (int i = 0; i < 4; ++i) {
        if (w[i] == 0.0 || !env.is_free(corners[i])) continue;
        s.cell[s.count] = static_cast<std::uint32_t>(env.index_of(corners[i]).value);
        s.weight[s.count] = w[i];
        total += w[i];
        ++s.count;
    }
    for (int i = 0; i < s.count; ++i) s.weight[i] /= total;
    return s;
}

inline double evaluate(std::span<const double> concentration, const Stencil& s) {
    double v = 0.0;
    for (int i = 0; i < s.count; ++i) v += s.weight[i] * concentration[s.cell[i]];
    return v;
}

inline std::vector<double> estimate_at(const Environment& env, const PlumeField& field,
                                       std::span<const Vec2> positions) {
    std::vector<double> out;
    out.reserve(positions.size());
    for (const auto& p : positions) out.push_back(evaluate(field.concentration, make_stencil(env, p)));
    return out;
}

// ---------------------------------------------------------------------------
// Cache

inline constexpr std::uint32_t plume_cache_format_version = 1;

namespace detail {

class Fnv1a {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    template <class T>
    void value(const T& v) { bytes(&v, sizeof(T)); }
    std::uint64_t digest() const { return h_; }

private:
    std::uint64_t h_{0xcbf29ce484222325ULL};
};

} // namespace detail

/// Stable hash of everything a plume solve depends on.
inline std::uint64_t plume_key_hash(const Environment& env, const PlumeSettings& s) {
    detail::Fnv1a h;
    h.value(plume_cache_format_version);
    h.value(env.width_cells());
    h.value(env.height_cells());
    h.value(env.cell_size());
    h.value(env.inlet_wind().x);
    h.value(env.inlet_wind().y);
    h.bytes(env.obstacle_mask().data(), env.obstacle_mask().size());
    h.value(s.diffusion);
    h.value(s.decay);
    h.value(s.source_strength);
    h.value(s.tolerance);
    h.value(s.max_sweeps);
    h.value(s.relaxation);
    return h.digest();
}

/// Per-source plume store. Each slot is filled exactly once (concurrent
/// requests for the same key wait on the first solve); filled slots are read
/// without locking. With a directory, fields are also persisted as
/// `<hash>_<cell>.plume` files listed in `index.txt`.
class PlumeCache {
public:
    PlumeCache(const Environment& env, const PlumeSettings& settings,
               std::optional<std::filesystem::path> directory = std::nullopt)
        : operator_(env, settings), hash_(plume_key_hash(env, settings)), directory_(std::move(directory)),
          slots_(env.cell_count()) {
        if (directory_) load_index();
    }

    PlumeCache(const PlumeCache&) = delete;
    PlumeCache& operator=(const PlumeCache&) = delete;

    std::uint64_t key_hash() const noexcept { return hash_; }
    const Environment& environment() const noexcept { return operator_.environment(); }
    const PlumeSettings& settings() const noexcept { return operator_.settings(); }

    const PlumeField& get(CellIndex source) const {
        if (source.value >= slots_.size()) throw DomainError("plume cache: cell outside grid");
        Slot& slot = slots_[source.value];
        std::call_once(slot.once, [&] {
            std::unique_ptr<PlumeField> field;
            if (directory_) field = load_file(source);
            if (!field) {
                field = std::make_unique<PlumeField>(operator_.solve(source));
                solves_.fetch_add(1, std::memory_order_relaxed);
                if (directory_) store_file(*field);
            } else {
                loads_.fetch_add(1, std::memory_order_relaxed);
            }
            slot.field = std::move(field);
        });
        return *slot.field;
    }

    std::size_t solves() const noexcept { return solves_.load(); }
    std::size_t disk_loads() const noexcept { return loads_.load(); }

    std::string file_name(CellIndex source) const {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%016llx_%zu.plume", static_cast<unsigned long long>(hash_), source.value);
        return buf;
    }

private:
    struct Slot {
        std::once_flag once;
        std::unique_ptr<PlumeField> field;
    };

    static constexpr char magic_[4] = {'R', 'G', 'P', 'L'};

    std::filesystem::path index_path() const { return *directory_ / "index.txt"; }

    void load_index() {
        std::error_code ec;
        std::filesystem::create_directories(*directory_, ec);
        std::ifstream in(index_path());
        std::string header;
        if (!in || !std::getline(in, header) ||
            header != "rankgsl-plume-cache " + std::to_string(plume_cache_format_version)) {
            // Missing or foreign index: start a fresh one; stale entries are re-solved.
            std::ofstream out(index_path(), std::ios::trunc);
            out << "rankgsl-plume-cache " << plume_cache_format_version << '\n';
            return;
        }
        std::string line;
        while (std::getline(in, line)) indexed_.insert(line);
    }

    std::unique_ptr<PlumeField> load_file(CellIndex source) const {
        const std::string name = file_name(source);
        {
            std::lock_guard lock(index_mutex_);
            if (!indexed_.contains(name)) return nullptr;
        }
        std::ifstream in(*directory_ / name, std::ios::binary);
        if (!in) return nullptr;
        char magic[4];
        std::uint32_t version = 0;
        std::uint64_t hash = 0, cell = 0, count = 0;
        double residual = 0.0;
        std::int32_t sweeps = 0;
        in.read(magic, 4);
        in.read(reinterpret_cast<char*>(&version), sizeof version);
        in.read(reinterpret_cast<char*>(&hash), sizeof hash);
        in.read(reinterpret_cast<char*>(&cell), sizeof cell);
        in.read(reinterpret_cast<char*>(&count), sizeof count);
        in.read(reinterpret_cast<char*>(&residual), sizeof residual);
        in.read(reinterpret_cast<char*>(&sweeps), sizeof sweeps);
        if (!in || std::string_view(magic, 4) != std::string_view(magic_, 4) ||
            version != plume_cache_format_version || hash != hash_ || cell != source.value ||
            count != environment().cell_count())
            return nullptr;
        auto field = std::make_unique<PlumeField>();
        field->source_cell = source;
        field->solver_residual = residual;
        field->sweeps = sweeps;
        field->concentration.resize(count);
        in.read(reinterpret_cast<char*>(field->concentration.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) return nullptr;
        return field;
    }

    void store_file(const PlumeField& f) const {
        const std::string name = file_name(f.source_cell);
        const auto tmp = *directory_ / (name + ".tmp");
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) return; // cache is best effort
            const std::uint32_t version = plume_cache_format_version;
            const std::uint64_t cell = f.source_cell.value;
            const std::uint64_t count = f.concentration.size();
            const std::int32_t sweeps = f.sweeps;
            out.write(magic_, 4);
            out.write(reinterpret_cast<const char*>(&version), sizeof version);
            out.write(reinterpret_cast<const char*>(&hash_), sizeof hash_);
            out.write(reinterpret_cast<const char*>(&cell), sizeof cell);
            out.write(reinterpret_cast<const char*>(&count), sizeof count);
            out.write(reinterpret_cast<const char*>(&f.solver_residual), sizeof f.solver_residual);
            out.write(reinterpret_cast<const char*>(&sweeps), sizeof sweeps);
            out.write(reinterpret_cast<const char*>(f.concentration.data()),
                      static_cast<std::streamsize>(count * sizeof(double)));
        }
        std::error_code ec;
        std::filesystem::rename(tmp, *directory_ / name, ec);
        if (ec) return;
        std::lock_guard lock(index_mutex_);
        if (indexed_.insert(name).second) {
            std::ofstream idx(index_path(), std::ios::app);
            idx << name << '\n';
        }
    }

    PlumeOperator operator_;
    std::uint64_t hash_;
    std::optional<std::filesystem::path> directory_;
    mutable std::vector<Slot> slots_;
    mutable std::mutex index_mutex_;
    mutable std::unordered_set<std::string> indexed_;
    mutable std::atomic<std::size_t> solves_{0};
    mutable std::atomic<std::size_t> loads_{0};
};

} // namespace rankgsl
