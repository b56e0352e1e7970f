#pragma once

// Closed-loop trials and seeded benchmark sweeps.
//
// One trial iterates plan -> sample batch -> estimator update -> termination
// check. A benchmark runs every (sensor condition, feature, replicate)
// combination on a worker pool and streams the records, in a fixed order, to
// `trials.jsonl`; wall-clock timings go to `timings.jsonl` so the trial log is
// reproducible byte for byte.

#include "rankgsl/env_world.hpp"
#include "rankgsl/errors.hpp"
#include "rankgsl/features.hpp"
#include "rankgsl/planner.hpp"
#include "rankgsl/plume.hpp"
#include "rankgsl/scenario.hpp"
#include "rankgsl/sensor.hpp"
#include "rankgsl/ste.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace rankgsl {

/// splitmix64 finalizer; derives independent stream seeds from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Environment with_seed(const Environment& env, std::uint64_t seed) {
    return Environment(env.width_cells(), env.height_cells(), env.cell_size(), env.inlet_wind(), seed,
                       env.obstacles());
}

/// Empty when `post` is a valid posterior for `env`: normalized within 1e-12,
/// zero on obstacles, entropy within [0, log N_free].
inline std::optional<std::string> posterior_invariant_violation(const Environment& env, const Posterior& post) {
    const auto p = post.probability();
    if (p.size() != env.cell_count()) return "size does not match grid";
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] >= 0.0)) return "negative or NaN probability at cell " + std::to_string(i);
        if (env.is_obstacle(CellIndex{i}) && p[i] != 0.0) return "non-zero probability on obstacle cell " + std::to_string(i);
        total += p[i];
    }
    if (std::abs(total - 1.0) > 1e-12) return "probabilities sum to " + std::to_string(total);
    const double h = post.entropy();
    if (!(h >= 0.0) || h > std::log(static_cast<double>(env.free_cell_count())) + 1e-12)
        return "entropy " + std::to_string(h) + " outside [0, log N_free]";
    return std::nullopt;
}

struct IterationSnapshot {
    int iteration{0};
    Vec2 robot;                 // position after the batch
    std::size_t batch_size{0};
    double entropy{0.0};
    CellIndex argmax{};
};

struct TrialResult {
    std::string scenario_id;
    std::string trial_id;
    FeatureKind feature{FeatureKind::rank};
    std::string sensor;          // "calibrated", preset name, or "custom"
    bool calibrated{false};
    std::uint64_t seed{0};
    GridCoord true_source{};
    GridCoord estimated_source{};
    Vec2 robot_start{};
    int iterations_used{0};
    Termination termination{Termination::continue_};
    double localization_error{0.0}; // meters
    std::size_t measurements{0};
    double path_length{0.0};
    std::vector<double> entropy_trace;
    int replans{0};
    int posterior_updates{0};
    std::vector<std::string> invariant_violations;
    std::optional<std::string> error;          // set when the trial failed
    std::optional<ErrorCategory> error_category;
    double wall_seconds{0.0};                  // excluded from trial records
};

/// Callback after every posterior update (posterior dumps, tracing).
using TrialObserver = std::function<void(const IterationSnapshot&, const Posterior&, std::span<const Measurement>)>;

inline std::string condition_name(const Scenario& s) { return s.calibrated ? "calibrated" : s.sensor_preset; }

/// Runs one closed-loop trial. `plumes` must be built for `s.environment`
/// and `s.plume`. Component errors propagate.
inline TrialResult run_trial(const Scenario& s, const PlumeCache& plumes, const TrialObserver& observer = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    s.validate();
    const Environment& env = s.environment;
    if (plume_key_hash(env, s.plume) != plumes.key_hash())
        throw DomainError("run_trial: plume cache was built for a different environment");
    const std::uint64_t seed = env.seed();

    TrialResult r;
    r.scenario_id = s.id;
    r.trial_id = s.id;
    r.feature = s.feature.kind;
    r.sensor = condition_name(s);
    r.calibrated = s.calibrated;
    r.seed = seed;
    r.true_source = env.coord_of(s.true_source_cell);
    r.robot_start = s.robot_start;

    const PlumeField& truth = plumes.get(s.true_source_cell);
    Posterior prior = make_prior(env, s.estimation.prior_margin_cells);
    EstimatorConfig ec;
    ec.kind = s.feature.kind;
    ec.measured = FeatureSide{resolve_measured_threshold(s), s.feature.lambda};
    ec.c_thres_fraction = s.feature.c_thres_fraction;
    ec.lambda = s.feature.lambda;
    ec.noise = resolve_noise(s);
    ec.concentration_scale = s.concentration_scale;
    SourceTermEstimator estimator(env, plumes, prior, ec);

    TerminationConfig term = default_termination(env, prior, s.estimation.max_iterations);
    term.entropy_threshold = s.estimation.entropy_fraction * std::log(static_cast<double>(prior.support_size()));
    term.confinement_radius = s.estimation.confinement_cells * env.cell_diagonal();
    term.mass_fraction = s.estimation.mass_fraction;

    SensorPipeline sensor(env, truth, s.concentration_scale, s.sensor_params, s.calibrated, mix_seed(seed, 1));
    sensor.settle_at(s.robot_start);

    std::vector<std::uint8_t> visited(env.cell_count(), 0);
    Vec2 robot = s.robot_start;
    visited[position_to_cell(env, robot).value] = 1;
    const Posterior* post = &estimator.posterior();
    Termination state = Termination::continue_;

    for (int it = 1; state == Termination::continue_; ++it) {
        PlannerConfig pc = s.planner;
        pc.seed = mix_seed(s.planner.seed ^ seed, static_cast<std::uint64_t>(it) + 100);

        std::optional<Plan> plan;
        int attempts = 0;
        for (const auto& cand : rank_goals(env, *post, robot, pc)) {
            if (attempts > s.estimation.max_replans) break;
            try {
                plan = plan_path(env, robot, cand.goal, s.sampling.robot_speed);
                break;
            } catch (const UnreachableError&) {
                ++attempts;
                ++r.replans;
            }
        }
        if (!plan) {
            // Every cluster goal sits on the robot or is unreachable: explore.
            for (; attempts <= s.estimation.max_replans && !plan; ++attempts) {
                const Vec2 goal = fallback_goal(env, robot, visited);
                try {
                    plan = plan_path(env, robot, goal, s.sampling.robot_speed);
                } catch (const UnreachableError&) {
                    visited[position_to_cell(env, goal).value] = 1;
                    ++r.replans;
                }
            }
            if (!plan) throw UnreachableError("run_trial: no reachable goal after " + std::to_string(attempts) + " attempts");
        }

        const auto batch = sample_along(*plan, s.sampling, sensor, it);
        for (const auto& w : plan->waypoints) visited[position_to_cell(env, w).value] = 1;
        robot = plan->goal;
        r.path_length += plan->length;

        post = &estimator.add_batch(batch);
        ++r.posterior_updates;
        if (auto v = posterior_invariant_violation(env, *post))
            r.invariant_violations.push_back("iteration " + std::to_string(it) + ": " + *v);
        r.entropy_trace.push_back(post->entropy());
        r.iterations_used = it;
        if (observer) observer({it, robot, batch.size(), post->entropy(), post->argmax_cell()}, *post, batch);
        state = check_termination(env, *post, it, term);
    }

    r.termination = state;
    const CellIndex est = estimate_source(*post);
    r.estimated_source = env.coord_of(est);
    r.localization_error = distance(cell_center(env, est), cell_center(env, s.true_source_cell));
    r.measurements = estimator.measurement_count();
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// ---------------------------------------------------------------------------
// Records

inline constexpr int result_format_version = 1;

inline nlohmann::json trial_record(const TrialResult& r) {
    nlohmann::json j;
    j["format_version"] = result_format_version;
    j["scenario_id"] = r.scenario_id;
    j["trial_id"] = r.trial_id;
    j["feature"] = to_string(r.feature);
    j["sensor"] = r.sensor;
    j["calibrated"] = r.calibrated;
    j["seed"] = r.seed;
    j["true_source"] = {r.true_source.col, r.true_source.row};
    j["robot_start"] = {r.robot_start.x, r.robot_start.y};
    j["status"] = r.error ? "failed" : "ok";
    if (r.error) {
        j["error"] = *r.error;
        j["error_category"] = r.error_category ? std::string(to_string(*r.error_category)) : "unknown";
        j["estimated_source"] = nullptr;
        j["localization_error"] = nullptr;
        j["termination"] = nullptr;
    } else {
        j["estimated_source"] = {r.estimated_source.col, r.estimated_source.row};
        j["localization_error"] = r.localization_error;
        j["termination"] = to_string(r.termination);
    }
    j["iterations_used"] = r.iterations_used;
    j["measurements"] = r.measurements;
    j["path_length"] = r.path_length;
    j["replans"] = r.replans;
    j["posterior_updates"] = r.posterior_updates;
    j["entropy_trace"] = r.entropy_trace;
    j["invariant_violations"] = r.invariant_violations;
    return j;
}

/// Checks one trial record against the published schema
/// (docs/result_schema.json). Returns the first problem found.
inline std::optional<std::string> trial_record_problem(const nlohmann::json& j) {
    using nlohmann::json;
    if (!j.is_object()) return "record is not an object";
    const auto need = [&](const char* key, auto pred, const char* what) -> std::optional<std::string> {
        if (!j.contains(key)) return std::string("missing '") + key + "'";
        if (!pred(j.at(key))) return std::string("'") + key + "' must be " + what;
        return std::nullopt;
    };
    const auto is_pair = [](auto numeric) {
        return [numeric](const json& v) { return v.is_array() && v.size() == 2 && numeric(v[0]) && numeric(v[1]); };
    };
    const auto is_int = [](const json& v) { return v.is_number_integer(); };
    const auto is_num = [](const json& v) { return v.is_number(); };
    const auto nonneg_int = [](const json& v) { return v.is_number_integer() && v.get<long long>() >= 0; };
    const auto nonneg = [](const json& v) { return v.is_number() && v.get<double>() >= 0.0; };

    std::optional<std::string> p;
    if ((p = need("format_version", [](const json& v) { return v == result_format_version; }, "1"))) return p;
    if ((p = need("scenario_id", [](const json& v) { return v.is_string(); }, "a string"))) return p;
    if ((p = need("trial_id", [](const json& v) { return v.is_string(); }, "a string"))) return p;
    if ((p = need("feature", [](const json& v) {
             if (!v.is_string()) return false;
             for (auto k : all_feature_kinds)
                 if (to_string(k) == v.get<std::string>()) return true;
             return false;
         }, "a feature kind")))
        return p;
    if ((p = need("sensor", [](const json& v) { return v.is_string(); }, "a string"))) return p;
    if ((p = need("calibrated", [](const json& v) { return v.is_boolean(); }, "a boolean"))) return p;
    if ((p = need("seed", [](const json& v) { return v.is_number_unsigned(); }, "an unsigned integer"))) return p;
    if ((p = need("true_source", is_pair(is_int), "[col, row]"))) return p;
    if ((p = need("robot_start", is_pair(is_num), "[x, y]"))) return p;
    if ((p = need("status", [](const json& v) { return v == "ok" || v == "failed"; }, "\"ok\" or \"failed\""))) return p;
    const bool ok = j.at("status") == "ok";
    if (ok) {
        if ((p = need("estimated_source", is_pair(is_int), "[col, row]"))) return p;
        if ((p = need("localization_error", nonneg, "a number >= 0"))) return p;
        if ((p = need("termination", [](const json& v) { return v == "converged" || v == "max_iter"; },
                      "\"converged\" or \"max_iter\"")))
            return p;
    } else {
        if ((p = need("error", [](const json& v) { return v.is_string(); }, "a string"))) return p;
        if ((p = need("error_category", [](const json& v) { return v.is_string(); }, "a string"))) return p;
    }
    if ((p = need("iterations_used", nonneg_int, "an integer >= 0"))) return p;
    if ((p = need("measurements", nonneg_int, "an integer >= 0"))) return p;
    if ((p = need("path_length", nonneg, "a number >= 0"))) return p;
    if ((p = need("replans", nonneg_int, "an integer >= 0"))) return p;
    if ((p = need("posterior_updates", nonneg_int, "an integer >= 0"))) return p;
    if ((p = need("entropy_trace", [](const json& v) {
             if (!v.is_array()) return false;
             for (const auto& e : v)
                 if (!e.is_number() || e.get<double>() < 0.0) return false;
             return true;
         }, "an array of numbers >= 0")))
        return p;
    if (j.at("entropy_trace").size() != j.at("posterior_updates").get<std::size_t>())
        return "'entropy_trace' length must equal 'posterior_updates'";
    if ((p = need("invariant_violations", [](const json& v) {
             if (!v.is_array()) return false;
             for (const auto& e : v)
                 if (!e.is_string()) return false;
             return true;
         }, "an array of strings")))
        return p;
    return std::nullopt;
}

/// Per-iteration posterior dump line.
inline nlohmann::json posterior_record(const Environment& env, const IterationSnapshot& snap, const Posterior& post,
                                       std::span<const Measurement> batch) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& m : batch) samples.push_back({m.position.x, m.position.y, m.time, m.value});
    return {{"iteration", snap.iteration},
            {"robot", {snap.robot.x, snap.robot.y}},
            {"entropy", snap.entropy},
            {"argmax", {env.coord_of(snap.argmax).col, env.coord_of(snap.argmax).row}},
            {"width_cells", env.width_cells()},
            {"height_cells", env.height_cells()},
            {"batch", samples},
            {"probability", post.probability()}};
}

// ---------------------------------------------------------------------------
// Benchmark

inline constexpr const char* sensor_conditions[] = {"calibrated", "sensor_I", "sensor_II"};

struct BenchConfig {
    std::string id{"bench"};
    Scenario base;
    std::uint64_t seed{0};
    int replicates{10};
    std::vector<FeatureKind> features{std::begin(all_feature_kinds), std::end(all_feature_kinds)};
    std::vector<std::string> sensors{std::begin(sensor_conditions), std::end(sensor_conditions)};
    double min_separation_fraction{0.25};
    bool dump_posteriors{false};
    /// Per-feature likelihood widths replacing the scenario's.
    std::map<FeatureKind, NoiseModel> noise;
};

/// Applies a sensor condition to `s`. The presets differ only in the
/// baseline resistance, so a condition swaps R0 and keeps every other sensor
/// parameter of the base scenario. "calibrated" uses sensor_I with calibrated
/// readings; a preset name uses raw voltages.
inline void apply_sensor_condition(Scenario& s, const std::string& condition) {
    const std::string preset = condition == "calibrated" ? "sensor_I" : condition;
    auto p = sensor_preset(preset);
    if (!p) throw ValidationError("sensors", "unknown sensor condition '" + condition + "'");
    s.sensor_preset = preset;
    s.sensor_params.R0 = p->R0;
    s.calibrated = condition == "calibrated";
}

struct TrialPlacement {
    CellIndex source;
    Vec2 start;
};

/// Source drawn uniformly from the candidate cells of the prior; start drawn
/// uniformly from free cells at least `min_separation_fraction` of the arena
/// diagonal away from it.
inline TrialPlacement draw_placement(const Scenario& base, double min_separation_fraction, std::uint64_t seed) {
    const Environment& env = base.environment;
    const Posterior prior = make_prior(env, base.estimation.prior_margin_cells);
    std::vector<CellIndex> sources;
    for (std::size_t i = 0; i < prior.size(); ++i)
        if (prior.probability()[i] > 0.0) sources.push_back(CellIndex{i});
    const auto free = env.free_cells();
    const double min_sep = min_separation_fraction * std::hypot(env.width_m(), env.height_m());
    std::mt19937_64 rng(seed);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const CellIndex src = sources[std::uniform_int_distribution<std::size_t>(0, sources.size() - 1)(rng)];
        std::vector<CellIndex> starts;
        for (auto c : free)
            if (distance(cell_center(env, c), cell_center(env, src)) >= min_sep) starts.push_back(c);
        if (starts.empty()) continue;
        const CellIndex st = starts[std::uniform_int_distribution<std::size_t>(0, starts.size() - 1)(rng)];
        return {src, cell_center(env, st)};
    }
    throw ValidationError("min_separation_fraction", "no start cell satisfies the separation constraint");
}

struct BenchJob {
    std::size_t index;
    Scenario scenario;
};

/// Expands the sweep into jobs in record order: sensor condition, feature,
/// replicate. Replicate r shares source, start and seed across conditions.
inline std::vector<BenchJob> expand_benchmark(const BenchConfig& cfg) {
    if (cfg.replicates < 1) throw ValidationError("replicates", "must be >= 1");
    std::vector<TrialPlacement> placements;
    for (int r = 0; r < cfg.replicates; ++r)
        placements.push_back(draw_placement(cfg.base, cfg.min_separation_fraction, mix_seed(cfg.seed, 2 * r)));
    std::vector<BenchJob> jobs;
    for (const auto& cond : cfg.sensors)
        for (auto kind : cfg.features)
            for (int r = 0; r < cfg.replicates; ++r) {
                Scenario s = cfg.base;
                apply_sensor_condition(s, cond);
                s.feature.kind = kind;
                if (auto it = cfg.noise.find(kind); it != cfg.noise.end()) {
                    s.estimation.sigma_M = it->second.sigma_M;
                    s.estimation.sigma_E = it->second.sigma_E;
                }
                s.environment = with_seed(s.environment, mix_seed(cfg.seed, 2 * r + 1));
                s.true_source_cell = placements[r].source;
                s.robot_start = placements[r].start;
                s.id = cfg.id + "/" + cond + "/" + std::string(to_string(kind)) + "/r" + std::to_string(r);
                s.validate();
                jobs.push_back({jobs.size(), std::move(s)});
            }
    return jobs;
}

/// Linear-interpolated quantile of a non-empty sample.
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw DomainError("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct GroupSummary {
    std::string sensor;
    FeatureKind feature{};
    int trials{0};
    int failed{0};
    int converged{0};
    double median_error{0.0};
    double iqr_error{0.0};
    double median_iterations{0.0};
    double iqr_iterations{0.0};
};

/// Median and IQR per (sensor, feature) group over successful records, in
/// first-appearance order.
inline std::vector<GroupSummary> summarize(std::span<const nlohmann::json> records) {
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<const nlohmann::json*>> groups;
    for (const auto& j : records) {
        auto key = std::make_pair(j.at("sensor").get<std::string>(), j.at("feature").get<std::string>());
        if (!groups.contains(key)) order.push_back(key);
        groups[key].push_back(&j);
    }
    std::vector<GroupSummary> out;
    for (const auto& key : order) {
        GroupSummary g;
        g.sensor = key.first;
        g.feature = parse_feature_kind(key.second);
        std::vector<double> err, its;
        for (const auto* j : groups[key]) {
            ++g.trials;
            if (j->at("status") != "ok") {
                ++g.failed;
                continue;
            }
            if (j->at("termination") == "converged") ++g.converged;
            err.push_back(j->at("localization_error").get<double>());
            its.push_back(j->at("iterations_used").get<double>());
        }
        if (!err.empty()) {
            g.median_error = quantile(err, 0.5);
            g.iqr_error = quantile(err, 0.75) - quantile(err, 0.25);
            g.median_iterations = quantile(its, 0.5);
            g.iqr_iterations = quantile(its, 0.75) - quantile(its, 0.25);
        } else {
            g.median_error = g.iqr_error = g.median_iterations = g.iqr_iterations = std::nan("");
        }
        out.push_back(g);
    }
    return out;
}

inline nlohmann::json summary_json(const std::vector<GroupSummary>& groups, double cell_diagonal) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& g : groups) {
        const auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
        arr.push_back({{"sensor", g.sensor},
                       {"feature", to_string(g.feature)},
                       {"trials", g.trials},
                       {"failed", g.failed},
                       {"converged", g.converged},
                       {"median_error", num(g.median_error)},
                       {"iqr_error", num(g.iqr_error)},
                       {"median_error_cells", num(g.median_error / cell_diagonal)},
                       {"median_iterations", num(g.median_iterations)},
                       {"iqr_iterations", num(g.iqr_iterations)}});
    }
    return {{"format_version", result_format_version}, {"cell_diagonal", cell_diagonal}, {"groups", arr}};
}

struct BenchOutcome {
    std::vector<nlohmann::json> records;
    std::vector<GroupSummary> summary;
    std::vector<double> wall_seconds;
    std::size_t plume_solves{0};
};

inline TrialResult failed_trial(const Scenario& s, const std::string& what, std::optional<ErrorCategory> cat) {
    TrialResult r;
    r.scenario_id = s.id;
    r.trial_id = s.id;
    r.feature = s.feature.kind;
    r.sensor = condition_name(s);
    r.calibrated = s.calibrated;
    r.seed = s.environment.seed();
    r.true_source = s.environment.coord_of(s.true_source_cell);
    r.robot_start = s.robot_start;
    r.error = what;
    r.error_category = cat;
    return r;
}

/// Runs the sweep on `workers` threads. With `out_dir`, writes trials.jsonl,
/// summary.json, timings.jsonl and (if enabled) posteriors/<n>.jsonl.
inline BenchOutcome run_benchmark(const BenchConfig& cfg, const PlumeCache& plumes,
                                  const std::optional<std::filesystem::path>& out_dir, int workers = 1,
                                  const std::function<void(std::size_t done, std::size_t total)>& progress = {}) {
    const auto jobs = expand_benchmark(cfg);
    const std::size_t solves_before = plumes.solves();
    BenchOutcome out;
    out.records.resize(jobs.size());
    out.wall_seconds.resize(jobs.size());

    std::ofstream trials, timings;
    if (out_dir) {
        std::error_code ec;
        std::filesystem::create_directories(*out_dir, ec);
        if (!ec && cfg.dump_posteriors) std::filesystem::create_directories(*out_dir / "posteriors", ec);
        if (ec) throw IoError("cannot create '" + out_dir->string() + "': " + ec.message());
        trials.open(*out_dir / "trials.jsonl", std::ios::trunc);
        timings.open(*out_dir / "timings.jsonl", std::ios::trunc);
        if (!trials || !timings) throw IoError("cannot write benchmark logs in '" + out_dir->string() + "'");
    }

    // Serialized sink: records are written in job order as soon as the
    // contiguous prefix is complete.
    std::mutex sink;
    std::vector<std::uint8_t> done(jobs.size(), 0);
    std::size_t written = 0, finished = 0;
    const auto complete = [&](std::size_t i, TrialResult&& r) {
        std::lock_guard lock(sink);
        out.records[i] = trial_record(r);
        out.wall_seconds[i] = r.wall_seconds;
        done[i] = 1;
        ++finished;
        while (written < jobs.size() && done[written]) {
            if (out_dir) {
                trials << out.records[written].dump() << '\n';
                timings << nlohmann::json{{"trial_id", jobs[written].scenario.id},
                                          {"wall_seconds", out.wall_seconds[written]}}
                               .dump()
                        << '\n';
            }
            ++written;
        }
        if (progress) progress(finished, jobs.size());
    };

    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
            const Scenario& s = jobs[i].scenario;
            TrialResult r;
            std::ofstream dump;
            TrialObserver observer;
            if (out_dir && cfg.dump_posteriors) {
                dump.open(*out_dir / "posteriors" / (std::to_string(i) + ".jsonl"), std::ios::trunc);
                observer = [&](const IterationSnapshot& snap, const Posterior& post, std::span<const Measurement> b) {
                    dump << posterior_record(s.environment, snap, post, b).dump() << '\n';
                };
            }
            try {
                r = run_trial(s, plumes, observer);
            } catch (const Error& e) {
                r = failed_trial(s, e.what(), e.category());
            } catch (const std::exception& e) {
                r = failed_trial(s, e.what(), std::nullopt);
            }
            complete(i, std::move(r));
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    out.summary = summarize(out.records);
    out.plume_solves = plumes.solves() - solves_before;
    if (out_dir) {
        std::ofstream sum(*out_dir / "summary.json", std::ios::trunc);
        sum << summary_json(out.summary, cfg.base.environment.cell_diagonal()).dump(2) << '\n';
        if (!sum || !trials || !timings) throw IoError("failed writing benchmark logs in '" + out_dir->string() + "'");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Benchmark config file

inline BenchConfig bench_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    using detail::optional_field;
    if (!j.is_object()) throw ParseError("bench config must be a JSON object");
    BenchConfig c;
    c.id = optional_field<std::string>(j, "id", "", c.id);
    if (!j.contains("scenario")) throw ParseError("missing field 'scenario'");
    const auto& sc = j.at("scenario");
    if (sc.is_string()) {
        std::filesystem::path p = sc.get<std::string>();
        c.base = load_scenario(p.is_absolute() ? p : base_dir / p);
    } else {
        c.base = scenario_from_json(sc);
    }
    c.seed = optional_field<std::uint64_t>(j, "seed", "", c.seed);
    c.replicates = optional_field(j, "replicates", "", c.replicates);
    if (j.contains("features")) {
        c.features.clear();
        for (const auto& f : j.at("features")) c.features.push_back(parse_feature_kind(f.get<std::string>()));
    }
    if (j.contains("sensors")) c.sensors = j.at("sensors").get<std::vector<std::string>>();
    for (const auto& s : c.sensors) {
        if (s != "calibrated" && !sensor_preset(s)) throw ValidationError("sensors", "unknown sensor condition '" + s + "'");
    }
    c.min_separation_fraction = optional_field(j, "min_separation_fraction", "", c.min_separation_fraction);
    c.dump_posteriors = optional_field(j, "dump_posteriors", "", c.dump_posteriors);
    if (j.contains("noise")) {
        for (const auto& [name, v] : j.at("noise").items()) {
            const std::string path = "noise." + name + ".";
            NoiseModel nm{detail::required<double>(v, "sigma_M", path), detail::required<double>(v, "sigma_E", path)};
            if (!(nm.sigma_M >= 0.0 && nm.sigma_E >= 0.0 && nm.combined_variance() > 0.0))
                throw ValidationError("noise." + name, "sigmas must be >= 0 with a positive combined variance");
            c.noise[parse_feature_kind(name)] = nm;
        }
    }
    if (c.replicates < 1) throw ValidationError("replicates", "must be >= 1");
    if (!(c.min_separation_fraction >= 0.0 && c.min_separation_fraction < 1.0))
        throw ValidationError("min_separation_fraction", "must be in [0, 1)");
    return c;
}

inline BenchConfig load_bench_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open bench config '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed bench config: ") + e.what());
    }
    return bench_config_from_json(j, path.parent_path());
}

} // namespace rankgsl
