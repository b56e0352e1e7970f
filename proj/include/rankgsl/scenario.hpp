#pragma once

// Trial configuration and its JSON file format (documented in
// docs/scenario_format.md). Optional numeric knobs are written as null to
// request the built-in default.

#include "rankgsl/env_world.hpp"
#include "rankgsl/errors.hpp"
#include "rankgsl/features.hpp"
#include "rankgsl/planner.hpp"
#include "rankgsl/plume.hpp"
#include "rankgsl/sensor.hpp"
#include "rankgsl/ste.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

namespace rankgsl {

inline constexpr int scenario_format_version = 1;

struct FeatureConfig {
    FeatureKind kind{FeatureKind::rank};
    double lambda{0.7};
    /// Measured-side fixed-hit threshold in reading units; null = default.
    std::optional<double> d_thres;
    /// Estimated-side fixed-hit threshold as a fraction of each field maximum.
    double c_thres_fraction{0.1};

    friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

struct EstimationConfig {
    int max_iterations{30};
    std::optional<double> sigma_M;
    std::optional<double> sigma_E;
    double entropy_fraction{0.1};   // threshold = fraction * log(candidate count)
    double confinement_cells{4.0};  // in cell diagonals
    double mass_fraction{0.9};
    int prior_margin_cells{1};
    int max_replans{5};

    friend bool operator==(const EstimationConfig&, const EstimationConfig&) = default;
};

struct Scenario {
    std::string id{"scenario"};
    Environment environment;
    PlumeSettings plume;
    /// Concentration units (ppm) per plume unit; shared by truth and model.
    double concentration_scale{1.0};
    CellIndex true_source_cell{};
    Vec2 robot_start{};
    std::string sensor_preset{"sensor_I"}; // "sensor_I", "sensor_II" or "custom"
    SensorParams sensor_params{sensor_I()};
    FeatureConfig feature;
    bool calibrated{false};
    SamplingConfig sampling;
    EstimationConfig estimation;
    PlannerConfig planner;

    friend bool operator==(const Scenario&, const Scenario&) = default;

    void validate() const {
        const auto& env = environment;
        if (!env.in_grid(true_source_cell)) throw ValidationError("true_source_cell", "outside grid");
        if (env.is_obstacle(true_source_cell)) throw ValidationError("true_source_cell", "lies inside an obstacle");
        if (!contains(env, robot_start)) throw ValidationError("robot_start", "outside grid");
        if (!env.is_free(position_to_cell(env, robot_start)))
            throw ValidationError("robot_start", "lies inside an obstacle");
        plume.validate();
        if (!(concentration_scale > 0.0)) throw ValidationError("concentration_scale", "must be > 0");
        sensor_params.validate();
        if (!(sensor_params.k < 0.0))
            throw ValidationError("sensor.k", "must be negative so that voltage rises with concentration");
        if (feature.kind == FeatureKind::adaptive_hit && !(feature.lambda >= 0.0 && feature.lambda < 1.0))
            throw ValidationError("feature.lambda", "must be in [0, 1)");
        if (!(feature.c_thres_fraction > 0.0 && feature.c_thres_fraction < 1.0))
            throw ValidationError("feature.c_thres_fraction", "must be in (0, 1)");
        if (estimation.max_iterations < 1) throw ValidationError("estimation.max_iterations", "must be >= 1");
        if (estimation.sigma_M && !(*estimation.sigma_M >= 0.0)) throw ValidationError("estimation.sigma_M", "must be >= 0");
        if (estimation.sigma_E && !(*estimation.sigma_E >= 0.0)) throw ValidationError("estimation.sigma_E", "must be >= 0");
        if (!(estimation.mass_fraction > 0.0 && estimation.mass_fraction <= 1.0))
            throw ValidationError("estimation.mass_fraction", "must be in (0, 1]");
        if (estimation.prior_margin_cells < 0) throw ValidationError("estimation.prior_margin_cells", "must be >= 0");
        if (!(sampling.robot_speed > 0.0)) throw ValidationError("sampling.robot_speed", "must be > 0");
        if (planner.clusters < 1) throw ValidationError("planner.clusters", "must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Defaults that depend on several fields.

/// Reading-unit noise scale: the voltage noise at half the rated
/// concentration, carried through the calibration slope when calibrated.
inline double reading_noise_scale(const SensorParams& p, bool calibrated) {
    const double g = 0.5 * p.rated_concentration;
    const double v = concentration_to_voltage(p, g);
    const double sv = noise_std(p, v);
    if (!calibrated) return sv;
    const double slope = g * std::abs(p.k) * (1.0 / (p.VT - v) + 1.0 / v); // |dF/dv|
    return sv * slope;
}

inline NoiseModel resolve_noise(const Scenario& s) {
    double def = 0.2;
    switch (s.feature.kind) {
    case FeatureKind::value: def = reading_noise_scale(s.sensor_params, s.calibrated); break;
    case FeatureKind::fixed_hit:
    case FeatureKind::adaptive_hit: def = 0.3; break;
    case FeatureKind::rank: def = 0.2; break;
    }
    const NoiseModel n{s.estimation.sigma_M.value_or(def), s.estimation.sigma_E.value_or(def)};
    if (!(n.combined_variance() > 0.0))
        throw ValidationError("estimation.sigma_M", "a noise-free sensor needs explicit sigma_M / sigma_E");
    return n;
}

/// 10% of the clean-air-to-saturation span of the reading: the voltage span
/// up to VT for raw readings, the rated range for calibrated ones.
inline double default_measured_threshold(const SensorParams& p, bool calibrated) {
    if (calibrated) return 0.1 * p.rated_concentration;
    const double v0 = clean_air_voltage(p);
    return v0 + 0.1 * (p.VT - v0);
}

inline double resolve_measured_threshold(const Scenario& s) {
    if (s.feature.d_thres) return *s.feature.d_thres;
    return default_measured_threshold(s.sensor_params, s.calibrated);
}

// ---------------------------------------------------------------------------
// JSON

using json = nlohmann::json;

namespace detail {

template <class T>
T required(const json& j, const char* key, const std::string& path) {
    if (!j.contains(key)) throw ParseError("missing field '" + path + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError("field '" + path + key + "': " + e.what());
    }
}

template <class T>
T optional_field(const json& j, const char* key, const std::string& path, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError("field '" + path + key + "': " + e.what());
    }
}

inline std::optional<double> nullable(const json& j, const char* key, const std::string& path) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return required<double>(j, key, path);
}

inline json to_nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline Vec2 vec2(const json& j, const char* key, const std::string& path) {
    const auto a = required<std::vector<double>>(j, key, path);
    if (a.size() != 2) throw ParseError("field '" + path + key + "' must be a [x, y] pair");
    return {a[0], a[1]};
}

inline json sensor_to_json(const SensorParams& p) {
    return {{"k", p.k},
            {"b", p.b},
            {"R0", p.R0},
            {"RL", p.RL},
            {"VT", p.VT},
            {"sigma_b", p.sigma_b},
            {"sigma_k", p.sigma_k},
            {"tau_res", p.tau_res},
            {"tau_rec", p.tau_rec},
            {"sample_rate", p.sample_rate},
            {"concentration_floor", p.concentration_floor},
            {"max_concentration", p.max_concentration},
            {"rated_concentration", p.rated_concentration}};
}

inline SensorParams sensor_from_json(const json& j, SensorParams base) {
    const std::string path = "sensor.";
    base.k = optional_field(j, "k", path, base.k);
    base.b = optional_field(j, "b", path, base.b);
    base.R0 = optional_field(j, "R0", path, base.R0);
    base.RL = optional_field(j, "RL", path, base.RL);
    base.VT = optional_field(j, "VT", path, base.VT);
    base.sigma_b = optional_field(j, "sigma_b", path, base.sigma_b);
    base.sigma_k = optional_field(j, "sigma_k", path, base.sigma_k);
    base.tau_res = optional_field(j, "tau_res", path, base.tau_res);
    base.tau_rec = optional_field(j, "tau_rec", path, base.tau_rec);
    base.sample_rate = optional_field(j, "sample_rate", path, base.sample_rate);
    base.concentration_floor = optional_field(j, "concentration_floor", path, base.concentration_floor);
    base.max_concentration = optional_field(j, "max_concentration", path, base.max_concentration);
    base.rated_concentration = optional_field(j, "rated_concentration", path, base.rated_concentration);
    return base;
}

} // namespace detail

inline json scenario_to_json(const Scenario& s) {
    const auto& env = s.environment;
    json obstacles = json::array();
    for (const auto& r : env.obstacles()) obstacles.push_back({r.x_min, r.y_min, r.x_max, r.y_max});
    const GridCoord src = env.coord_of(s.true_source_cell);
    return {
        {"format_version", scenario_format_version},
        {"id", s.id},
        {"environment",
         {{"width_cells", env.width_cells()},
          {"height_cells", env.height_cells()},
          {"cell_size", env.cell_size()},
          {"inlet_wind", {env.inlet_wind().x, env.inlet_wind().y}},
          {"seed", env.seed()},
          {"obstacles", obstacles}}},
        {"plume",
         {{"diffusion", s.plume.diffusion},
          {"decay", s.plume.decay},
          {"source_strength", s.plume.source_strength},
          {"tolerance", s.plume.tolerance},
          {"max_sweeps", s.plume.max_sweeps},
          {"relaxation", s.plume.relaxation},
          {"concentration_scale", s.concentration_scale}}},
        {"true_source_cell", {src.col, src.row}},
        {"robot_start", {s.robot_start.x, s.robot_start.y}},
        {"sensor", {{"preset", s.sensor_preset}, {"params", detail::sensor_to_json(s.sensor_params)}}},
        {"calibrated", s.calibrated},
        {"feature",
         {{"kind", to_string(s.feature.kind)},
          {"lambda", s.feature.lambda},
          {"d_thres", detail::to_nullable(s.feature.d_thres)},
          {"c_thres_fraction", s.feature.c_thres_fraction}}},
        {"sampling",
         {{"mode", to_string(s.sampling.mode)},
          {"robot_speed", s.sampling.robot_speed},
          {"settle_time", s.sampling.settle_time}}},
        {"estimation",
         {{"max_iterations", s.estimation.max_iterations},
          {"sigma_M", detail::to_nullable(s.estimation.sigma_M)},
          {"sigma_E", detail::to_nullable(s.estimation.sigma_E)},
          {"entropy_fraction", s.estimation.entropy_fraction},
          {"confinement_cells", s.estimation.confinement_cells},
          {"mass_fraction", s.estimation.mass_fraction},
          {"prior_margin_cells", s.estimation.prior_margin_cells},
          {"max_replans", s.estimation.max_replans}}},
        {"planner",
         {{"clusters", s.planner.clusters},
          {"kmeans_iterations", s.planner.kmeans_iterations},
          {"seed", s.planner.seed},
          {"mass_floor", s.planner.mass_floor}}},
    };
}

inline Scenario scenario_from_json(const json& j) {
    using detail::optional_field;
    using detail::required;
    if (!j.is_object()) throw ParseError("scenario must be a JSON object");
    const int version = optional_field(j, "format_version", "", scenario_format_version);
    if (version != scenario_format_version)
        throw ParseError("field 'format_version': unsupported version " + std::to_string(version));

    Scenario s;
    s.id = optional_field<std::string>(j, "id", "", s.id);

    if (!j.contains("environment")) throw ParseError("missing field 'environment'");
    const json& je = j.at("environment");
    std::vector<Rect> rects;
    if (je.contains("obstacles")) {
        for (const auto& r : je.at("obstacles")) {
            std::vector<double> a;
            try {
                a = r.get<std::vector<double>>();
            } catch (const json::exception& e) {
                throw ParseError(std::string("field 'environment.obstacles': ") + e.what());
            }
            if (a.size() != 4) throw ParseError("field 'environment.obstacles': each entry is [x_min, y_min, x_max, y_max]");
            rects.push_back({a[0], a[1], a[2], a[3]});
        }
    }
    s.environment = Environment(required<int>(je, "width_cells", "environment."),
                                required<int>(je, "height_cells", "environment."),
                                required<double>(je, "cell_size", "environment."),
                                detail::vec2(je, "inlet_wind", "environment."),
                                optional_field<std::uint64_t>(je, "seed", "environment.", 0), std::move(rects));

    if (j.contains("plume")) {
        const json& jp = j.at("plume");
        const std::string path = "plume.";
        s.plume.diffusion = optional_field(jp, "diffusion", path, s.plume.diffusion);
        s.plume.decay = optional_field(jp, "decay", path, s.plume.decay);
        s.plume.source_strength = optional_field(jp, "source_strength", path, s.plume.source_strength);
        s.plume.tolerance = optional_field(jp, "tolerance", path, s.plume.tolerance);
        s.plume.max_sweeps = optional_field(jp, "max_sweeps", path, s.plume.max_sweeps);
        s.plume.relaxation = optional_field(jp, "relaxation", path, s.plume.relaxation);
        s.concentration_scale = optional_field(jp, "concentration_scale", path, s.concentration_scale);
    }

    const auto src = required<std::vector<int>>(j, "true_source_cell", "");
    if (src.size() != 2) throw ParseError("field 'true_source_cell' must be a [col, row] pair");
    if (!s.environment.in_grid(GridCoord{src[0], src[1]})) throw ValidationError("true_source_cell", "outside grid");
    s.true_source_cell = s.environment.index_of({src[0], src[1]});
    s.robot_start = detail::vec2(j, "robot_start", "");

    if (j.contains("sensor")) {
        const json& js = j.at("sensor");
        s.sensor_preset = optional_field<std::string>(js, "preset", "sensor.", s.sensor_preset);
        SensorParams base;
        if (auto p = sensor_preset(s.sensor_preset))
            base = *p;
        else if (s.sensor_preset != "custom")
            throw ParseError("field 'sensor.preset': unknown preset '" + s.sensor_preset + "'");
        s.sensor_params = js.contains("params") ? detail::sensor_from_json(js.at("params"), base) : base;
    }
    s.calibrated = optional_field(j, "calibrated", "", s.calibrated);

    if (j.contains("feature")) {
        const json& jf = j.at("feature");
        s.feature.kind = parse_feature_kind(optional_field<std::string>(jf, "kind", "feature.", "rank"));
        s.feature.lambda = optional_field(jf, "lambda", "feature.", s.feature.lambda);
        s.feature.d_thres = detail::nullable(jf, "d_thres", "feature.");
        s.feature.c_thres_fraction = optional_field(jf, "c_thres_fraction", "feature.", s.feature.c_thres_fraction);
    }
    if (j.contains("sampling")) {
        const json& js = j.at("sampling");
        s.sampling.mode = parse_sampling_mode(optional_field<std::string>(js, "mode", "sampling.", "sense_in_motion"));
        s.sampling.robot_speed = optional_field(js, "robot_speed", "sampling.", s.sampling.robot_speed);
        s.sampling.settle_time = optional_field(js, "settle_time", "sampling.", s.sampling.settle_time);
    }
    if (j.contains("estimation")) {
        const json& jx = j.at("estimation");
        const std::string path = "estimation.";
        auto& e = s.estimation;
        e.max_iterations = optional_field(jx, "max_iterations", path, e.max_iterations);
        e.sigma_M = detail::nullable(jx, "sigma_M", path);
        e.sigma_E = detail::nullable(jx, "sigma_E", path);
        e.entropy_fraction = optional_field(jx, "entropy_fraction", path, e.entropy_fraction);
        e.confinement_cells = optional_field(jx, "confinement_cells", path, e.confinement_cells);
        e.mass_fraction = optional_field(jx, "mass_fraction", path, e.mass_fraction);
        e.prior_margin_cells = optional_field(jx, "prior_margin_cells", path, e.prior_margin_cells);
        e.max_replans = optional_field(jx, "max_replans", path, e.max_replans);
    }
    if (j.contains("planner")) {
        const json& jp = j.at("planner");
        const std::string path = "planner.";
        s.planner.clusters = optional_field(jp, "clusters", path, s.planner.clusters);
        s.planner.kmeans_iterations = optional_field(jp, "kmeans_iterations", path, s.planner.kmeans_iterations);
        s.planner.seed = optional_field<std::uint64_t>(jp, "seed", path, s.planner.seed);
        s.planner.mass_floor = optional_field(jp, "mass_floor", path, s.planner.mass_floor);
    }
    s.validate();
    return s;
}

inline std::string dump_scenario(const Scenario& s) { return scenario_to_json(s).dump(2) + "\n"; }

inline Scenario parse_scenario(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed scenario: ") + e.what());
    }
    return scenario_from_json(j);
}

inline Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scenario file '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str());
}

inline void save_scenario(const Scenario& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write scenario file '" + path.string() + "'");
    out << dump_scenario(s);
}

} // namespace rankgsl
