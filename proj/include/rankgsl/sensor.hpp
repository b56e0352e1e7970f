#pragma once

// MOX gas sensor simulation.
//
// Forward path: concentration -> sensing resistance (datasheet power law)
// -> divider voltage -> first-order response/recovery -> additive noise.
// Inverse path: the calibration function recovering concentration from the
// divider voltage. Voltages in volts, resistances in kOhm, times in seconds.

#include "rankgsl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>

namespace rankgsl {

struct SensorParams {
    double k{-1.58};
    double b{0.17};
    double R0{100.0};
    double RL{47.0};
    double VT{5.0};
    double sigma_b{0.01};
    double sigma_k{0.02};
    double tau_res{2.04};
    double tau_rec{4.57};
    double sample_rate{10.0};
    /// Applied to concentrations before the power law (it is singular at 0).
    double concentration_floor{1e-9};
    /// Saturation clamp for calibrated readings as the voltage nears VT.
    double max_concentration{1e6};
    /// Full scale of the calibrated reading range (fixed-hit default threshold).
    double rated_concentration{50.0};

    friend bool operator==(const SensorParams&, const SensorParams&) = default;

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(name, "must be finite and > 0");
        };
        positive(R0, "sensor.R0");
        positive(RL, "sensor.RL");
        positive(VT, "sensor.VT");
        positive(tau_res, "sensor.tau_res");
        positive(tau_rec, "sensor.tau_rec");
        positive(sample_rate, "sensor.sample_rate");
        positive(concentration_floor, "sensor.concentration_floor");
        positive(max_concentration, "sensor.max_concentration");
        positive(rated_concentration, "sensor.rated_concentration");
        if (!(sigma_b >= 0.0)) throw ValidationError("sensor.sigma_b", "must be >= 0");
        if (!(sigma_k >= 0.0)) throw ValidationError("sensor.sigma_k", "must be >= 0");
        if (k == 0.0 || !std::isfinite(k)) throw ValidationError("sensor.k", "must be finite and non-zero");
        if (!std::isfinite(b)) throw ValidationError("sensor.b", "must be finite");
    }
};

/// Datasheet fit for ethanol with the two extreme factory baselines.
inline SensorParams sensor_I() { return SensorParams{}; }

inline SensorParams sensor_II() {
    SensorParams p;
    p.R0 = 1500.0;
    return p;
}

inline std::optional<SensorParams> sensor_preset(std::string_view name) {
    if (name == "sensor_I") return sensor_I();
    if (name == "sensor_II") return sensor_II();
    return std::nullopt;
}

/// Voltage that the calibration function maps back to `g_con`.
inline double concentration_to_voltage(const SensorParams& p, double g_con) {
    const double g = std::max(g_con, p.concentration_floor);
    const double rs = p.R0 * std::pow(g / std::pow(10.0, p.b), 1.0 / p.k);
    return p.RL * p.VT / (p.RL + rs);
}

/// Calibration function: concentration from divider voltage, clamped to
/// `max_concentration` near saturation.
inline double calibrate(const SensorParams& p, double v_out) {
    if (!(v_out > 0.0) || !(v_out < p.VT))
        throw DomainError("calibrate: v_out = " + std::to_string(v_out) + " outside (0, VT)");
    const double ratio = (p.RL * p.VT - p.RL * v_out) / (p.R0 * v_out);
    const double g = std::pow(10.0, p.b) * std::pow(ratio, p.k);
    if (!std::isfinite(g)) return p.max_concentration;
    return std::min(g, p.max_concentration);
}

inline double clean_air_voltage(const SensorParams& p) {
    return concentration_to_voltage(p, p.concentration_floor);
}

class SensorState {
public:
    explicit SensorState(std::uint64_t seed, double initial_reading = 0.0)
        : current_reading(initial_reading), rng_(seed) {}

    double current_reading{0.0};

    double draw_standard_normal() { return normal_(rng_); }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// One explicit first-order step toward `target`; response time constant
/// when rising, recovery time constant otherwise.
inline double step_dynamics(SensorState& state, const SensorParams& p, double target, double dt) {
    const double tau = target > state.current_reading ? p.tau_res : p.tau_rec;
    state.current_reading += (dt / tau) * (target - state.current_reading);
    return state.current_reading;
}

inline double noise_std(const SensorParams& p, double v) { return p.sigma_b + p.sigma_k * std::abs(v); }

inline double add_noise(SensorState& state, const SensorParams& p, double v) {
    const double sigma = noise_std(p, v);
    if (sigma == 0.0) return v;
    return std::clamp(v + sigma * state.draw_standard_normal(), 0.0, p.VT);
}

/// Measurement value d_i: raw noisy voltage when uncalibrated, calibrated
/// concentration otherwise.
inline double sample(SensorState& state, const SensorParams& p, double true_concentration, double dt,
                     bool calibrated) {
    const double target = concentration_to_voltage(p, true_concentration);
    const double reading = step_dynamics(state, p, target, dt);
    const double noisy = add_noise(state, p, reading);
    if (!calibrated) return noisy;
    constexpr double edge = 1e-12;
    return calibrate(p, std::clamp(noisy, edge * p.VT, (1.0 - edge) * p.VT));
}

} // namespace rankgsl
