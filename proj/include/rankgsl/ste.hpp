#pragma once

// Bayesian source term estimation over the grid cells.
//
// Each candidate source cell j is scored by comparing the measured feature
// sequence M with the feature sequence E_j extracted from the plume that j
// would produce at the same sampling positions:
//
//   log p(D | j) = -1/2 * sum_i n/(n+1) * (e_i - m_i)^2 / (sigma_E^2 + sigma_M^2)
//
// Rank features rewrite the whole history whenever a batch arrives, so the
// likelihood is always evaluated over all n samples and combined with the
// base prior (never chained onto the previous posterior).

#include "rankgsl/env_world.hpp"
#include "rankgsl/errors.hpp"
#include "rankgsl/features.hpp"
#include "rankgsl/plume.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

namespace rankgsl {

class Posterior {
public:
    Posterior() = default;

    /// Takes an already normalized probability vector.
    explicit Posterior(std::vector<double> probability) : p_(std::move(probability)) {
        entropy_ = 0.0;
        argmax_ = CellIndex{0};
        double best = -1.0;
        support_ = 0;
        for (std::size_t i = 0; i < p_.size(); ++i) {
            const double v = p_[i];
            if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("posterior: probability must be finite and >= 0");
            if (v > 0.0) {
                entropy_ -= v * std::log(v);
                ++support_;
            }
            if (v > best) {
                best = v;
                argmax_ = CellIndex{i};
            }
        }
    }

    std::span<const double> probability() const noexcept { return p_; }
    double operator[](CellIndex c) const { return p_.at(c.value); }
    std::size_t size() const noexcept { return p_.size(); }
    /// Shannon entropy in nats.
    double entropy() const noexcept { return entropy_; }
    /// Highest-probability cell, lowest index on ties.
    CellIndex argmax_cell() const noexcept { return argmax_; }
    std::size_t support_size() const noexcept { return support_; }
    double total() const { return std::accumulate(p_.begin(), p_.end(), 0.0); }

    friend bool operator==(const Posterior&, const Posterior&) = default;

private:
    std::vector<double> p_;
    double entropy_{0.0};
    CellIndex argmax_{};
    std::size_t support_{0};
};

struct NoiseModel {
    double sigma_M{0.2};
    double sigma_E{0.2};

    double combined_variance() const { return sigma_M * sigma_M + sigma_E * sigma_E; }
};

inline double log_likelihood(std::span<const double> m, std::span<const double> e, const NoiseModel& noise) {
    if (m.size() != e.size())
        throw DomainError("log_likelihood: |M| = " + std::to_string(m.size()) + " but |E| = " + std::to_string(e.size()));
    if (m.empty()) throw DomainError("log_likelihood: needs at least one sample");
    const double var = noise.combined_variance();
    if (!(var > 0.0)) throw DomainError("log_likelihood: sigma_E^2 + sigma_M^2 must be > 0");
    double ss = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double r = e[i] - m[i];
        ss += r * r;
    }
    const double n = static_cast<double>(m.size());
    return -0.5 * (n / (n + 1.0)) * ss / var;
}

/// Uniform over free cells at least `margin_cells` away from the outer
/// boundary; zero on obstacles and in the margin.
inline Posterior make_prior(const Environment& env, int margin_cells = 1) {
    std::vector<double> p(env.cell_count(), 0.0);
    std::size_t count = 0;
    for (int r = 0; r < env.height_cells(); ++r)
        for (int c = 0; c < env.width_cells(); ++c) {
            const bool interior = c >= margin_cells && r >= margin_cells && c < env.width_cells() - margin_cells &&
                                  r < env.height_cells() - margin_cells;
            const GridCoord g{c, r};
            if (interior && env.is_free(g)) {
                p[env.index_of(g).value] = 1.0;
                ++count;
            }
        }
    if (count == 0) throw ValidationError("environment", "no free interior cell for the prior");
    const double u = 1.0 / static_cast<double>(count);
    for (auto& v : p)
        if (v > 0.0) v = u;
    return Posterior(std::move(p));
}

/// prior * exp(log_likelihood), renormalized; max-subtracted in the log domain.
inline Posterior update_posterior(const Posterior& prior, std::span<const double> log_likelihoods) {
    const auto pp = prior.probability();
    if (log_likelihoods.size() != pp.size()) throw DomainError("update_posterior: size mismatch");
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pp.size(); ++i) {
        if (pp[i] <= 0.0) continue;
        if (!std::isfinite(log_likelihoods[i]))
            throw DomainError("update_posterior: non-finite log-likelihood at cell " + std::to_string(i));
        best = std::max(best, log_likelihoods[i]);
    }
    std::vector<double> w(pp.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < pp.size(); ++i) {
        if (pp[i] <= 0.0) continue;
        w[i] = pp[i] * std::exp(log_likelihoods[i] - best);
        total += w[i];
    }
    if (!(total > 0.0)) throw DomainError("update_posterior: posterior vanished everywhere (prior and likelihood disjoint)");
    for (auto& v : w) v /= total;
    return Posterior(std::move(w));
}

enum class Termination { continue_, converged, max_iter };

inline std::string_view to_string(Termination t) {
    switch (t) {
    case Termination::continue_: return "continue";
    case Termination::converged: return "converged";
    case Termination::max_iter: return "max_iter";
    }
    return "unknown";
}

struct TerminationConfig {
    double entropy_threshold{0.0}; // nats
    double confinement_radius{0.0}; // meters
    double mass_fraction{0.9};
    int max_iterations{30};
};

/// Defaults: entropy below 10% of the prior's entropy, 90% of the mass within
/// a box whose diagonal is under four cell diagonals.
inline TerminationConfig default_termination(const Environment& env, const Posterior& prior, int max_iterations = 30) {
    TerminationConfig t;
    t.entropy_threshold = 0.1 * std::log(static_cast<double>(prior.support_size()));
    t.confinement_radius = 4.0 * env.cell_diagonal();
    t.max_iterations = max_iterations;
    return t;
}

/// Diagonal (meters, between cell centers) of the smallest axis-aligned box
/// around the most probable cells that jointly hold `mass_fraction`.
inline double mass_extent(const Environment& env, const Posterior& post, double mass_fraction) {
    const auto p = post.probability();
    std::vector<std::size_t> order;
    order.reserve(post.support_size());
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
    int cmin = std::numeric_limits<int>::max(), rmin = cmin, cmax = -1, rmax = -1;
    double acc = 0.0;
    for (std::size_t i : order) {
        const GridCoord g = env.coord_of(CellIndex{i});
        cmin = std::min(cmin, g.col);
        cmax = std::max(cmax, g.col);
        rmin = std::min(rmin, g.row);
        rmax = std::max(rmax, g.row);
        acc += p[i];
        if (acc >= mass_fraction) break;
    }
    if (cmax < 0) return 0.0;
    return env.cell_size() * std::hypot(cmax - cmin, rmax - rmin);
}

inline Termination check_termination(const Environment& env, const Posterior& post, int iteration,
                                     const TerminationConfig& cfg) {
    if (post.entropy() < cfg.entropy_threshold && mass_extent(env, post, cfg.mass_fraction) < cfg.confinement_radius)
        return Termination::converged;
    if (iteration >= cfg.max_iterations) return Termination::max_iter;
    return Termination::continue_;
}

inline CellIndex estimate_source(const Posterior& post) { return post.argmax_cell(); }

// ---------------------------------------------------------------------------

struct EstimatorConfig {
    FeatureKind kind{FeatureKind::rank};
    FeatureSide measured{};           // d_thres / lambda for D
    double c_thres_fraction{0.1};     // estimated-side fixed threshold, fraction of the field maximum
    double lambda{0.7};               // estimated-side adaptive smoothing
    NoiseModel noise{};
    double concentration_scale{1.0};  // plume units -> concentration units of E
};

/// Incremental STE engine. Holds, per candidate cell, the estimated values at
/// every sampling position so far (and for the rank feature a sorted copy of
/// them), so a batch of P samples costs O(n + P log P) per candidate.
class SourceTermEstimator {
public:
    SourceTermEstimator(const Environment& env, const PlumeCache& plumes, Posterior prior, EstimatorConfig cfg)
        : env_(&env), plumes_(&plumes), prior_(std::move(prior)), cfg_(cfg), posterior_(prior_) {
        if (prior_.size() != env.cell_count()) throw DomainError("estimator: prior does not match the grid");
        if (cfg_.kind == FeatureKind::adaptive_hit) {
            check_lambda(cfg_.lambda);
            check_lambda(cfg_.measured.lambda);
        }
        const auto p = prior_.probability();
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p[i] > 0.0) candidates_.push_back(CellIndex{i});
        if (cfg_.kind == FeatureKind::rank)
            sorted_.resize(candidates_.size());
        else
            estimates_.resize(candidates_.size());
        thresholds_.resize(candidates_.size(), 0.0);
        if (cfg_.kind == FeatureKind::fixed_hit)
            for (std::size_t j = 0; j < candidates_.size(); ++j)
                thresholds_[j] = cfg_.c_thres_fraction * cfg_.concentration_scale * plumes.get(candidates_[j]).max();
        log_lik_.assign(env.cell_count(), 0.0);
    }

    /// Adds a batch of measurements and returns the updated posterior.
    const Posterior& add_batch(std::span<const Measurement> batch) {
        if (batch.empty()) return posterior_;
        std::vector<Stencil> stencils;
        stencils.reserve(batch.size());
        std::vector<double> fresh;
        fresh.reserve(batch.size());
        for (const auto& m : batch) {
            stencils.push_back(make_stencil(*env_, m.position));
            measured_.push_back(m.value);
            fresh.push_back(m.value);
        }
        const std::size_t n = measured_.size();
        measured_sorted_.insert_batch(fresh);
        features_m_.resize(n);
        extract(cfg_.kind, measured_, cfg_.measured, &measured_sorted_, features_m_);

        features_e_.resize(n);
        std::vector<double> est(batch.size());
        const FeatureSide est_side{0.0, cfg_.lambda};
        for (std::size_t j = 0; j < candidates_.size(); ++j) {
            const auto& field = plumes_->get(candidates_[j]).concentration;
            for (std::size_t i = 0; i < batch.size(); ++i)
                est[i] = cfg_.concentration_scale * evaluate(field, stencils[i]);
            if (cfg_.kind == FeatureKind::rank) {
                sorted_[j].insert_batch(est);
                sorted_[j].edf_in_arrival_order(features_e_);
            } else {
                auto& e = estimates_[j];
                e.insert(e.end(), est.begin(), est.end());
                FeatureSide side = est_side;
                side.threshold = thresholds_[j];
                extract(cfg_.kind, e, side, nullptr, features_e_);
            }
            log_lik_[candidates_[j].value] = log_likelihood(features_m_, features_e_, cfg_.noise);
        }
        posterior_ = update_posterior(prior_, log_lik_);
        return posterior_;
    }

    const Posterior& posterior() const noexcept { return posterior_; }
    const Posterior& prior() const noexcept { return prior_; }
    std::size_t measurement_count() const noexcept { return measured_.size(); }
    std::span<const double> measured_values() const noexcept { return measured_; }
    /// Current M_{1:n}.
    std::span<const double> measured_features() const noexcept { return features_m_; }
    std::span<const double> log_likelihoods() const noexcept { return log_lik_; }
    std::span<const CellIndex> candidates() const noexcept { return candidates_; }
    const EstimatorConfig& config() const noexcept { return cfg_; }

private:
    const Environment* env_;
    const PlumeCache* plumes_;
    Posterior prior_;
    EstimatorConfig cfg_;
    Posterior posterior_;
    std::vector<CellIndex> candidates_;
    std::vector<double> measured_;
    SortedDataset measured_sorted_;
    std::vector<double> features_m_;
    std::vector<double> features_e_;
    std::vector<std::vector<double>> estimates_;
    std::vector<SortedDataset> sorted_;
    std::vector<double> thresholds_;
    std::vector<double> log_lik_;
};

} // namespace rankgsl
