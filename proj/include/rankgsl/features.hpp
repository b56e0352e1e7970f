#pragma once

// Gas features: turn a value sequence (measured D or estimated C, in robot
// arrival order) into the sequence compared by the likelihood.
//
//   value         m_i = d_i
//   fixed_hit     m_i = [d_i > thres]
//   adaptive_hit  m_i = [d_i > t_i],  t_1 = d_1,  t_i = lambda t_{i-1} + (1 - lambda) d_i
//   rank          m_i = #{j : d_j <= d_i} / n   (empirical distribution function)
//
// The rank feature is backed by SortedDataset, which keeps every value seen so
// far in sorted order. A batch of P new values costs O(P log P) to sort plus
// O(L + P) to merge with the L values already held.

#include "rankgsl/env_world.hpp"
#include "rankgsl/errors.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rankgsl {

/// One gas sample. `value` is the raw voltage for an uncalibrated sensor and
/// the calibrated concentration otherwise.
struct Measurement {
    Vec2 position;
    double time{0.0};
    double value{0.0};
    int iteration{0};

    friend bool operator==(const Measurement&, const Measurement&) = default;
};

enum class FeatureKind { value, fixed_hit, adaptive_hit, rank };

inline constexpr FeatureKind all_feature_kinds[] = {FeatureKind::value, FeatureKind::fixed_hit,
                                                    FeatureKind::adaptive_hit, FeatureKind::rank};

inline std::string_view to_string(FeatureKind k) {
    switch (k) {
    case FeatureKind::value: return "value";
    case FeatureKind::fixed_hit: return "fixed_hit";
    case FeatureKind::adaptive_hit: return "adaptive_hit";
    case FeatureKind::rank: return "rank";
    }
    return "unknown";
}

inline FeatureKind parse_feature_kind(std::string_view s) {
    for (auto k : all_feature_kinds)
        if (to_string(k) == s) return k;
    throw ParseError("unknown feature kind '" + std::string(s) + "'");
}

class SortedDataset {
public:
    struct Entry {
        double value;
        std::uint32_t handle; // arrival index
    };

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    std::span<const Entry> entries() const noexcept { return entries_; }

    std::vector<double> sorted_values() const {
        std::vector<double> out(entries_.size());
        std::transform(entries_.begin(), entries_.end(), out.begin(), [](const Entry& e) { return e.value; });
        return out;
    }

    /// Appends `values` (arrival handles size(), size()+1, ...) keeping the
    /// whole dataset sorted by (value, handle).
    void insert_batch(std::span<const double> values) {
        if (values.empty()) return;
        const std::size_t old = entries_.size();
        batch_.resize(values.size());
        for (std::size_t i = 0; i < values.size(); ++i)
            batch_[i] = Entry{values[i], static_cast<std::uint32_t>(old + i)};
        std::sort(batch_.begin(), batch_.end(), less);

        // Merge from the back so the existing prefix never has to move twice.
        entries_.resize(old + batch_.size());
        std::size_t a = old;
        std::size_t b = batch_.size();
        std::size_t out = entries_.size();
        while (b > 0) {
            if (a > 0 && less(batch_[b - 1], entries_[a - 1]))
                entries_[--out] = entries_[--a];
            else
                entries_[--out] = batch_[--b];
        }
    }

    /// Number of stored values <= x.
    std::size_t count_le(double x) const {
        auto it = std::upper_bound(entries_.begin(), entries_.end(), x,
                                   [](double v, const Entry& e) { return v < e.value; });
        return static_cast<std::size_t>(it - entries_.begin());
    }

    /// EDF value of every stored value, written at its arrival index. One
    /// linear pass; tied values all get the rank of the last member of the tie.
    void edf_in_arrival_order(std::span<double> out) const {
        const std::size_t n = entries_.size();
        if (out.size() != n) throw DomainError("edf_in_arrival_order: output size mismatch");
        const double dn = static_cast<double>(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && entries_[j + 1].value == entries_[i].value) ++j;
            const double rank = static_cast<double>(j + 1) / dn;
            for (std::size_t k = i; k <= j; ++k) out[entries_[k].handle] = rank;
            i = j + 1;
        }
    }

    void clear() noexcept { entries_.clear(); }

private:
    static bool less(const Entry& x, const Entry& y) {
        return x.value < y.value || (x.value == y.value && x.handle < y.handle);
    }

    std::vector<Entry> entries_;
    std::vector<Entry> batch_;
};

inline SortedDataset insert_batch(SortedDataset dataset, std::span<const double> new_values) {
    dataset.insert_batch(new_values);
    return dataset;
}

inline std::vector<double> feature_value(std::span<const double> d) { return {d.begin(), d.end()}; }

inline void feature_fixed_hit(std::span<const double> d, double thres, std::span<double> out) {
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] > thres ? 1.0 : 0.0;
}

inline std::vector<double> feature_fixed_hit(std::span<const double> d, double thres) {
    std::vector<double> m(d.size());
    feature_fixed_hit(d, thres, m);
    return m;
}

inline void check_lambda(double lambda) {
    if (!(lambda >= 0.0 && lambda < 1.0))
        throw DomainError("adaptive_hit: lambda = " + std::to_string(lambda) + " outside [0, 1)");
}

inline void feature_adaptive_hit(std::span<const double> d, double lambda, std::span<double> out) {
    check_lambda(lambda);
    double thres = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        thres = i == 0 ? d[0] : lambda * thres + (1.0 - lambda) * d[i];
        out[i] = d[i] > thres ? 1.0 : 0.0;
    }
}

inline std::vector<double> feature_adaptive_hit(std::span<const double> d, double lambda) {
    std::vector<double> m(d.size());
    feature_adaptive_hit(d, lambda, m);
    return m;
}

/// Adaptive thresholds t_1..t_n themselves (exposed for traces and tests).
inline std::vector<double> adaptive_thresholds(std::span<const double> d, double lambda) {
    check_lambda(lambda);
    std::vector<double> t(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) t[i] = i == 0 ? d[0] : lambda * t[i - 1] + (1.0 - lambda) * d[i];
    return t;
}

/// EDF rank of each d_i within `dataset` by binary search. `dataset` must
/// hold exactly the values of `d`.
inline std::vector<double> feature_rank(const SortedDataset& dataset, std::span<const double> d) {
    if (dataset.size() != d.size())
        throw DomainError("feature_rank: dataset holds " + std::to_string(dataset.size()) +
                          " values, sequence has " + std::to_string(d.size()));
    const double n = static_cast<double>(d.size());
    std::vector<double> m(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m[i] = static_cast<double>(dataset.count_le(d[i])) / n;
    return m;
}

/// Parameters of one side (measured or estimated) of a feature comparison.
struct FeatureSide {
    double threshold{0.0}; // fixed_hit only
    double lambda{0.7};    // adaptive_hit only
};

/// Dispatch on `kind`. For rank, `sorted` must hold exactly `values`; if it is
/// null a private sorted copy is built.
inline void extract(FeatureKind kind, std::span<const double> values, const FeatureSide& side,
                    const SortedDataset* sorted, std::span<double> out) {
    if (out.size() != values.size()) throw DomainError("extract: output size mismatch");
    switch (kind) {
    case FeatureKind::value:
        std::copy(values.begin(), values.end(), out.begin());
        return;
    case FeatureKind::fixed_hit:
        feature_fixed_hit(values, side.threshold, out);
        return;
    case FeatureKind::adaptive_hit:
        feature_adaptive_hit(values, side.lambda, out);
        return;
    case FeatureKind::rank: {
        if (sorted == nullptr) {
            SortedDataset own;
            own.insert_batch(values);
            own.edf_in_arrival_order(out);
        } else {
            if (sorted->size() != values.size()) throw DomainError("extract: dataset/sequence length mismatch");
            sorted->edf_in_arrival_order(out);
        }
        return;
    }
    }
    throw DomainError("extract: unknown feature kind");
}

inline std::vector<double> extract(FeatureKind kind, std::span<const double> values, const FeatureSide& side,
                                   const SortedDataset* sorted = nullptr) {
    std::vector<double> out(values.size());
    extract(kind, values, side, sorted, out);
    return out;
}

} // namespace rankgsl
