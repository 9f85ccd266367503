#pragma once

// Hydrograph skill metrics. Every function evaluates only indices where the
// observation is present; undefined results come back as std::nullopt rather
// than NaN so aggregates can count and exclude them.

#include "fineflood/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace fineflood {

using Metric = std::optional<double>;

struct HydrographPair {
    std::vector<Date> dates; // may be empty
    std::vector<double> obs; // NaN = missing
    std::vector<double> sim;
};

struct PeakOptions {
    int window = 3;            // +/- days searched in the simulation
    int min_distance = 30;     // minimum separation between observed peaks
    std::optional<double> min_prominence; // default: population std of obs
};

struct MetricReport {
    Metric nse, mse, rmse, kge, pearson_r, alpha_nse, beta_nse, beta_kge, peak_timing, missed_peaks, peak_mape;
    std::size_t n_samples = 0;

    static constexpr std::array<const char*, 11> names = {"nse",       "mse",       "rmse",        "kge",
                                                          "pearson_r", "alpha_nse", "beta_nse",    "beta_kge",
                                                          "peak_timing", "missed_peaks", "peak_mape"};
    std::array<Metric, 11> values() const {
        return {nse, mse, rmse, kge, pearson_r, alpha_nse, beta_nse, beta_kge, peak_timing, missed_peaks, peak_mape};
    }
    Metric get(std::string_view name) const {
        const auto v = values();
        for (std::size_t i = 0; i < names.size(); ++i)
            if (name == names[i]) return v[i];
        throw PreconditionError("unknown metric " + std::string(name));
    }
};

namespace detail {

struct Valid {
    std::vector<double> obs, sim;
};

inline Valid valid_points(const HydrographPair& p) {
    if (p.obs.size() != p.sim.size()) throw PreconditionError("obs and sim lengths differ");
    Valid v;
    for (std::size_t i = 0; i < p.obs.size(); ++i) {
        if (std::isnan(p.obs[i])) continue;
        if (!std::isfinite(p.sim[i])) throw PreconditionError("simulation must be finite where obs is present");
        v.obs.push_back(p.obs[i]);
        v.sim.push_back(p.sim[i]);
    }
    return v;
}

inline double mean(std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Population standard deviation.
inline double pstd(std::span<const double> x) {
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size()));
}

} // namespace detail

inline Metric mse(const HydrographPair& p) {
    const auto v = detail::valid_points(p);
    if (v.obs.empty()) return std::nullopt;
    double ss = 0.0;
    for (std::size_t i = 0; i < v.obs.size(); ++i) ss += (v.sim[i] - v.obs[i]) * (v.sim[i] - v.obs[i]);
    return ss / static_cast<double>(v.obs.size());
}

inline Metric rmse(const HydrographPair& p) {
    const auto m = mse(p);
    if (!m) return std::nullopt;
    return std::sqrt(*m);
}

inline Metric nse(const HydrographPair& p) {
    const auto v = detail::valid_points(p);
    if (v.obs.size() < 2) return std::nullopt;
    const double m = detail::mean(v.obs);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < v.obs.size(); ++i) {
        num += (v.sim[i] - v.obs[i]) * (v.sim[i] - v.obs[i]);
        den += (v.obs[i] - m) * (v.obs[i] - m);
    }
    if (!(den > 0.0)) return std::nullopt;
    return 1.0 - num / den;
}

inline Metric pearson_r(const HydrographPair& p) {
    const auto v = detail::valid_points(p);
    if (v.obs.size() < 2) return std::nullopt;
    const double mo = detail::mean(v.obs), ms = detail::mean(v.sim);
    double so = 0.0, ss = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < v.obs.size(); ++i) {
        cov += (v.obs[i] - mo) * (v.sim[i] - ms);
        so += (v.obs[i] - mo) * (v.obs[i] - mo);
        ss += (v.sim[i] - ms) * (v.sim[i] - ms);
    }
    if (!(so > 0.0) || !(ss > 0.0)) return std::nullopt;
    return cov / std::sqrt(so * ss);
}

/// Variability ratio std(sim) / std(obs).
inline Metric alpha_nse(const HydrographPair& p) {
    const auto v = detail::valid_points(p);
    if (v.obs.size() < 2) return std::nullopt;
    const double so = detail::pstd(v.obs);
    if (!(so > 0.0)) return std::nullopt;
    return detail::pstd(v.sim) / so;
}

/// Bias normalized by observed std: (mean(sim) - mean(obs)) / std(obs).
inline Metric beta_nse(const HydrographPair& p) {
    const auto v = detail::valid_points(p);
    if (v.obs.size() < 2) return std::nullopt;
    const double so = detail::pstd(v.obs);
    if (!(so > 0.0)) return std::nullopt;
    return (detail::mean(v.sim) - detail::mean(v.obs)) / so;
}

/// Bias ratio mean(sim) / mean(obs).
inline Metric beta_kge(const HydrographPair& p) {
    const auto v = detail::valid_points(p);
    if (v.obs.size() < 2) return std::nullopt;
    const double mo = detail::mean(v.obs);
    if (mo == 0.0) return std::nullopt;
    return detail::mean(v.sim) / mo;
}

inline Metric kge_from_components(Metric r, Metric alpha, Metric beta) {
    if (!r || !alpha || !beta) return std::nullopt;
    return 1.0 - std::sqrt((*r - 1.0) * (*r - 1.0) + (*alpha - 1.0) * (*alpha - 1.0) + (*beta - 1.0) * (*beta - 1.0));
}

inline Metric kge(const HydrographPair& p) { return kge_from_components(pearson_r(p), alpha_nse(p), beta_kge(p)); }

// ---------------------------------------------------------------------------
// Peaks

/// Local maxima (flat tops resolve to their middle sample) with topographic
/// prominence >= min_prominence, thinned so kept peaks are >= min_distance apart
/// (taller peaks win). Sorted ascending.
inline std::vector<std::size_t> detect_peaks(std::span<const double> x, double min_prominence, int min_distance) {
    std::vector<std::size_t> candidates;
    const std::size_t n = x.size();
    if (n < 3) return candidates;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(x[i - 1] < x[i])) continue;
        std::size_t j = i;
        while (j + 1 < n && x[j + 1] == x[i]) ++j;
        if (j + 1 < n && x[j + 1] < x[i]) candidates.push_back((i + j) / 2);
        i = j;
    }

    std::vector<std::size_t> prominent;
    for (std::size_t p : candidates) {
        double left_min = x[p];
        for (std::size_t i = p; i-- > 0;) {
            if (x[i] > x[p]) break;
            left_min = std::min(left_min, x[i]);
        }
        double right_min = x[p];
        for (std::size_t i = p + 1; i < n; ++i) {
            if (x[i] > x[p]) break;
            right_min = std::min(right_min, x[i]);
        }
        if (x[p] - std::max(left_min, right_min) >= min_prominence) prominent.push_back(p);
    }

    std::vector<std::size_t> by_height = prominent;
    std::stable_sort(by_height.begin(), by_height.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
    std::vector<std::size_t> kept;
    for (std::size_t p : by_height) {
        const bool clear = std::none_of(kept.begin(), kept.end(), [&](std::size_t k) {
            return (k > p ? k - p : p - k) < static_cast<std::size_t>(std::max(min_distance, 0));
        });
        if (clear) kept.push_back(p);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

namespace detail {

struct PeakMatch {
    std::size_t n_peaks = 0;
    std::vector<double> offsets; // |day offset| for matched peaks
    std::vector<double> ape;     // absolute percentage error at each obs peak
};

/// Peak metrics run on the compacted series of valid observations.
inline PeakMatch match_peaks(const HydrographPair& p, const PeakOptions& opt) {
    const auto v = valid_points(p);
    PeakMatch m;
    if (v.obs.size() < 3) return m;
    const double prom = opt.min_prominence.value_or(pstd(v.obs));
    const auto peaks = detect_peaks(v.obs, prom, opt.min_distance);
    m.n_peaks = peaks.size();
    const auto n = static_cast<long>(v.obs.size());
    for (std::size_t pk : peaks) {
        const long t = static_cast<long>(pk);
        const long lo = std::max(0L, t - opt.window);
        const long hi = std::min(n - 1, t + opt.window);
        long best = lo;
        for (long i = lo + 1; i <= hi; ++i)
            if (v.sim[static_cast<std::size_t>(i)] > v.sim[static_cast<std::size_t>(best)]) best = i;
        const auto s = [&](long i) { return v.sim[static_cast<std::size_t>(i)]; };
        const bool local_peak = (best == 0 || s(best) >= s(best - 1)) && (best == n - 1 || s(best) >= s(best + 1));
        if (local_peak) m.offsets.push_back(static_cast<double>(std::abs(best - t)));
        if (v.obs[pk] != 0.0) m.ape.push_back(std::abs(v.sim[pk] - v.obs[pk]) / std::abs(v.obs[pk]) * 100.0);
    }
    return m;
}

} // namespace detail

/// Mean absolute offset (days) between each observed peak and the simulated maximum in its window.
inline Metric peak_timing(const HydrographPair& p, const PeakOptions& opt = {}) {
    const auto m = detail::match_peaks(p, opt);
    if (m.offsets.empty()) return std::nullopt;
    return detail::mean(m.offsets);
}

/// Fraction of observed peaks without a simulated local peak inside the window.
inline Metric missed_peaks(const HydrographPair& p, const PeakOptions& opt = {}) {
    const auto m = detail::match_peaks(p, opt);
    if (m.n_peaks == 0) return std::nullopt;
    return static_cast<double>(m.n_peaks - m.offsets.size()) / static_cast<double>(m.n_peaks);
}

/// Mean absolute percentage error at observed peak days.
inline Metric peak_mape(const HydrographPair& p, const PeakOptions& opt = {}) {
    const auto m = detail::match_peaks(p, opt);
    if (m.ape.empty()) return std::nullopt;
    return detail::mean(m.ape);
}

inline MetricReport compute_metrics(const HydrographPair& p, const PeakOptions& opt = {}) {
    MetricReport r;
    r.n_samples = detail::valid_points(p).obs.size();
    r.nse = nse(p);
    r.mse = mse(p);
    r.rmse = rmse(p);
    r.pearson_r = pearson_r(p);
    r.alpha_nse = alpha_nse(p);
    r.beta_nse = beta_nse(p);
    r.beta_kge = beta_kge(p);
    r.kge = kge_from_components(r.pearson_r, r.alpha_nse, r.beta_kge);
    const auto m = detail::match_peaks(p, opt);
    if (!m.offsets.empty()) r.peak_timing = detail::mean(m.offsets);
    if (m.n_peaks > 0)
        r.missed_peaks = static_cast<double>(m.n_peaks - m.offsets.size()) / static_cast<double>(m.n_peaks);
    if (!m.ape.empty()) r.peak_mape = detail::mean(m.ape);
    return r;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class AggregateKind { Mean, Median };

struct Aggregate {
    Metric center;
    Metric spread;
    std::size_t n_present = 0;
    std::size_t n_absent = 0;
};

/// Mean -> (mean, sample std / sqrt(n)); median -> (median, mean absolute deviation
/// about the median / sqrt(n)). Absent values are excluded and counted.
inline Aggregate aggregate(std::span<const Metric> values, AggregateKind kind) {
    Aggregate a;
    std::vector<double> x;
    for (const auto& v : values) {
        if (v && std::isfinite(*v))
            x.push_back(*v);
        else
            ++a.n_absent;
    }
    a.n_present = x.size();
    if (x.empty()) return a;
    const double n = static_cast<double>(x.size());
    if (kind == AggregateKind::Mean) {
        const double m = detail::mean(x);
        double ss = 0.0;
        for (double v : x) ss += (v - m) * (v - m);
        const double sd = x.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        a.center = m;
        a.spread = sd / std::sqrt(n);
    } else {
        std::vector<double> s = x;
        std::sort(s.begin(), s.end());
        const std::size_t k = s.size();
        const double med = k % 2 ? s[k / 2] : 0.5 * (s[k / 2 - 1] + s[k / 2]);
        double mad = 0.0;
        for (double v : x) mad += std::abs(v - med);
        mad /= n;
        a.center = med;
        a.spread = mad / std::sqrt(n);
    }
    return a;
}

inline Aggregate aggregate(std::span<const double> values, AggregateKind kind) {
    std::vector<Metric> m(values.begin(), values.end());
    return aggregate(std::span<const Metric>(m), kind);
}

} // namespace fineflood
