#pragma once

#include "fineflood/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fineflood {

enum class DimKind { IntUniform, LogUniform, Categorical };

struct Dim {
    std::string name;
    DimKind kind = DimKind::IntUniform;
    double low = 0.0; // numeric dims
    double high = 0.0;
    std::vector<std::string> choices; // categorical dims

    /// Working-space bounds: log for LogUniform, [0, k-1] for categoricals.
    double lo() const { return kind == DimKind::LogUniform ? std::log(low) : low; }
    double hi() const { return kind == DimKind::LogUniform ? std::log(high) : high; }
};

/// One value per dim, in dim order. Ints hold whole numbers, log dims the raw
/// (not logged) value, categoricals the choice index.
using Point = std::vector<double>;

struct SearchSpace {
    std::vector<Dim> dims;

    void validate() const {
        if (dims.empty()) throw PreconditionError("search space has no dims");
        for (const auto& d : dims) {
            if (d.kind == DimKind::Categorical) {
                if (d.choices.empty()) throw PreconditionError("dim " + d.name + ": no choices");
            } else {
                if (!(d.low <= d.high)) throw PreconditionError("dim " + d.name + ": empty support");
                if (d.kind == DimKind::LogUniform && !(d.low > 0.0))
                    throw PreconditionError("dim " + d.name + ": log-uniform bounds must be positive");
                if (d.kind == DimKind::IntUniform && (d.low != std::round(d.low) || d.high != std::round(d.high)))
                    throw PreconditionError("dim " + d.name + ": int bounds must be whole numbers");
            }
        }
    }

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < dims.size(); ++i)
            if (dims[i].name == name) return i;
        throw PreconditionError("search space has no dim '" + std::string(name) + "'");
    }

    bool has(std::string_view name) const {
        return std::any_of(dims.begin(), dims.end(), [&](const Dim& d) { return d.name == name; });
    }

    bool contains(const Point& p) const {
        if (p.size() != dims.size()) return false;
        for (std::size_t i = 0; i < dims.size(); ++i) {
            const auto& d = dims[i];
            const double v = p[i];
            if (!std::isfinite(v)) return false;
            if (d.kind == DimKind::Categorical) {
                if (v != std::round(v) || v < 0 || v >= static_cast<double>(d.choices.size())) return false;
            } else {
                if (v < d.low || v > d.high) return false;
                if (d.kind == DimKind::IntUniform && v != std::round(v)) return false;
            }
        }
        return true;
    }

    nlohmann::json to_json(const Point& p) const {
        nlohmann::json j = nlohmann::json::object();
        for (std::size_t i = 0; i < dims.size(); ++i) {
            const auto& d = dims[i];
            if (d.kind == DimKind::Categorical) j[d.name] = d.choices.at(static_cast<std::size_t>(p[i]));
            else if (d.kind == DimKind::IntUniform) j[d.name] = static_cast<long long>(p[i]);
            else j[d.name] = p[i];
        }
        return j;
    }

    Point from_json(const nlohmann::json& j) const {
        Point p(dims.size());
        for (std::size_t i = 0; i < dims.size(); ++i) {
            const auto& d = dims[i];
            const auto& v = j.at(d.name);
            if (d.kind == DimKind::Categorical) {
                const auto s = v.is_string() ? v.get<std::string>() : v.dump();
                const auto it = std::find(d.choices.begin(), d.choices.end(), s);
                if (it == d.choices.end()) throw DataError("dim " + d.name + ": unknown choice " + s);
                p[i] = static_cast<double>(it - d.choices.begin());
            } else {
                p[i] = v.get<double>();
            }
        }
        if (!contains(p)) throw DataError("point outside the search space: " + j.dump());
        return p;
    }

    const std::string& choice(const Point& p, std::string_view name) const {
        const auto i = index_of(name);
        return dims[i].choices.at(static_cast<std::size_t>(p[i]));
    }

    double value(const Point& p, std::string_view name) const { return p[index_of(name)]; }

    static SearchSpace fine_tune() {
        return {{{"epochs", DimKind::IntUniform, 1, 40, {}},
                 {"lr_stage1", DimKind::LogUniform, 1e-5, 1e-3, {}},
                 {"lr_stage2", DimKind::LogUniform, 1e-6, 1e-4, {}},
                 {"loss", DimKind::Categorical, 0, 0, {"NSE", "MSE", "RMSE"}},
                 {"modules", DimKind::Categorical, 0, 0, {"Full", "Head"}}}};
    }

    static SearchSpace single_basin() {
        return {{{"epochs", DimKind::IntUniform, 1, 40, {}},
                 {"lr_stage1", DimKind::LogUniform, 1e-5, 1e-3, {}},
                 {"lr_stage2", DimKind::LogUniform, 1e-6, 1e-4, {}},
                 {"loss", DimKind::Categorical, 0, 0, {"NSE", "MSE", "RMSE"}},
                 {"hidden_size", DimKind::Categorical, 0, 0, {"16", "32", "64"}}}};
    }
};

inline std::uint64_t hash_point(const Point& p) {
    Fnv1a h;
    for (double v : p) h.update_value(v == 0.0 ? 0.0 : v); // fold -0 into +0
    return h.digest();
}

enum class TrialStatus { Ok, Failed };

struct SweepTrial {
    int trial_id = 0;
    Point point;
    double objective = kNaN;
    TrialStatus status = TrialStatus::Failed;
    double duration = 0.0;
    std::string message;

    bool ok() const { return status == TrialStatus::Ok && std::isfinite(objective); }
};

struct TpeOptions {
    int n_startup = 10;
    double gamma = 0.25;
    int n_candidates = 24;
    double prior_weight = 1.0;
};

/// |G| for `n_ok` successful trials.
inline std::size_t n_good(std::size_t n_ok, double gamma) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(n_ok))));
}

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Mixture of Gaussians truncated to [lo, hi], one per observation plus a prior
/// component at the midpoint with width `range`. Each observation's width is the
/// larger gap to its sorted neighbours (the prior mean included), clipped to
/// [range / min(100, n + 1), range].
struct Parzen {
    double lo, hi;
    std::vector<double> mu, sigma, weight, mass;

    Parzen(std::span<const double> obs, double lo_, double hi_, double prior_weight) : lo(lo_), hi(hi_) {
        const double range = hi - lo;
        const double mid = 0.5 * (lo + hi);
        const double n = static_cast<double>(obs.size());
        const double min_bw = range / std::min(100.0, n + 1.0);
        std::vector<double> sorted(obs.begin(), obs.end());
        sorted.push_back(mid);
        std::sort(sorted.begin(), sorted.end());
        for (double x : obs) {
            const auto i = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), x) - sorted.begin());
            const double left = i > 0 ? x - sorted[i - 1] : 0.0;
            // skip duplicates of x itself when looking right
            auto j = i + 1;
            while (j < sorted.size() && sorted[j] == x) ++j;
            const double right = j < sorted.size() ? sorted[j] - x : 0.0;
            add(x, std::clamp(std::max(left, right), min_bw, range), 1.0);
        }
        add(mid, range, prior_weight);
        double total = 0.0;
        for (double w : weight) total += w;
        for (double& w : weight) w /= total;
    }

    void add(double m, double s, double w) {
        if (!(s > 0.0)) s = 1.0; // zero-width support: any positive width gives a flat density
        mu.push_back(m);
        sigma.push_back(s);
        weight.push_back(w);
        mass.push_back(std::max(normal_cdf((hi - m) / s) - normal_cdf((lo - m) / s), 1e-300));
    }

    double log_pdf(double x) const {
        double p = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const double z = (x - mu[i]) / sigma[i];
            p += weight[i] * std::exp(-0.5 * z * z) / (sigma[i] * std::sqrt(2.0 * std::numbers::pi) * mass[i]);
        }
        return std::log(std::max(p, 1e-300));
    }

    template <typename Rng>
    double sample(Rng& rng) const {
        if (hi == lo) return lo;
        std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
        const auto i = pick(rng);
        std::normal_distribution<double> nd(mu[i], sigma[i]);
        for (int tries = 0; tries < 1000; ++tries) {
            const double x = nd(rng);
            if (x >= lo && x <= hi) return x;
        }
        return std::clamp(mu[i], lo, hi);
    }
};

struct Categorical {
    std::vector<double> prob;

    Categorical(std::span<const double> obs, std::size_t k) : prob(k, 1.0) {
        for (double x : obs) prob[static_cast<std::size_t>(x)] += 1.0;
        const double total = static_cast<double>(k + obs.size());
        for (double& p : prob) p /= total;
    }

    double log_pdf(double x) const { return std::log(prob[static_cast<std::size_t>(x)]); }

    template <typename Rng>
    double sample(Rng& rng) const {
        std::discrete_distribution<std::size_t> pick(prob.begin(), prob.end());
        return static_cast<double>(pick(rng));
    }
};

inline double to_working(const Dim& d, double v) { return d.kind == DimKind::LogUniform ? std::log(v) : v; }

inline double from_working(const Dim& d, double w) {
    switch (d.kind) {
    case DimKind::LogUniform: return std::clamp(std::exp(w), d.low, d.high);
    case DimKind::IntUniform: return std::clamp(std::round(w), d.low, d.high);
    case DimKind::Categorical: return w;
    }
    return w;
}

} // namespace detail

/// One draw from the prior: uniform ints (inclusive), log-uniform, uniform categories.
template <typename Rng>
Point prior_sample(const SearchSpace& space, Rng& rng) {
    Point p;
    for (const auto& d : space.dims) {
        switch (d.kind) {
        case DimKind::IntUniform: {
            std::uniform_int_distribution<long long> u(static_cast<long long>(d.low), static_cast<long long>(d.high));
            p.push_back(static_cast<double>(u(rng)));
            break;
        }
        case DimKind::LogUniform: {
            std::uniform_real_distribution<double> u(std::log(d.low), std::log(d.high));
            p.push_back(std::clamp(std::exp(u(rng)), d.low, d.high));
            break;
        }
        case DimKind::Categorical: {
            std::uniform_int_distribution<std::size_t> u(0, d.choices.size() - 1);
            p.push_back(static_cast<double>(u(rng)));
            break;
        }
        }
    }
    return p;
}

/// Next point to evaluate. `pending` points (proposed but not yet scored) join the bad set.
template <typename Rng>
Point tpe_propose(std::span<const SweepTrial> history, const SearchSpace& space, Rng& rng,
                  const TpeOptions& opt = {}, std::span<const Point> pending = {}) {
    std::vector<const SweepTrial*> ok;
    for (const auto& t : history)
        if (t.ok()) ok.push_back(&t);
    if (ok.size() < static_cast<std::size_t>(std::max(opt.n_startup, 1))) return prior_sample(space, rng);

    std::stable_sort(ok.begin(), ok.end(), [](const SweepTrial* a, const SweepTrial* b) {
        if (a->objective != b->objective) return a->objective > b->objective;
        return a->trial_id < b->trial_id;
    });
    const std::size_t ng = n_good(ok.size(), opt.gamma);

    const std::size_t nd = space.dims.size();
    std::vector<detail::Parzen> l_num, g_num;
    std::vector<detail::Categorical> l_cat, g_cat;
    std::vector<std::size_t> slot(nd);
    for (std::size_t k = 0; k < nd; ++k) {
        const auto& d = space.dims[k];
        std::vector<double> good, bad;
        for (std::size_t i = 0; i < ok.size(); ++i)
            (i < ng ? good : bad).push_back(detail::to_working(d, ok[i]->point[k]));
        for (const auto& p : pending) bad.push_back(detail::to_working(d, p[k]));
        if (d.kind == DimKind::Categorical) {
            slot[k] = l_cat.size();
            l_cat.emplace_back(good, d.choices.size());
            g_cat.emplace_back(bad, d.choices.size());
        } else {
            slot[k] = l_num.size();
            l_num.emplace_back(good, d.lo(), d.hi(), opt.prior_weight);
            g_num.emplace_back(bad, d.lo(), d.hi(), opt.prior_weight);
        }
    }

    Point best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < std::max(opt.n_candidates, 1); ++c) {
        Point cand(nd);
        double score = 0.0;
        for (std::size_t k = 0; k < nd; ++k) {
            const auto& d = space.dims[k];
            if (d.kind == DimKind::Categorical) {
                cand[k] = l_cat[slot[k]].sample(rng);
                score += l_cat[slot[k]].log_pdf(cand[k]) - g_cat[slot[k]].log_pdf(cand[k]);
            } else {
                cand[k] = detail::from_working(d, l_num[slot[k]].sample(rng));
                const double w = detail::to_working(d, cand[k]);
                score += l_num[slot[k]].log_pdf(w) - g_num[slot[k]].log_pdf(w);
            }
        }
        if (best.empty() || score > best_score) {
            best = std::move(cand);
            best_score = score;
        }
    }
    return best;
}

} // namespace fineflood
