#pragma once

// Synthetic basins: seasonal weather plus a two-bucket linear-reservoir model.
//
// Weather, for day index d (s = sin(2*pi*d/365.25)):
//   wet-day probability 0.35 + 0.15*s, wet-day depth ~ Exponential(mean 4*(1 + 0.5*s)) mm
//     -> expected annual total ~566 mm; any realized year falls in [400, 750] with high probability
//   temperature 10 + 10*sin(2*pi*(d - 100)/365.25) + N(0, 2) degC
//
// Bucket model, per day: first both buckets drain, Q = k_fast * fast + k_slow * slow,
//   Q += N(0, noise_std) floored at 0; then the day's effective rain is stored:
//   ET = et_coeff * max(T, 0); Pe = max(P - ET, 0); fast += split_frac * Pe; slow += (1 - split_frac) * Pe.
//   Rain therefore shows up in the flow from the next day on, which is what a model
//   reading days t-365..t-1 can see.
//
// Family parameter ranges (uniform): k_fast [0.2, 0.8], k_slow [0.01, 0.1],
// split_frac [0.2, 0.8], et_coeff [0.05, 0.2], noise_std [0, 0.1].

#include "fineflood/common.hpp"
#include "fineflood/csv.hpp"
#include "fineflood/ingest.hpp"
#include "fineflood/io.hpp"

#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>

namespace fineflood {

struct BucketParams {
    double k_fast = 0.5;
    double k_slow = 0.05;
    double split_frac = 0.5;
    double et_coeff = 0.1;
    double noise_std = 0.0;

    void validate() const {
        if (!(k_fast > 0.0 && k_fast <= 1.0) || !(k_slow > 0.0 && k_slow <= 1.0))
            throw PreconditionError("bucket rate constants must lie in (0, 1]");
        if (!(split_frac >= 0.0 && split_frac <= 1.0)) throw PreconditionError("split_frac must lie in [0, 1]");
        if (!(et_coeff >= 0.0)) throw PreconditionError("et_coeff must be >= 0");
        if (!(noise_std >= 0.0)) throw PreconditionError("noise_std must be >= 0");
    }

    static constexpr std::array<const char*, 5> names{"k_fast", "k_slow", "split_frac", "et_coeff", "noise_std"};
    std::array<double, 5> values() const { return {k_fast, k_slow, split_frac, et_coeff, noise_std}; }
};

struct Forcings {
    std::vector<double> precip; // mm/day
    std::vector<double> temp;   // degC
};

inline constexpr int kMinSynthDays = 730;

inline Forcings gen_forcings(std::uint64_t seed, int n_days) {
    if (n_days < kMinSynthDays) throw PreconditionError("gen_forcings: n_days must be >= 730");
    std::mt19937_64 rng(derive_seed(seed, 0xf0c));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    std::normal_distribution<double> noise(0.0, 2.0);
    Forcings f;
    f.precip.reserve(static_cast<std::size_t>(n_days));
    f.temp.reserve(static_cast<std::size_t>(n_days));
    const double w = 2.0 * std::numbers::pi / 365.25;
    for (int d = 0; d < n_days; ++d) {
        const double s = std::sin(w * d);
        const double wet = u01(rng);
        const double depth = expo(rng) * 4.0 * (1.0 + 0.5 * s);
        f.precip.push_back(wet < 0.35 + 0.15 * s ? depth : 0.0);
        f.temp.push_back(10.0 + 10.0 * std::sin(w * (d - 100)) + noise(rng));
    }
    return f;
}

struct BucketRun {
    std::vector<double> flow;
    double fast = 0.0; // final storages
    double slow = 0.0;
    double et_total = 0.0;
};

inline BucketRun run_bucket(const Forcings& f, const BucketParams& p, std::uint64_t seed, double fast0 = 0.0,
                            double slow0 = 0.0) {
    p.validate();
    if (f.precip.size() != f.temp.size()) throw PreconditionError("forcing series lengths differ");
    std::mt19937_64 rng(derive_seed(seed, 0xb0c));
    std::normal_distribution<double> noise(0.0, 1.0);
    BucketRun r{{}, fast0, slow0, 0.0};
    r.flow.reserve(f.precip.size());
    for (std::size_t d = 0; d < f.precip.size(); ++d) {
        const double qf = p.k_fast * r.fast;
        const double qs = p.k_slow * r.slow;
        r.fast -= qf;
        r.slow -= qs;
        const double et = p.et_coeff * std::max(f.temp[d], 0.0);
        const double pe = std::max(f.precip[d] - et, 0.0);
        r.et_total += f.precip[d] - pe;
        r.fast += p.split_frac * pe;
        r.slow += (1.0 - p.split_frac) * pe;
        const double eps = noise(rng);
        r.flow.push_back(std::max(qf + qs + p.noise_std * eps, 0.0));
    }
    return r;
}

inline std::vector<double> simulate_bucket(const Forcings& f, const BucketParams& p, std::uint64_t seed) {
    return run_bucket(f, p, seed).flow;
}

// ---------------------------------------------------------------------------
// Families written in the Caravan layout

inline const std::vector<std::string>& synth_dynamic_inputs() {
    static const std::vector<std::string> v{"total_precipitation_sum", "temperature_2m_mean"};
    return v;
}

inline std::vector<std::string> synth_static_attributes() {
    return {BucketParams::names.begin(), BucketParams::names.end()};
}

struct SyntheticFamily {
    int n_basins = 8;
    int n_days = 3 * 365;
    std::uint64_t seed = 0;
    Date start = parse_date_or_throw("2000-01-01", "start");
    /// Source prefixes, assigned round-robin; ids are `<source>_<NNNN>`.
    std::vector<std::string> sources{"synth"};
    /// Explicit parameters for the first basins; the rest are drawn from the ranges.
    std::vector<BucketParams> params;
};

inline BucketParams draw_bucket_params(std::uint64_t seed, int index) {
    std::mt19937_64 rng(derive_seed(seed, 0x9a2a, static_cast<std::uint64_t>(index)));
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    BucketParams p;
    p.k_fast = u(0.2, 0.8);
    p.k_slow = u(0.01, 0.1);
    p.split_frac = u(0.2, 0.8);
    p.et_coeff = u(0.05, 0.2);
    p.noise_std = u(0.0, 0.1);
    return p;
}

struct GeneratedBasin {
    std::string basin_id;
    BucketParams params;
    Forcings forcings;
    std::vector<double> flow;
};

inline std::string synth_basin_id(const SyntheticFamily& fam, int i) {
    if (fam.sources.empty()) throw PreconditionError("synthetic family needs at least one source");
    const auto& src = fam.sources[static_cast<std::size_t>(i) % fam.sources.size()];
    if (src.empty() || src.find('_') != std::string::npos)
        throw PreconditionError("source prefix must be non-empty and contain no '_': " + src);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", i);
    return src + "_" + buf;
}

/// Basin `i` of the family, in memory.
inline GeneratedBasin gen_basin(const SyntheticFamily& fam, int i) {
    GeneratedBasin b;
    b.basin_id = synth_basin_id(fam, i);
    b.params = static_cast<std::size_t>(i) < fam.params.size() ? fam.params[static_cast<std::size_t>(i)]
                                                                : draw_bucket_params(fam.seed, i);
    b.forcings = gen_forcings(derive_seed(fam.seed, 0xf, static_cast<std::uint64_t>(i)), fam.n_days);
    b.flow = simulate_bucket(b.forcings, b.params, derive_seed(fam.seed, 0xa, static_cast<std::uint64_t>(i)));
    return b;
}

struct GeneratedFamily {
    DataSpec spec;
    std::vector<GeneratedBasin> basins;
};

/// Writes the family under `out` and returns the DataSpec that loads it back.
inline GeneratedFamily gen_family(const SyntheticFamily& fam, const std::filesystem::path& out) {
    if (fam.n_basins < 1) throw PreconditionError("synthetic family needs at least one basin");
    GeneratedFamily g;
    g.spec = {out, synth_dynamic_inputs(), "streamflow", synth_static_attributes()};
    std::map<std::string, std::ostringstream> attr_files;
    for (int i = 0; i < fam.n_basins; ++i) {
        auto b = gen_basin(fam, i);
        const auto source = basin_source(b.basin_id);
        std::ostringstream ts;
        csv::Writer w(ts);
        w.row({"date", "total_precipitation_sum", "temperature_2m_mean", "streamflow"});
        for (int d = 0; d < fam.n_days; ++d) {
            const auto k = static_cast<std::size_t>(d);
            w.row({format_date(fam.start + std::chrono::days(d)), format_double(b.forcings.precip[k]),
                   format_double(b.forcings.temp[k]), format_double(b.flow[k])});
        }
        io::write_atomic(out / "timeseries" / "csv" / source / (b.basin_id + ".csv"), ts.str());

        auto [it, fresh] = attr_files.try_emplace(source);
        csv::Writer aw(it->second);
        if (fresh) {
            std::vector<std::string> header{"gauge_id"};
            for (auto n : BucketParams::names) header.emplace_back(n);
            aw.row(header);
        }
        std::vector<std::string> row{b.basin_id};
        for (double v : b.params.values()) row.push_back(format_double(v));
        aw.row(row);
        g.basins.push_back(std::move(b));
    }
    for (const auto& [source, content] : attr_files)
        io::write_atomic(out / "attributes" / source / ("attributes_synth_" + source + ".csv"), content.str());
    return g;
}

} // namespace fineflood
