#include "reference_metrics.hpp"
#include "test_util.hpp"

#include <catch_amalgamated.hpp>

using namespace fineflood;

namespace {

HydrographPair pair_of(std::vector<double> obs, std::vector<double> sim) { return {{}, std::move(obs), std::move(sim)}; }

void check_close(const Metric& a, const Metric& b, double tol = 1e-12) {
    REQUIRE(a.has_value() == b.has_value());
    if (a) CHECK(std::abs(*a - *b) <= tol);
}

/// Triangular pulses on a flat base.
std::vector<double> pulses(std::size_t n, std::vector<std::pair<std::size_t, double>> at) {
    std::vector<double> x(n, 1.0);
    for (const auto& [c, h] : at)
        for (int d = -4; d <= 4; ++d) {
            const long i = static_cast<long>(c) + d;
            if (i >= 0 && i < static_cast<long>(n)) x[static_cast<std::size_t>(i)] += h * (1.0 - std::abs(d) / 5.0);
        }
    return x;
}

} // namespace

TEST_CASE("metrics agree with the direct-formula reference on random pairs") {
    std::mt19937_64 rng(12345);
    int with_peaks = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const auto p = reference::random_pair(rng);
        const auto r = compute_metrics(p);
        check_close(r.nse, reference::nse(p));
        check_close(r.mse, reference::mse(p));
        check_close(r.rmse, reference::rmse(p));
        check_close(r.kge, reference::kge(p));
        check_close(r.pearson_r, reference::pearson_r(p));
        check_close(r.alpha_nse, reference::alpha_nse(p));
        check_close(r.beta_nse, reference::beta_nse(p));
        check_close(r.beta_kge, reference::beta_kge(p));
        const auto ps = reference::peak_stats(p);
        check_close(r.peak_timing, ps.timing);
        check_close(r.missed_peaks, ps.missed);
        check_close(r.peak_mape, ps.mape);
        with_peaks += r.missed_peaks.has_value();

        // NSE = 1 - MSE / var(obs) and KGE from its own components.
        std::vector<double> o, s;
        reference::present(p, o, s);
        CHECK(std::abs(*r.nse - (1.0 - *r.mse / reference::var_pop(o))) <= 1e-12);
        CHECK(std::abs(*r.kge - *kge_from_components(r.pearson_r, r.alpha_nse, r.beta_kge)) <= 1e-12);
        CHECK(std::abs(*r.mse - *r.rmse * *r.rmse) <= 1e-12 * std::max(1.0, *r.mse));
        CHECK(*r.nse <= 1.0);
        CHECK(*r.kge <= 1.0);
        CHECK(*r.alpha_nse >= 0.0);
    }
    CHECK(with_peaks > 900);
}

TEST_CASE("hand examples for the efficiency metrics") {
    const auto a = pair_of({1, 2, 3}, {2, 2, 2});
    CHECK(*nse(a) == Catch::Approx(0.0).margin(1e-15));
    const auto same = pair_of({1, 4, 2, 8}, {1, 4, 2, 8});
    const auto r = compute_metrics(same);
    CHECK(*r.nse == 1.0);
    CHECK(*r.kge == Catch::Approx(1.0));
    CHECK(*r.alpha_nse == 1.0);
    CHECK(*r.beta_kge == 1.0);
    CHECK(*r.beta_nse == 0.0);
    CHECK(*r.pearson_r == Catch::Approx(1.0));

    const auto dbl = pair_of({1, 4, 2, 8}, {2, 8, 4, 16});
    CHECK(*pearson_r(dbl) == Catch::Approx(1.0));
    CHECK(*alpha_nse(dbl) == Catch::Approx(2.0));
    CHECK(*beta_kge(dbl) == Catch::Approx(2.0));
    CHECK(*kge(dbl) == Catch::Approx(1.0 - std::sqrt(2.0)));

    const auto shift = pair_of({1, 4, 2, 8}, {3.5, 6.5, 4.5, 10.5});
    const double sd = std::sqrt(reference::var_pop({1, 4, 2, 8}));
    CHECK(*alpha_nse(shift) == Catch::Approx(1.0));
    CHECK(*beta_nse(shift) == Catch::Approx(2.5 / sd));

    const auto clim = pair_of({1, 4, 2, 8}, {3.75, 3.75, 3.75, 3.75});
    CHECK(*nse(clim) == Catch::Approx(0.0).margin(1e-15));
    CHECK_FALSE(pearson_r(clim));
    CHECK_FALSE(kge(clim));
}

TEST_CASE("undefined metrics are absent, not NaN") {
    const auto flat = pair_of({2, 2, 2}, {1, 2, 3});
    CHECK_FALSE(nse(flat));
    CHECK_FALSE(alpha_nse(flat));
    CHECK(mse(flat));
    const auto zero_mean = pair_of({-1, 1}, {0, 1});
    CHECK_FALSE(beta_kge(zero_mean));
    const auto gaps = pair_of({kNaN, 1, kNaN, 3}, {100, 1, 100, 2});
    CHECK(*mse(gaps) == Catch::Approx(0.5));
    CHECK(compute_metrics(gaps).n_samples == 2);
    CHECK_THROWS_AS(mse(pair_of({1, 2}, {1})), PreconditionError);
    CHECK_THROWS_AS(mse(pair_of({1, 2}, {1, kNaN})), PreconditionError);
}

TEST_CASE("peak detection fixtures") {
    std::vector<double> mono(50);
    for (std::size_t i = 0; i < mono.size(); ++i) mono[i] = static_cast<double>(i);
    CHECK(detect_peaks(mono, 0.0, 30).empty());

    const auto one = pulses(60, {{30, 5.0}});
    CHECK(detect_peaks(one, 1.0, 30) == std::vector<std::size_t>{30});

    const auto two = pulses(100, {{40, 5.0}, {50, 8.0}});
    CHECK(detect_peaks(two, 1.0, 30) == std::vector<std::size_t>{50});
    CHECK(detect_peaks(two, 1.0, 5) == std::vector<std::size_t>{40, 50});

    std::vector<double> plateau{0, 1, 3, 3, 3, 1, 0};
    CHECK(detect_peaks(plateau, 1.0, 1) == std::vector<std::size_t>{3});
    CHECK(detect_peaks(std::vector<double>{1, 2}, 0.0, 1).empty());
}

TEST_CASE("peak metric fixtures") {
    const auto obs = pulses(200, {{40, 6.0}, {100, 9.0}, {160, 7.0}});
    const auto same = compute_metrics(pair_of(obs, obs));
    CHECK(*same.peak_timing == 0.0);
    CHECK(*same.missed_peaks == 0.0);
    CHECK(*same.peak_mape == 0.0);

    std::vector<double> shifted(obs.size(), 1.0);
    for (std::size_t i = 2; i < obs.size(); ++i) shifted[i] = obs[i - 2];
    CHECK(*peak_timing(pair_of(obs, shifted)) == 2.0);

    std::vector<double> half = obs;
    for (auto& v : half) v *= 0.5;
    CHECK(*peak_mape(pair_of(obs, half)) == Catch::Approx(50.0));

    std::vector<double> flat(obs.size(), 1.0);
    CHECK(*missed_peaks(pair_of(obs, flat)) == 0.0); // a flat window counts as a (trivial) local peak
    std::vector<double> ramp(obs.size());
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);
    CHECK(*missed_peaks(pair_of(obs, ramp)) == 1.0);
    CHECK_FALSE(peak_timing(pair_of(obs, ramp)));

    std::vector<double> up(50);
    for (std::size_t i = 0; i < up.size(); ++i) up[i] = static_cast<double>(i);
    const auto none = compute_metrics(pair_of(up, up));
    CHECK_FALSE(none.peak_timing);
    CHECK_FALSE(none.missed_peaks);
    CHECK_FALSE(none.peak_mape);
}

TEST_CASE("positive affine maps of sim keep r and scale alpha") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 100; ++rep) {
        auto p = reference::random_pair(rng);
        auto q = p;
        for (auto& v : q.sim) v = 2.5 * v + 3.0;
        CHECK(*pearson_r(q) == Catch::Approx(*pearson_r(p)).epsilon(1e-12));
        CHECK(*alpha_nse(q) == Catch::Approx(2.5 * *alpha_nse(p)).epsilon(1e-12));
    }
}

TEST_CASE("aggregate examples") {
    const std::vector<double> a{1, 2, 3};
    const auto m = aggregate(std::span<const double>(a), AggregateKind::Mean);
    CHECK(*m.center == 2.0);
    CHECK(*m.spread == Catch::Approx(1.0 / std::sqrt(3.0)));

    const std::vector<double> one{5};
    for (auto k : {AggregateKind::Mean, AggregateKind::Median}) {
        const auto g = aggregate(std::span<const double>(one), k);
        CHECK(*g.center == 5.0);
        CHECK(*g.spread == 0.0);
    }

    const std::vector<Metric> b{1.0, std::nullopt, 2.0, 100.0, std::nullopt};
    const auto med = aggregate(std::span<const Metric>(b), AggregateKind::Median);
    CHECK(*med.center == 2.0);
    CHECK(*med.spread == Catch::Approx(33.0 / std::sqrt(3.0)));
    CHECK(med.n_present == 3);
    CHECK(med.n_absent == 2);

    const std::vector<double> even{4, 1, 3, 2};
    CHECK(*aggregate(std::span<const double>(even), AggregateKind::Median).center == 2.5);

    const std::vector<Metric> none{std::nullopt, std::nullopt};
    const auto e = aggregate(std::span<const Metric>(none), AggregateKind::Mean);
    CHECK_FALSE(e.center);
    CHECK(e.n_absent == 2);
}
