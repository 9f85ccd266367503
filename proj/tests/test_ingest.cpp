#include "test_util.hpp"

#include <catch_amalgamated.hpp>

using namespace fineflood;
using testutil::TempDir;
using testutil::write_file;

namespace {

/// Writes one basin with `n` days and 3 forcings; `skip` drops a calendar day,
/// `flow_gap` leaves the streamflow cell empty.
void write_basin(const TempDir& dir, const std::string& id, int n, int skip = -1, int flow_gap = -1) {
    const auto src = basin_source(id);
    std::string ts = "date,p,t,pet,streamflow\n";
    const auto d0 = parse_date_or_throw("2001-01-01", "d");
    for (int i = 0; i < n; ++i) {
        if (i == skip) continue;
        ts += format_date(d0 + std::chrono::days(i)) + "," + std::to_string(i % 7) + "," + std::to_string(10 + i % 5) +
              ",1.5," + (i == flow_gap ? std::string() : std::to_string(1.0 + 0.01 * i)) + "\n";
    }
    write_file(dir / ("timeseries/csv/" + src + "/" + id + ".csv"), ts);
}

void write_attrs(const TempDir& dir, const std::string& src, const std::vector<std::string>& ids) {
    std::string a = "gauge_id,area,elev\n";
    for (std::size_t i = 0; i < ids.size(); ++i) a += ids[i] + "," + std::to_string(100 + i) + "," + std::to_string(5 * i) + "\n";
    write_file(dir / ("attributes/" + src + "/attributes_other_" + src + ".csv"), a);
}

DataSpec spec_for(const TempDir& dir) {
    return {dir.path(), {"p", "t", "pet"}, "streamflow", {"area", "elev"}};
}

SplitPolicy fixed_split(const char* a, const char* b, const char* c, const char* d, const char* e, const char* f) {
    SplitPolicy s;
    s.fixed = SplitConfig{{parse_date_or_throw(a, ""), parse_date_or_throw(b, "")},
                          {parse_date_or_throw(c, ""), parse_date_or_throw(d, "")},
                          {parse_date_or_throw(e, ""), parse_date_or_throw(f, "")}};
    return s;
}

} // namespace

TEST_CASE("list_basins enumerates sorted ids and skips basins without attributes") {
    TempDir dir("list");
    for (const auto* id : {"src_e", "src_b", "src_a", "src_d", "src_c"}) write_basin(dir, id, 10);
    write_attrs(dir, "src", {"src_a", "src_b", "src_c", "src_e"});
    ScopedWarningCapture cap;
    const auto ids = list_basins(dir.path());
    CHECK(ids == std::vector<std::string>{"src_a", "src_b", "src_c", "src_e"});
    REQUIRE(cap.messages().size() == 1);
    CHECK(cap.messages()[0].find("src_d") != std::string::npos);
}

TEST_CASE("list_basins on an empty directory and a missing root") {
    TempDir dir("empty");
    CHECK(list_basins(dir.path()).empty());
    CHECK_THROWS_AS(list_basins(dir / "nope"), DataError);
}

TEST_CASE("load_basin reads a fixture and fills calendar gaps") {
    TempDir dir("load");
    write_basin(dir, "x_1", 400);
    write_basin(dir, "x_2", 401, 200, 50);
    write_attrs(dir, "x", {"x_1", "x_2"});
    const auto spec = spec_for(dir);

    const auto r1 = load_basin(spec, "x_1");
    CHECK(r1.n_days() == 400);
    CHECK(r1.dynamic.cols() == 3);
    CHECK(r1.statics.size() == 2);
    CHECK(r1.statics(0) == 100.0);

    const auto r2 = load_basin(spec, "x_2");
    REQUIRE(r2.n_days() == 401);
    int masked = 0;
    for (Eigen::Index i = 0; i < 401; ++i)
        if (!r2.dynamic.row(i).array().isFinite().all()) {
            ++masked;
            CHECK(i == 200);
            CHECK(std::isnan(r2.streamflow(i)));
        }
    CHECK(masked == 1);
    CHECK(std::isnan(r2.streamflow(50)));
    CHECK(r2.streamflow(51) == Catch::Approx(1.51));
    for (std::size_t i = 1; i < r2.n_days(); ++i) CHECK(days_between(r2.dates[i - 1], r2.dates[i]) == 1);
}

TEST_CASE("load_basin errors name the column or line") {
    TempDir dir("bad");
    write_basin(dir, "x_1", 20);
    write_attrs(dir, "x", {"x_1"});
    auto spec = spec_for(dir);
    spec.dynamic_inputs.push_back("snow");
    try {
        load_basin(spec, "x_1");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("snow") != std::string::npos);
    }

    write_file(dir / "timeseries/csv/x/x_1.csv", "date,p,t,pet,streamflow\n2001-01-01,1,2,3,4\n2001-01-02,1,oops,3,4\n");
    try {
        load_basin(spec_for(dir), "x_1");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }

    write_file(dir / "timeseries/csv/x/x_1.csv", "date,p,t,pet,streamflow\n2001-13-01,1,2,3,4\n");
    CHECK_THROWS_AS(load_basin(spec_for(dir), "x_1"), DataError);
}

TEST_CASE("chronological default split is 60/20/20") {
    const auto r = testutil::make_record("a_1", 100);
    SplitPolicy p;
    const auto s = p.resolve(r);
    CHECK(s.train.start == r.dates[0]);
    CHECK(s.train.end == r.dates[59]);
    CHECK(s.valid.start == r.dates[60]);
    CHECK(s.valid.end == r.dates[79]);
    CHECK(s.test.start == r.dates[80]);
    CHECK(s.test.end == r.dates[99]);
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("split validation rejects overlap") {
    auto s = fixed_split("2000-01-01", "2000-06-01", "2000-05-01", "2000-07-01", "2000-08-01", "2000-09-01");
    CHECK_THROWS_AS(s.fixed->validate(), DataError);
}

TEST_CASE("pooled flow mean over two basins") {
    auto a = testutil::make_record("a_1", 4);
    auto b = testutil::make_record("a_2", 4);
    a.streamflow << 1, 3, 100, 100;
    b.streamflow << 2, 4, 100, 100;
    const auto split = fixed_split("2000-01-01", "2000-01-02", "2000-01-03", "2000-01-03", "2000-01-04", "2000-01-04");
    const std::vector<BasinRecord> recs{a, b};
    const auto s = compute_scalers(recs, split);
    CHECK(s.flow_mean == 2.5);
    CHECK(s.flow_std == Catch::Approx(std::sqrt(1.25)));
    CHECK(s.per_basin_flow_std.at("a_1") == Catch::Approx(1.0));
    CHECK(*s.basin_std_standardized("a_2") == Catch::Approx(1.0 / std::sqrt(1.25)));
    CHECK_FALSE(s.basin_std_standardized("zz"));
}

TEST_CASE("constant inputs get a flagged unit std") {
    auto r = testutil::make_record("a_1", 50, 2, 1);
    r.dynamic.col(0).setConstant(5.0);
    const std::vector<BasinRecord> recs{r};
    const auto s = compute_scalers(recs, SplitPolicy{});
    CHECK(s.dyn_mean(0) == 5.0);
    CHECK(s.dyn_std(0) == 1.0);
    CHECK(s.dyn_flagged[0]);
    CHECK_FALSE(s.dyn_flagged[1]);
    CHECK(s.stat_flagged[0]); // one basin, one value
}

TEST_CASE("basin with too few training flows falls back to pooled std") {
    auto a = testutil::make_record("a_1", 100);
    auto b = testutil::make_record("a_2", 100);
    for (Eigen::Index i = 1; i < 60; ++i) b.streamflow(i) = kNaN;
    ScopedWarningCapture cap;
    const std::vector<BasinRecord> recs{a, b};
    const auto s = compute_scalers(recs, SplitPolicy{});
    CHECK(s.per_basin_flow_std.at("a_2") == s.flow_std);
    CHECK(cap.messages().size() == 1);
}

TEST_CASE("scalers ignore everything outside the training period") {
    const auto a = testutil::make_record("a_1", 300, 3, 2, 5);
    const auto b = testutil::make_record("a_2", 300, 3, 2, 6);
    const std::vector<BasinRecord> recs{a, b};
    const auto base = compute_scalers(recs, SplitPolicy{});
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0, 50);
    for (int rep = 0; rep < 5; ++rep) {
        auto pa = a, pb = b;
        for (Eigen::Index i = 180; i < 300; ++i) {
            pa.streamflow(i) = nd(rng);
            pb.dynamic(i, rep % 3) = nd(rng);
            if (rep == 4) pa.dynamic.row(i).setConstant(kNaN);
        }
        const std::vector<BasinRecord> mutated{pa, pb};
        CHECK(compute_scalers(mutated, SplitPolicy{}) == base);
    }
}

TEST_CASE("standardize then destandardize recovers raw values") {
    const auto r = testutil::make_record("a_1", 200, 3, 2, 9);
    const std::vector<BasinRecord> recs{r};
    const auto s = compute_scalers(recs, SplitPolicy{});
    const auto z = standardize(r, s);
    for (Eigen::Index i = 0; i < 200; ++i) {
        const double back = s.destandardize_flow(z.flow(i));
        CHECK(std::abs(back - r.streamflow(i)) <= 1e-10 * std::abs(r.streamflow(i)));
        for (Eigen::Index k = 0; k < 3; ++k) {
            const double raw = z.dynamic(i, k) * s.dyn_std(k) + s.dyn_mean(k);
            CHECK(std::abs(raw - r.dynamic(i, k)) <= 1e-10 * std::max(1.0, std::abs(r.dynamic(i, k))));
        }
    }
}

TEST_CASE("window counts and masking rules") {
    auto r = testutil::make_record("a_1", 400, 2, 2, 4);
    const std::vector<BasinRecord> recs{r};
    const auto s = compute_scalers(recs, SplitPolicy{});
    // 1-based days 366..400 are indices 365..399
    const Period p{r.dates[365], r.dates[399]};

    CHECK(build_windows(r, s, p).size() == 35);

    auto gap = r;
    gap.streamflow(369) = kNaN;
    const auto ds = build_windows(gap, s, p);
    CHECK(ds.size() == 34);
    std::set<std::size_t> targets;
    for (const auto& smp : ds.samples()) targets.insert(smp.target);
    CHECK_FALSE(targets.contains(369));
    CHECK(targets.contains(370));

    // Forcing missing at index 9: targets t with t-365 <= 9 <= t-1 are dropped.
    auto hole = r;
    hole.dynamic(9, 1) = kNaN;
    const Period all{r.dates[0], r.dates[399]};
    std::set<std::size_t> expected;
    for (std::size_t t = 365; t < 400; ++t)
        if (!(t - 365 <= 9 && 9 <= t - 1)) expected.insert(t);
    std::set<std::size_t> got;
    const auto hole_ds = build_windows(hole, s, all);
    for (const auto& smp : hole_ds.samples()) got.insert(smp.target);
    CHECK(got == expected);
    CHECK(*expected.begin() == 375);
}

TEST_CASE("an empty window set warns") {
    const auto r = testutil::make_record("a_1", 100);
    const std::vector<BasinRecord> recs{r};
    const auto s = compute_scalers(recs, SplitPolicy{});
    ScopedWarningCapture cap;
    CHECK(build_windows(r, s, {r.dates[0], r.dates[99]}).empty());
    CHECK(cap.messages().size() == 1);
}

TEST_CASE("window alignment: last input row is the day before the target") {
    auto r = testutil::make_record("a_1", 60, 2, 2, 11);
    const std::vector<BasinRecord> recs{r};
    const auto s = compute_scalers(recs, SplitPolicy{});
    const int L = 10;
    const auto ds = build_windows(r, s, {r.dates[0], r.dates[59]}, L);
    REQUIRE(ds.size() == 50);
    const auto batch = ds.make_batch_all();
    REQUIRE(batch.seq_len() == L);
    const auto z = standardize(r, s);
    for (Eigen::Index j = 0; j < batch.size(); ++j) {
        const auto t = *r.index_of(batch.target_dates[static_cast<std::size_t>(j)]);
        for (int k = 0; k < L; ++k)
            CHECK(batch.inputs[static_cast<std::size_t>(k)].col(j) ==
                  z.dynamic.row(static_cast<Eigen::Index>(t) - L + k).transpose());
        CHECK(batch.inputs.back().col(j) == z.dynamic.row(static_cast<Eigen::Index>(t) - 1).transpose());
        CHECK(batch.targets(j) == z.flow(static_cast<Eigen::Index>(t)));
        CHECK(batch.basin_ids[static_cast<std::size_t>(j)] == "a_1");
        CHECK(batch.inputs.front().allFinite());
    }
}

TEST_CASE("ingestion is deterministic across runs") {
    TempDir dir("det");
    for (const auto* id : {"x_1", "x_2"}) write_basin(dir, id, 420);
    write_attrs(dir, "x", {"x_1", "x_2"});
    auto run = [&] {
        std::vector<BasinRecord> recs;
        for (const auto& id : list_basins(dir.path())) recs.push_back(load_basin(spec_for(dir), id));
        const auto s = compute_scalers(recs, SplitPolicy{});
        WindowDataset ds;
        for (const auto& r : recs) ds.add(r, s, {r.dates.front(), r.dates.back()});
        return ds.make_batch_all();
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.size() == b.size());
    CHECK(a.size() == 2 * 55);
    CHECK(a.targets == b.targets);
    CHECK(a.basin_ids == b.basin_ids);
    CHECK(a.target_dates == b.target_dates);
    for (std::size_t t = 0; t < a.inputs.size(); ++t) CHECK(a.inputs[t] == b.inputs[t]);
}
