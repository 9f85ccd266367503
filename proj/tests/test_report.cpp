#include "test_util.hpp"

#include <catch_amalgamated.hpp>

using namespace fineflood;
using testutil::TempDir;

namespace {

FamilyStats family(const char* name, double nse_mean, double nse_med, double kge_mean, double kge_med) {
    FamilyStats f;
    f.family = name;
    f.n_basins = 159;
    for (const auto* m : MetricReport::names) {
        f.mean[m] = {};
        f.median[m] = {};
    }
    f.mean["nse"] = {nse_mean, 0.01, 159, 0};
    f.median["nse"] = {nse_med, 0.01, 159, 0};
    f.mean["kge"] = {kge_mean, 0.01, 159, 0};
    f.median["kge"] = {kge_med, 0.01, 159, 0};
    return f;
}

std::vector<FamilyStats> table_one() {
    return {family("single_basin", 0.358, 0.541, 0.331, 0.609), family("pretrained", 0.473, 0.583, 0.520, 0.683),
            family("finetuned", 0.541, 0.625, 0.599, 0.709)};
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

ExperimentSummary fixture_summary(std::vector<std::string> basins) {
    ExperimentSummary s;
    s.seeds = {0, 1};
    s.basins = basins;
    s.families = table_one();
    s.n_pairs_expected = 2 * basins.size();
    for (std::uint64_t seed : s.seeds)
        for (std::size_t i = 0; i < basins.size(); ++i) {
            FineTuneResult r;
            r.basin_id = basins[i];
            r.pretrained.nse = 0.3 + 0.1 * static_cast<double>(i);
            r.finetuned.nse = *r.pretrained.nse + 0.05 - 0.02 * static_cast<double>(seed);
            r.delta_nse = *r.finetuned.nse - *r.pretrained.nse;
            s.pairs.push_back({seed, r});
        }
    return s;
}

} // namespace

TEST_CASE("Table 1 values mark fine-tuned bold and pre-trained italic on every column") {
    const auto md = lines(render_headline_markdown(table_one()));
    REQUIRE(md.size() == 5);
    CHECK(md[0] == "| Model | NSE (mean) | NSE (median) | KGE (mean) | KGE (median) |");
    CHECK(md[4] == "| Fine-tuned | **0.541** (± 0.010) | **0.625** (± 0.010) | **0.599** (± 0.010) | **0.709** (± 0.010) |");
    CHECK(md[3] == "| Pre-trained | *0.473* (± 0.010) | *0.583* (± 0.010) | *0.520* (± 0.010) | *0.683* (± 0.010) |");
    CHECK(md[2].find('*') == std::string::npos);
}

TEST_CASE("rank marks follow each metric's direction and share ties") {
    using M = std::vector<Metric>;
    CHECK(rank_marks("rmse", M{0.5, 0.2, 0.3}) == std::vector<Mark>{Mark::None, Mark::Best, Mark::Second});
    CHECK(rank_marks("beta_nse", M{-0.05, 0.2, 0.01}) == std::vector<Mark>{Mark::Second, Mark::None, Mark::Best});
    CHECK(rank_marks("alpha_nse", M{0.9, 1.2, std::nullopt}) == std::vector<Mark>{Mark::Best, Mark::Second, Mark::None});
    CHECK(rank_marks("nse", M{0.7, 0.7, 0.1}) == std::vector<Mark>{Mark::Best, Mark::Best, Mark::Second});
}

TEST_CASE("comparison CSV round-trips through the CSV reader") {
    TempDir dir("report");
    const auto s = fixture_summary({"alpha_0000", "beta_0001", "alpha_0002"});
    const auto files = render_report(s, dir.path());
    CHECK(std::filesystem::exists(dir / "comparison.md"));
    CHECK(std::filesystem::exists(dir / "summary.json"));

    const auto t = csv::read(dir / "comparison.csv");
    REQUIRE(t.rows.size() == 3);
    CHECK(t.header.size() == 2 + 5 * MetricReport::names.size());
    const auto col = t.column("nse_mean");
    REQUIRE(col);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(t.rows[r][0] == s.families[r].family);
        CHECK(*parse_double(t.rows[r][*col]) == *s.families[r].mean.at("nse").center);
    }
    const auto mse = t.column("mse_mean");
    REQUIRE(mse);
    CHECK(t.rows[0][*mse].empty());

    const auto sc = csv::read(dir / "scatter.csv");
    CHECK(sc.header == std::vector<std::string>{"seed", "basin_id", "group", "pretrained_nse", "delta_nse"});
    REQUIRE(sc.rows.size() == s.pairs.size());
    for (std::size_t i = 0; i < sc.rows.size(); ++i) {
        CHECK(sc.rows[i][1] == s.pairs[i].result.basin_id);
        CHECK(sc.rows[i][2] == basin_source(s.pairs[i].result.basin_id));
        CHECK(*parse_double(sc.rows[i][4]) == *s.pairs[i].result.delta_nse);
    }

    const auto back = summary_from_json(nlohmann::json::parse(io::read_text(dir / "summary.json")));
    CHECK(summary_json(back) == summary_json(s));
}

TEST_CASE("grouped output is omitted without group labels") {
    TempDir dir("report_nogroup");
    const auto s = fixture_summary({"b1", "b2"});
    REQUIRE(s.groups.empty());
    const auto files = render_report(s, dir.path());
    CHECK_FALSE(std::filesystem::exists(dir / "groups.csv"));
    CHECK(render_markdown(s).find("## By group") == std::string::npos);

    auto g = s;
    GroupStats gs;
    gs.group = "alpha";
    gs.n_basins = 2;
    gs.families = table_one();
    gs.mean_delta_nse = 0.05;
    g.groups.push_back(gs);
    TempDir dir2("report_group");
    render_report(g, dir2.path());
    const auto t = csv::read(dir2 / "groups.csv");
    CHECK(t.rows.size() == 3);
    CHECK(render_markdown(g).find("### alpha (2 basins)") != std::string::npos);
}

TEST_CASE("report lists exclusions and incomplete runs") {
    auto s = fixture_summary({"b1", "b2", "b3"});
    s.exclusions.push_back({1, "b4", "finetune", "untrainable basin"});
    s.complete = false;
    const auto md = render_markdown(s);
    CHECK(md.find("(incomplete)") != std::string::npos);
    CHECK(md.find("| 1 | b4 | finetune | untrainable basin |") != std::string::npos);
}
