#include "test_util.hpp"

#include <catch_amalgamated.hpp>

using namespace fineflood;
using testutil::TempDir;

TEST_CASE("derive_seed is deterministic and spreads nearby inputs") {
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 1));
    CHECK(derive_seed(0, 0) != derive_seed(0, 1));
    CHECK(mix64(0) != 0);
}

TEST_CASE("FNV-1a matches published test vectors") {
    Fnv1a empty;
    CHECK(empty.digest() == 0xcbf29ce484222325ULL);
    Fnv1a a;
    a.update("a");
    CHECK(a.digest() == 0xaf63dc4c8601ec8cULL);
    Fnv1a foobar;
    foobar.update("foobar");
    CHECK(foobar.digest() == 0x85944171f73967e8ULL);
    CHECK(hex64(0xaf63dc4c8601ec8cULL) == "af63dc4c8601ec8c");
}

TEST_CASE("dates parse, format and count days") {
    const auto d = parse_date("2004-02-29");
    REQUIRE(d);
    CHECK(format_date(*d) == "2004-02-29");
    CHECK_FALSE(parse_date("2003-02-29"));
    CHECK_FALSE(parse_date("2003-1-01"));
    CHECK_FALSE(parse_date("20030101xx"));
    CHECK(days_between(*parse_date("2000-01-01"), *parse_date("2001-01-01")) == 366);
    CHECK_THROWS_AS(parse_date_or_throw("garbage", "x"), DataError);
}

TEST_CASE("format_double round-trips exactly and parse_double handles missing markers") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        const double v = u(rng) / 3.0;
        const auto back = parse_double(format_double(v));
        REQUIRE(back);
        CHECK(*back == v);
    }
    CHECK(std::isnan(*parse_double("")));
    CHECK(std::isnan(*parse_double("NaN")));
    CHECK(std::isnan(*parse_double("NA")));
    CHECK(format_double(kNaN).empty());
    CHECK_FALSE(parse_double("1.5x"));
    CHECK_FALSE(parse_double("abc"));
    CHECK(*parse_double(" 2.5 ") == 2.5);
}

TEST_CASE("csv split handles quotes and escapes") {
    const auto f = csv::split_line(R"(a,"b,c","d""e",)");
    REQUIRE(f.size() == 4);
    CHECK(f[0] == "a");
    CHECK(f[1] == "b,c");
    CHECK(f[2] == "d\"e");
    CHECK(f[3].empty());
    CHECK(csv::split_line(csv::escape("x,\"y")).at(0) == "x,\"y");
}

TEST_CASE("csv read rejects ragged rows with a line number") {
    TempDir dir("csv");
    testutil::write_file(dir / "t.csv", "a,b\n1,2\n3\n");
    try {
        csv::read(dir / "t.csv");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
}

TEST_CASE("write_atomic replaces content and leaves no temp files") {
    TempDir dir("io");
    const auto p = dir / "sub" / "f.txt";
    io::write_atomic(p, "one");
    io::write_atomic(p, "two");
    CHECK(io::read_text(p) == "two");
    int n = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(p.parent_path())) ++n;
    CHECK(n == 1);
}

TEST_CASE("warnings can be captured") {
    ScopedWarningCapture cap;
    warn("hello");
    REQUIRE(cap.messages().size() == 1);
    CHECK(cap.messages()[0] == "hello");
}
