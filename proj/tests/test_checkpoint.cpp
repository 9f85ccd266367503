#include "test_util.hpp"

#include <catch_amalgamated.hpp>

using namespace fineflood;

namespace {

ModelCheckpoint sample_checkpoint() {
    std::vector<BasinRecord> recs{testutil::make_record("s_1", 120, 3, 2, 1), testutil::make_record("s_2", 120, 3, 2, 2)};
    ModelCheckpoint ck;
    ck.config.hidden_size = 6;
    ck.config.embed_size = 3;
    ck.config.n_dyn = 3;
    ck.config.n_stat = 2;
    ck.config.seq_len = 30;
    ck.config.dropout = 0.1;
    ck.params = init_model(ck.config, 77);
    ck.scalers = compute_scalers(recs, SplitPolicy{});
    ck.provenance = {123456789012345ULL, 7, 64, "deadbeef"};
    return ck;
}

void check_same(const ModelCheckpoint& a, const ModelCheckpoint& b) {
    CHECK(a.config == b.config);
    CHECK(bit_identical(a.params, b.params));
    CHECK(a.scalers == b.scalers);
    CHECK(a.provenance == b.provenance);
}

std::string reseal(std::string bytes) {
    Fnv1a h;
    h.update(std::string_view(bytes).substr(0, bytes.size() - 8));
    const auto d = h.digest();
    std::memcpy(bytes.data() + bytes.size() - 8, &d, 8);
    return bytes;
}

} // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    testutil::TempDir dir("ckpt");
    const auto ck = sample_checkpoint();
    save_checkpoint(ck, dir / "m.ckpt");
    const auto back = load_checkpoint(dir / "m.ckpt");
    check_same(ck, back);
    CHECK(serialize_checkpoint(back) == serialize_checkpoint(ck));
}

TEST_CASE("checkpoint round trip keeps extreme values") {
    auto ck = sample_checkpoint();
    ck.params[Param::HeadW](0, 0) = std::numeric_limits<double>::denorm_min();
    ck.params[Param::HeadW](0, 1) = -0.0;
    ck.params[Param::HeadW](0, 2) = std::nextafter(1.0, 2.0);
    const auto back = deserialize_checkpoint(serialize_checkpoint(ck));
    check_same(ck, back);
}

TEST_CASE("truncated or corrupt checkpoints fail cleanly") {
    testutil::TempDir dir("ckpt_bad");
    const auto bytes = serialize_checkpoint(sample_checkpoint());
    testutil::write_file(dir / "t.ckpt", bytes.substr(0, bytes.size() - 1));
    CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), DataError);

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x40;
    CHECK_THROWS_AS(deserialize_checkpoint(flipped), DataError);

    CHECK_THROWS_AS(deserialize_checkpoint("FFLD"), DataError);
    CHECK_THROWS_AS(deserialize_checkpoint(std::string(64, 'x')), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
}

TEST_CASE("version mismatch is reported") {
    auto bytes = serialize_checkpoint(sample_checkpoint());
    const std::uint32_t v = kCheckpointVersion + 1;
    std::memcpy(bytes.data() + 8, &v, 4);
    try {
        deserialize_checkpoint(reseal(bytes));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
}

TEST_CASE("scalers of the wrong width are rejected") {
    auto ck = sample_checkpoint();
    std::vector<BasinRecord> recs{testutil::make_record("s_1", 120, 4, 2, 1)};
    ck.scalers = compute_scalers(recs, SplitPolicy{});
    CHECK_THROWS_AS(serialize_checkpoint(ck), DataError);
    const auto bytes = detail::encode_checkpoint(ck);
    try {
        deserialize_checkpoint(bytes);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("scalers") != std::string::npos);
    }
}

TEST_CASE("parameter tensors of the wrong shape are rejected") {
    auto ck = sample_checkpoint();
    ck.params[Param::LstmWhh].resize(5, 6);
    CHECK_THROWS_AS(deserialize_checkpoint(detail::encode_checkpoint(ck)), DataError);
}
