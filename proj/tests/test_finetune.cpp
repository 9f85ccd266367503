#include "test_util.hpp"

#include <catch_amalgamated.hpp>

using namespace fineflood;

namespace {

ModelConfig small_model(int hidden = 16, int seq_len = 45) {
    ModelConfig c;
    c.hidden_size = hidden;
    c.embed_size = 4;
    c.seq_len = seq_len;
    c.dropout = 0.1;
    return c;
}

TrainConfig pre_config(int epochs) {
    TrainConfig t;
    t.epochs = epochs;
    t.lr_schedule = {{1, epochs, 5e-3}};
    t.batch_size = 64;
    t.seed = 1;
    t.validate_every = 0;
    return t;
}

/// Family of 6 synthetic basins; basin 0 has a response outside the drawn ranges.
struct Fixture {
    testutil::Family fam;
    ModelCheckpoint pre;
};

Fixture& fixture() {
    static Fixture f = [] {
        Fixture x;
        x.fam.dir = std::make_unique<testutil::TempDir>("ft");
        SyntheticFamily spec;
        spec.n_basins = 6;
        spec.n_days = 730;
        spec.seed = 21;
        BucketParams odd;
        odd.k_fast = 0.95;
        odd.k_slow = 0.004;
        odd.split_frac = 0.95;
        odd.et_coeff = 0.02;
        odd.noise_std = 0.0;
        spec.params = {odd};
        x.fam.gen = gen_family(spec, x.fam.dir->path());
        for (const auto& id : list_basins(x.fam.dir->path())) x.fam.records.push_back(load_basin(x.fam.gen.spec, id));
        const std::vector<BasinRecord> others(x.fam.records.begin() + 1, x.fam.records.end());
        x.pre = pretrain(others, SplitPolicy{}, small_model(), pre_config(12)).checkpoint;
        return x;
    }();
    return f;
}

} // namespace

TEST_CASE("trainable masks") {
    const auto head = trainable_mask(Modules::Head);
    const auto full = trainable_mask(Modules::Full);
    CHECK(std::count(head.begin(), head.end(), true) == 2);
    CHECK(head[static_cast<std::size_t>(Param::HeadW)]);
    CHECK(head[static_cast<std::size_t>(Param::HeadB)]);
    CHECK(std::count(full.begin(), full.end(), true) == 5);
    for (auto p : {Param::EmbedW, Param::EmbedB}) {
        CHECK_FALSE(head[static_cast<std::size_t>(p)]);
        CHECK_FALSE(full[static_cast<std::size_t>(p)]);
    }
    CHECK(parse_modules("Head") == Modules::Head);
    CHECK_THROWS_AS(parse_modules("lstm"), DataError);
}

TEST_CASE("fine-tune config maps to the two-stage schedule") {
    FineTuneConfig c;
    c.epochs = 30;
    c.lr_stage1 = 1e-3;
    c.lr_stage2 = 1e-4;
    const auto t = c.to_train_config(128);
    CHECK(t.lr_for_epoch(20) == 1e-3);
    CHECK(t.lr_for_epoch(21) == 1e-4);
    CHECK(t.batch_size == 128);
    c.epochs = 5;
    const auto t5 = c.to_train_config(16);
    REQUIRE(t5.lr_schedule.size() == 1);
    CHECK(t5.lr_for_epoch(5) == 1e-3);
    c.epochs = 41;
    CHECK_THROWS_AS(c.validate(), PreconditionError);
    c.epochs = 3;
    c.modules = Modules::Head;
    c.loss = LossKind::RMSE;
    const nlohmann::json j = c;
    CHECK(j.get<FineTuneConfig>() == c);
}

TEST_CASE("head fine-tuning freezes everything else") {
    auto& f = fixture();
    FineTuneConfig c;
    c.epochs = 3;
    c.lr_stage1 = 1e-2;
    c.modules = Modules::Head;
    const auto out = finetune(f.pre, f.fam.records[0], SplitPolicy{}, c);
    REQUIRE(out.tunable);
    const auto& p = out.result.checkpoint.params;
    for (std::size_t i = 0; i < kNumParams; ++i) {
        const bool head = i == static_cast<std::size_t>(Param::HeadW) || i == static_cast<std::size_t>(Param::HeadB);
        CHECK(bit_identical(p.tensors[i], f.pre.params.tensors[i]) == !head);
    }
    CHECK(out.result.checkpoint.scalers == f.pre.scalers);
    CHECK(out.result.checkpoint.provenance.batch_size == f.pre.provenance.batch_size);
}

TEST_CASE("full fine-tuning leaves the embedding frozen and scalers untouched") {
    auto& f = fixture();
    FineTuneConfig c;
    c.epochs = 2;
    c.lr_stage1 = 1e-3;
    const auto out = finetune(f.pre, f.fam.records[0], SplitPolicy{}, c);
    REQUIRE(out.tunable);
    const auto& p = out.result.checkpoint.params;
    CHECK(bit_identical(p[Param::EmbedW], f.pre.params[Param::EmbedW]));
    CHECK(bit_identical(p[Param::EmbedB], f.pre.params[Param::EmbedB]));
    CHECK_FALSE(bit_identical(p[Param::LstmWhh], f.pre.params[Param::LstmWhh]));
    CHECK(out.result.checkpoint.scalers == f.pre.scalers);
    CHECK_FALSE(f.pre.scalers.per_basin_flow_std.contains(f.fam.records[0].basin_id));
}

TEST_CASE("a vanishing learning rate is a near-identity") {
    auto& f = fixture();
    FineTuneConfig c;
    c.epochs = 1;
    c.lr_stage1 = 1e-12;
    const auto& rec = f.fam.records[0];
    const auto out = finetune(f.pre, rec, SplitPolicy{}, c);
    REQUIRE(out.tunable);
    const auto r = evaluate_pair(f.pre, out.result.checkpoint, rec, SplitPolicy{}.period(rec, Subset::Test));
    CHECK(std::abs(*r.delta_nse) < 1e-6);
}

TEST_CASE("evaluating a checkpoint against itself gives zero deltas") {
    auto& f = fixture();
    const auto& rec = f.fam.records[2];
    const auto test = SplitPolicy{}.period(rec, Subset::Test);
    const auto r = evaluate_pair(f.pre, f.pre, rec, test);
    CHECK(*r.delta_nse == 0.0);
    CHECK(*r.delta_kge == 0.0);
    CHECK(r.pretrained.n_samples > 0);
    const auto single = evaluate_checkpoint(f.pre, rec, test);
    CHECK(*single.nse == *r.pretrained.nse);

    const auto back = finetune_result_from_json(to_json(r));
    CHECK(*back.delta_nse == *r.delta_nse);
    CHECK(*back.pretrained.nse == *r.pretrained.nse);
    CHECK(back.finetuned.n_samples == r.finetuned.n_samples);
}

TEST_CASE("evaluate_pair rejects mismatched checkpoints and empty periods") {
    auto& f = fixture();
    const auto& rec = f.fam.records[1];
    auto other = f.pre;
    other.scalers.flow_mean += 1.0;
    const auto test = SplitPolicy{}.period(rec, Subset::Test);
    CHECK_THROWS_AS(evaluate_pair(f.pre, other, rec, test), PreconditionError);
    const Period before{rec.dates.front() - std::chrono::days(100), rec.dates.front() - std::chrono::days(1)};
    CHECK_THROWS_AS(evaluate_pair(f.pre, f.pre, rec, before), DataError);
}

TEST_CASE("basin without training data is untunable") {
    auto& f = fixture();
    auto dry = f.fam.records[0];
    dry.streamflow.setConstant(kNaN);
    FineTuneConfig c;
    c.epochs = 1;
    const auto out = finetune(f.pre, dry, SplitPolicy{}, c);
    CHECK_FALSE(out.tunable);
    CHECK_FALSE(out.reason.empty());
}

TEST_CASE("fine-tuning helps a basin that deviates from the family") {
    auto& f = fixture();
    const auto& rec = f.fam.records[0];
    FineTuneConfig c;
    c.epochs = 15;
    c.lr_stage1 = 2e-3;
    c.seed = 3;
    const auto out = finetune(f.pre, rec, SplitPolicy{}, c, 0);
    REQUIRE(out.tunable);
    const auto r = evaluate_pair(f.pre, out.result.checkpoint, rec, SplitPolicy{}.period(rec, Subset::Test));
    INFO("pretrained " << *r.pretrained.nse << " finetuned " << *r.finetuned.nse);
    CHECK(*r.finetuned.nse > *r.pretrained.nse);
}
