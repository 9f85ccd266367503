#pragma once

#include "fineflood/train.hpp"

#include <json.hpp>

namespace fineflood {

enum class Modules { Full, Head };

inline const char* to_string(Modules m) { return m == Modules::Full ? "Full" : "Head"; }

inline Modules parse_modules(std::string_view s) {
    if (s == "Full" || s == "full") return Modules::Full;
    if (s == "Head" || s == "head") return Modules::Head;
    throw DataError("unknown modules '" + std::string(s) + "' (expected Full or Head)");
}

/// Head: only the output layer. Full: everything except the static embedding.
inline TrainableMask trainable_mask(Modules mode) {
    TrainableMask m{};
    m[static_cast<std::size_t>(Param::HeadW)] = true;
    m[static_cast<std::size_t>(Param::HeadB)] = true;
    if (mode == Modules::Full) {
        m[static_cast<std::size_t>(Param::LstmWih)] = true;
        m[static_cast<std::size_t>(Param::LstmWhh)] = true;
        m[static_cast<std::size_t>(Param::LstmB)] = true;
    }
    return m;
}

inline constexpr int kStageBoundary = 20;

struct FineTuneConfig {
    int epochs = 10;
    double lr_stage1 = 1e-4;
    double lr_stage2 = 1e-5;
    LossKind loss = LossKind::NSE;
    Modules modules = Modules::Full;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1 || epochs > 40) throw PreconditionError("fine-tune epochs must be in [1, 40]");
        if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0)) throw PreconditionError("fine-tune learning rates must be positive");
    }

    TrainConfig to_train_config(int batch_size, int validate_every = 1) const {
        validate();
        TrainConfig t;
        t.epochs = epochs;
        t.lr_schedule = {{1, std::min(epochs, kStageBoundary), lr_stage1}};
        if (epochs > kStageBoundary) t.lr_schedule.push_back({kStageBoundary + 1, epochs, lr_stage2});
        t.batch_size = batch_size;
        t.loss = loss;
        t.seed = seed;
        t.validate_every = validate_every;
        return t;
    }

    friend bool operator==(const FineTuneConfig&, const FineTuneConfig&) = default;
};

inline void to_json(nlohmann::json& j, const FineTuneConfig& c) {
    j = {{"epochs", c.epochs},       {"lr_stage1", c.lr_stage1}, {"lr_stage2", c.lr_stage2},
         {"loss", to_string(c.loss)}, {"modules", to_string(c.modules)}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, FineTuneConfig& c) {
    c = FineTuneConfig{};
    c.epochs = j.value("epochs", c.epochs);
    c.lr_stage1 = j.value("lr_stage1", c.lr_stage1);
    c.lr_stage2 = j.value("lr_stage2", c.lr_stage2);
    if (j.contains("loss")) c.loss = parse_loss(j.at("loss").get<std::string>());
    if (j.contains("modules")) c.modules = parse_modules(j.at("modules").get<std::string>());
    c.seed = j.value("seed", c.seed);
}

struct FineTuneOutcome {
    bool tunable = false;
    std::string reason;
    TrainResult result;
};

/// Continues training `ckpt` on one basin. Scalers are reused as-is; optimizer
/// moments start at zero; batch size comes from the checkpoint's provenance.
inline FineTuneOutcome finetune(const ModelCheckpoint& ckpt, const BasinRecord& basin, const SplitPolicy& split,
                                const FineTuneConfig& cfg, int validate_every = 1) {
    const auto tcfg = cfg.to_train_config(static_cast<int>(ckpt.provenance.batch_size), validate_every);
    FineTuneOutcome out;
    const auto data = make_train_data(std::span<const BasinRecord>(&basin, 1), ckpt.scalers, split, ckpt.config.seq_len);
    if (data.train.empty()) {
        out.reason = "no training windows";
        return out;
    }
    if (cfg.loss == LossKind::NSE && !std::isfinite(data.basin_std.front())) {
        out.reason = "training-period flow std unavailable";
        return out;
    }
    out.tunable = true;
    out.result = train(ckpt, data, tcfg, trainable_mask(cfg.modules));
    return out;
}

// ---------------------------------------------------------------------------
// Test-period comparison

inline nlohmann::json metric_json(const Metric& m) { return m ? nlohmann::json(*m) : nlohmann::json(nullptr); }

inline Metric metric_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

inline nlohmann::json report_json(const MetricReport& r) {
    nlohmann::json j = nlohmann::json::object();
    const auto vals = r.values();
    for (std::size_t i = 0; i < vals.size(); ++i) j[MetricReport::names[i]] = metric_json(vals[i]);
    j["n_samples"] = r.n_samples;
    return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.nse = metric_from_json(j.at("nse"));
    r.mse = metric_from_json(j.at("mse"));
    r.rmse = metric_from_json(j.at("rmse"));
    r.kge = metric_from_json(j.at("kge"));
    r.pearson_r = metric_from_json(j.at("pearson_r"));
    r.alpha_nse = metric_from_json(j.at("alpha_nse"));
    r.beta_nse = metric_from_json(j.at("beta_nse"));
    r.beta_kge = metric_from_json(j.at("beta_kge"));
    r.peak_timing = metric_from_json(j.at("peak_timing"));
    r.missed_peaks = metric_from_json(j.at("missed_peaks"));
    r.peak_mape = metric_from_json(j.at("peak_mape"));
    r.n_samples = j.at("n_samples").get<std::size_t>();
    return r;
}

inline Metric metric_delta(const Metric& after, const Metric& before) {
    if (!after || !before) return std::nullopt;
    return *after - *before;
}

struct FineTuneResult {
    std::string basin_id;
    MetricReport pretrained;
    MetricReport finetuned;
    Metric delta_nse;
    Metric delta_kge;
    std::optional<FineTuneConfig> chosen_config;
    std::string trial_log;
};

inline nlohmann::json to_json(const FineTuneResult& r) {
    nlohmann::json j = {{"basin_id", r.basin_id},
                        {"pretrained", report_json(r.pretrained)},
                        {"finetuned", report_json(r.finetuned)},
                        {"delta_nse", metric_json(r.delta_nse)},
                        {"delta_kge", metric_json(r.delta_kge)},
                        {"trial_log", r.trial_log}};
    j["chosen_config"] = r.chosen_config ? nlohmann::json(*r.chosen_config) : nlohmann::json(nullptr);
    return j;
}

inline FineTuneResult finetune_result_from_json(const nlohmann::json& j) {
    FineTuneResult r;
    r.basin_id = j.at("basin_id").get<std::string>();
    r.pretrained = report_from_json(j.at("pretrained"));
    r.finetuned = report_from_json(j.at("finetuned"));
    r.delta_nse = metric_from_json(j.at("delta_nse"));
    r.delta_kge = metric_from_json(j.at("delta_kge"));
    if (!j.at("chosen_config").is_null()) r.chosen_config = j.at("chosen_config").get<FineTuneConfig>();
    r.trial_log = j.value("trial_log", std::string{});
    return r;
}

/// Test-period metrics of one checkpoint on one basin, using the checkpoint's own scalers.
inline MetricReport evaluate_checkpoint(const ModelCheckpoint& ckpt, const BasinRecord& basin, const Period& period,
                                        const PeakOptions& peaks = {}) {
    const auto ds = build_windows(basin, ckpt.scalers, period, ckpt.config.seq_len);
    if (ds.empty()) throw DataError(basin.basin_id + ": zero test samples");
    const auto pred = predict_dataset(ckpt.params, ckpt.config, ds);
    return compute_metrics(basin_hydrograph(ds, 0, pred, ckpt.scalers), peaks);
}

/// Runs both models over the same test windows and reports metrics and deltas.
inline FineTuneResult evaluate_pair(const ModelCheckpoint& pre, const ModelCheckpoint& ft, const BasinRecord& basin,
                                    const Period& test_period, const PeakOptions& peaks = {}) {
    if (!(pre.scalers == ft.scalers)) throw PreconditionError("evaluate_pair: checkpoints use different scalers");
    if (param_shapes(pre.config) != param_shapes(ft.config) || pre.config.seq_len != ft.config.seq_len)
        throw PreconditionError("evaluate_pair: checkpoints have different shapes");
    const auto ds = build_windows(basin, pre.scalers, test_period, pre.config.seq_len);
    if (ds.empty()) throw DataError(basin.basin_id + ": zero test samples");
    FineTuneResult r;
    r.basin_id = basin.basin_id;
    r.pretrained = compute_metrics(basin_hydrograph(ds, 0, predict_dataset(pre.params, pre.config, ds), pre.scalers), peaks);
    r.finetuned = compute_metrics(basin_hydrograph(ds, 0, predict_dataset(ft.params, ft.config, ds), ft.scalers), peaks);
    r.delta_nse = metric_delta(r.finetuned.nse, r.pretrained.nse);
    r.delta_kge = metric_delta(r.finetuned.kge, r.pretrained.kge);
    return r;
}

} // namespace fineflood
