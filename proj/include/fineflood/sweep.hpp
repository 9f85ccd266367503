#pragma once

#include "fineflood/finetune.hpp"
#include "fineflood/tpe.hpp"

#include <filesystem>
#include <fstream>
#include <functional>

namespace fineflood {

inline const char* to_string(TrialStatus s) { return s == TrialStatus::Ok ? "ok" : "failed"; }

inline nlohmann::json trial_json(const SweepTrial& t, const SearchSpace& space) {
    nlohmann::json j = {{"trial_id", t.trial_id},
                        {"point", space.to_json(t.point)},
                        {"status", to_string(t.status)},
                        {"duration", t.duration}};
    j["objective"] = std::isfinite(t.objective) ? nlohmann::json(t.objective) : nlohmann::json(nullptr);
    if (!t.message.empty()) j["message"] = t.message;
    return j;
}

inline SweepTrial trial_from_json(const nlohmann::json& j, const SearchSpace& space) {
    SweepTrial t;
    t.trial_id = j.at("trial_id").get<int>();
    t.point = space.from_json(j.at("point"));
    t.status = j.at("status").get<std::string>() == "ok" ? TrialStatus::Ok : TrialStatus::Failed;
    t.objective = j.at("objective").is_null() ? kNaN : j.at("objective").get<double>();
    t.duration = j.value("duration", 0.0);
    t.message = j.value("message", std::string{});
    return t;
}

/// Reads a JSON-lines trial log. A truncated final line is ignored.
inline std::vector<SweepTrial> read_trial_log(const std::filesystem::path& path, const SearchSpace& space) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open trial log " + path.string());
    std::vector<SweepTrial> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(trial_from_json(nlohmann::json::parse(line), space));
        } catch (const nlohmann::json::exception&) {
            if (in.peek() == std::char_traits<char>::eof()) break;
            throw DataError("corrupt trial log line in " + path.string());
        }
    }
    return out;
}

/// What one objective evaluation produced.
struct TrialOutcome {
    TrialStatus status = TrialStatus::Failed;
    double objective = kNaN;
    std::string message;
    std::optional<ModelCheckpoint> checkpoint;
};

using ObjectiveFn = std::function<TrialOutcome(const Point&, std::uint64_t trial_seed)>;

struct SweepOptions {
    int n_trials = 50;
    std::uint64_t seed = 0;
    TpeOptions tpe;
    bool random_search = false;
    /// Points proposed per round; >1 treats not-yet-scored points of the round as bad.
    int batch = 1;
    std::filesystem::path log_path; // empty: no log
};

struct SweepResult {
    std::string basin_id;
    std::vector<SweepTrial> trials;
    std::optional<std::size_t> best; // index into trials
    std::optional<ModelCheckpoint> best_checkpoint;

    const SweepTrial* best_trial() const { return best ? &trials[*best] : nullptr; }
};

/// Trial seed: a function of the point and the sweep seed only, so a repeated
/// point reproduces its objective exactly.
inline std::uint64_t trial_seed(std::uint64_t sweep_seed, const Point& p) { return derive_seed(sweep_seed, hash_point(p)); }

/// Index of the ok trial with the largest objective, lowest trial_id on ties.
inline std::optional<std::size_t> select_best(std::span<const SweepTrial> trials) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (!trials[i].ok()) continue;
        if (!best || trials[i].objective > trials[*best].objective ||
            (trials[i].objective == trials[*best].objective && trials[i].trial_id < trials[*best].trial_id))
            best = i;
    }
    return best;
}

/// Sequential propose/evaluate loop. The trial log (if any) is rewritten from scratch.
inline SweepResult run_sweep(const SearchSpace& space, const ObjectiveFn& objective, const SweepOptions& opt,
                             std::string basin_id = {}) {
    space.validate();
    if (opt.n_trials < 1) throw PreconditionError("n_trials must be >= 1");
    SweepResult res;
    res.basin_id = std::move(basin_id);
    std::ofstream log;
    if (!opt.log_path.empty()) {
        if (opt.log_path.has_parent_path()) std::filesystem::create_directories(opt.log_path.parent_path());
        log.open(opt.log_path, std::ios::trunc);
        if (!log) throw DataError("cannot write trial log " + opt.log_path.string());
    }

    const int batch = std::max(1, opt.batch);
    for (int round0 = 0; round0 < opt.n_trials; round0 += batch) {
        const int round1 = std::min(opt.n_trials, round0 + batch);
        std::vector<Point> pending;
        for (int id = round0; id < round1; ++id) {
            std::mt19937_64 rng(derive_seed(opt.seed, 0x7be, static_cast<std::uint64_t>(id)));
            pending.push_back(opt.random_search ? prior_sample(space, rng)
                                                : tpe_propose(std::span<const SweepTrial>(res.trials), space, rng,
                                                              opt.tpe, std::span<const Point>(pending)));
        }
        for (int id = round0; id < round1; ++id) {
            SweepTrial t;
            t.trial_id = id;
            t.point = pending[static_cast<std::size_t>(id - round0)];
            const auto t0 = std::chrono::steady_clock::now();
            TrialOutcome out;
            try {
                out = objective(t.point, trial_seed(opt.seed, t.point));
            } catch (const std::exception& e) {
                out = TrialOutcome{TrialStatus::Failed, kNaN, e.what(), std::nullopt};
            }
            t.duration = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            t.status = out.status == TrialStatus::Ok && std::isfinite(out.objective) ? TrialStatus::Ok : TrialStatus::Failed;
            t.objective = t.status == TrialStatus::Ok ? out.objective : kNaN;
            t.message = out.message;
            if (t.status == TrialStatus::Failed && t.message.empty()) t.message = "non-finite objective";
            res.trials.push_back(t);
            const auto before = res.best;
            res.best = select_best(res.trials);
            if (res.best != before) res.best_checkpoint = std::move(out.checkpoint);
            if (log) {
                log << trial_json(t, space).dump() << '\n';
                log.flush();
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Objectives

enum class Selection {
    ValidationNSE,    ///< always NSE on the validation period
    MatchTrainingLoss ///< minus the trial's own training loss on the validation period
};

inline Selection parse_selection(std::string_view s) {
    if (s == "nse") return Selection::ValidationNSE;
    if (s == "loss") return Selection::MatchTrainingLoss;
    throw DataError("unknown selection '" + std::string(s) + "' (expected nse or loss)");
}

inline const char* to_string(Selection s) { return s == Selection::ValidationNSE ? "nse" : "loss"; }

inline FineTuneConfig finetune_config_from_point(const SearchSpace& space, const Point& p, std::uint64_t seed) {
    FineTuneConfig c;
    c.epochs = static_cast<int>(space.value(p, "epochs"));
    c.lr_stage1 = space.value(p, "lr_stage1");
    c.lr_stage2 = space.value(p, "lr_stage2");
    c.loss = parse_loss(space.choice(p, "loss"));
    c.modules = space.has("modules") ? parse_modules(space.choice(p, "modules")) : Modules::Full;
    c.seed = seed;
    return c;
}

namespace detail {

/// Validation-period objective of a trained checkpoint on one basin.
inline TrialOutcome score_validation(const TrainResult& tr, const TrainData& data, LossKind loss, Selection sel) {
    TrialOutcome out;
    if (!tr.checkpoint.params.all_finite()) {
        out.message = "non-finite parameters";
        return out;
    }
    if (data.valid.empty()) {
        out.message = "no validation windows";
        return out;
    }
    const auto& ck = tr.checkpoint;
    const auto pred = predict_dataset(ck.params, ck.config, data.valid);
    if (!pred.allFinite()) {
        out.message = "non-finite validation predictions";
        return out;
    }
    if (sel == Selection::ValidationNSE) {
        const auto v = median_of(per_basin_nse(data.valid, pred, ck.scalers));
        if (!v) {
            out.message = "validation NSE undefined";
            return out;
        }
        out.objective = *v;
    } else {
        std::vector<double> p(pred.data(), pred.data() + pred.size()), o, s;
        for (const auto& smp : data.valid.samples()) {
            o.push_back(data.valid.basins()[smp.basin].flow(static_cast<Eigen::Index>(smp.target)));
            s.push_back(data.basin_std[smp.basin]);
        }
        out.objective = loss == LossKind::NSE ? -loss_nse(p, o, s) : loss == LossKind::MSE ? -loss_mse(p, o) : -loss_rmse(p, o);
    }
    out.status = std::isfinite(out.objective) ? TrialStatus::Ok : TrialStatus::Failed;
    return out;
}

} // namespace detail

/// Fine-tunes `ckpt` with the point's settings and scores it on the validation period.
inline TrialOutcome sweep_objective(const ModelCheckpoint& ckpt, const BasinRecord& basin, const SplitPolicy& split,
                                    const SearchSpace& space, const Point& point, std::uint64_t seed,
                                    Selection sel = Selection::ValidationNSE) {
    try {
        const auto cfg = finetune_config_from_point(space, point, seed);
        auto ft = finetune(ckpt, basin, split, cfg, /*validate_every=*/0);
        if (!ft.tunable) return {TrialStatus::Failed, kNaN, ft.reason, std::nullopt};
        const auto data =
            make_train_data(std::span<const BasinRecord>(&basin, 1), ckpt.scalers, split, ckpt.config.seq_len);
        auto out = detail::score_validation(ft.result, data, cfg.loss, sel);
        if (out.status == TrialStatus::Ok) out.checkpoint = std::move(ft.result.checkpoint);
        return out;
    } catch (const std::exception& e) {
        return {TrialStatus::Failed, kNaN, e.what(), std::nullopt};
    }
}

/// Trains a fresh single-basin model with the point's settings and scores it.
inline TrialOutcome single_basin_objective(const BasinRecord& basin, const SplitPolicy& split, const SearchSpace& space,
                                           const Point& point, std::uint64_t seed, int batch_size,
                                           Selection sel = Selection::ValidationNSE, ModelConfig base = {}) {
    try {
        const auto fc = finetune_config_from_point(space, point, seed);
        auto tcfg = fc.to_train_config(batch_size, 0);
        const int hidden = std::stoi(space.choice(point, "hidden_size"));
        auto sb = train_single_basin(basin, split, tcfg, hidden, base);
        if (!sb.trainable) return {TrialStatus::Failed, kNaN, sb.reason, std::nullopt};
        const auto& sc = sb.result.checkpoint.scalers;
        const auto data = make_train_data(std::span<const BasinRecord>(&basin, 1), sc, split, base.seq_len);
        auto out = detail::score_validation(sb.result, data, fc.loss, sel);
        if (out.status == TrialStatus::Ok) out.checkpoint = std::move(sb.result.checkpoint);
        return out;
    } catch (const std::exception& e) {
        return {TrialStatus::Failed, kNaN, e.what(), std::nullopt};
    }
}

} // namespace fineflood
