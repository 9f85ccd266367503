#pragma once

// JSON run configuration. Every section is optional; unknown keys are rejected
// so that typos fail loudly.
//
// {
//   "data":   {"root", "dynamic_inputs", "target", "static_attributes"},
//   "split":  {"train": [start, end], "valid": [...], "test": [...]}
//             or {"train_fraction", "valid_fraction"},
//   "model":  {"hidden_size", "embed_size", "dropout", "seq_len"},
//   "train":  {"epochs", "lr_schedule": [[first, last, lr], ...], "batch_size", "loss",
//              "seed", "clip_norm", "nse_eps", "validate_every"},
//   "finetune": {"epochs", "lr_stage1", "lr_stage2", "loss", "modules", "seed"},
//   "sweep":  {"trials", "n_startup", "gamma", "n_candidates", "prior_weight", "selection", "batch"},
//   "peaks":  {"window", "min_distance", "min_prominence"},
//   "experiment": {"seeds" | "n_seeds", "basins", "sample_size", "sample_seed", "pretrain_basins",
//                  "single_basin", "single_basin_seeds", "single_basin_batch_size", "out", "workers"}
// }

#include "fineflood/experiment.hpp"
#include "fineflood/synth.hpp"

#include <set>

namespace fineflood {

using nlohmann::json;

namespace detail {

inline void check_keys(const json& j, std::string_view section, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) throw DataError("config: '" + std::string(section) + "' must be an object");
    for (const auto& [k, v] : j.items())
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw DataError("config: unknown key '" + k + "' in '" + std::string(section) + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError(std::string("config: bad value for '") + key + "'");
    }
}

inline Period parse_period(const json& j, std::string_view what) {
    if (!j.is_array() || j.size() != 2) throw DataError("config: split." + std::string(what) + " must be [start, end]");
    return {parse_date_or_throw(j.at(0).get<std::string>(), what), parse_date_or_throw(j.at(1).get<std::string>(), what)};
}

} // namespace detail

struct RunConfig {
    DataSpec data;
    SplitPolicy split;
    ModelConfig model;
    TrainConfig train;
    FineTuneConfig finetune;
    SweepOptions sweep;
    Selection selection = Selection::ValidationNSE;
    PeakOptions peaks;
    ExperimentPlan experiment;
};

inline RunConfig parse_config(const json& j) {
    using detail::get_or;
    detail::check_keys(j, "config", {"data", "split", "model", "train", "finetune", "sweep", "peaks", "experiment"});
    RunConfig rc;
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::check_keys(d, "data", {"root", "dynamic_inputs", "target", "static_attributes"});
        rc.data.data_root = get_or<std::string>(d, "root", "");
        rc.data.dynamic_inputs = get_or(d, "dynamic_inputs", std::vector<std::string>{});
        rc.data.target = get_or<std::string>(d, "target", "streamflow");
        rc.data.static_attributes = get_or(d, "static_attributes", std::vector<std::string>{});
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        detail::check_keys(s, "split", {"train", "valid", "test", "train_fraction", "valid_fraction"});
        if (s.contains("train") || s.contains("valid") || s.contains("test")) {
            if (!s.contains("train") || !s.contains("valid") || !s.contains("test"))
                throw DataError("config: split needs all of train, valid and test");
            SplitConfig sc{detail::parse_period(s.at("train"), "train"), detail::parse_period(s.at("valid"), "valid"),
                           detail::parse_period(s.at("test"), "test")};
            sc.validate();
            rc.split.fixed = sc;
        }
        rc.split.train_fraction = get_or(s, "train_fraction", rc.split.train_fraction);
        rc.split.valid_fraction = get_or(s, "valid_fraction", rc.split.valid_fraction);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::check_keys(m, "model", {"hidden_size", "embed_size", "dropout", "seq_len"});
        rc.model.hidden_size = get_or(m, "hidden_size", rc.model.hidden_size);
        rc.model.embed_size = get_or(m, "embed_size", rc.model.embed_size);
        rc.model.dropout = get_or(m, "dropout", rc.model.dropout);
        rc.model.seq_len = get_or(m, "seq_len", rc.model.seq_len);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::check_keys(t, "train", {"epochs", "lr_schedule", "batch_size", "loss", "seed", "clip_norm", "nse_eps",
                                        "validate_every"});
        rc.train.epochs = get_or(t, "epochs", rc.train.epochs);
        if (t.contains("lr_schedule")) {
            rc.train.lr_schedule.clear();
            for (const auto& st : t.at("lr_schedule")) {
                if (!st.is_array() || st.size() != 3) throw DataError("config: lr_schedule entries are [first, last, lr]");
                rc.train.lr_schedule.push_back({st.at(0).get<int>(), st.at(1).get<int>(), st.at(2).get<double>()});
            }
        }
        rc.train.batch_size = get_or(t, "batch_size", rc.train.batch_size);
        if (t.contains("loss")) rc.train.loss = parse_loss(t.at("loss").get<std::string>());
        rc.train.seed = get_or(t, "seed", rc.train.seed);
        rc.train.clip_norm = get_or(t, "clip_norm", rc.train.clip_norm);
        rc.train.nse_eps = get_or(t, "nse_eps", rc.train.nse_eps);
        rc.train.validate_every = get_or(t, "validate_every", rc.train.validate_every);
    }
    if (j.contains("finetune")) {
        detail::check_keys(j.at("finetune"), "finetune", {"epochs", "lr_stage1", "lr_stage2", "loss", "modules", "seed"});
        rc.finetune = j.at("finetune").get<FineTuneConfig>();
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        detail::check_keys(s, "sweep", {"trials", "n_startup", "gamma", "n_candidates", "prior_weight", "selection", "batch"});
        rc.sweep.n_trials = get_or(s, "trials", rc.sweep.n_trials);
        rc.sweep.tpe.n_startup = get_or(s, "n_startup", rc.sweep.tpe.n_startup);
        rc.sweep.tpe.gamma = get_or(s, "gamma", rc.sweep.tpe.gamma);
        rc.sweep.tpe.n_candidates = get_or(s, "n_candidates", rc.sweep.tpe.n_candidates);
        rc.sweep.tpe.prior_weight = get_or(s, "prior_weight", rc.sweep.tpe.prior_weight);
        rc.sweep.batch = get_or(s, "batch", rc.sweep.batch);
        if (s.contains("selection")) rc.selection = parse_selection(s.at("selection").get<std::string>());
    }
    if (j.contains("peaks")) {
        const auto& p = j.at("peaks");
        detail::check_keys(p, "peaks", {"window", "min_distance", "min_prominence"});
        rc.peaks.window = get_or(p, "window", rc.peaks.window);
        rc.peaks.min_distance = get_or(p, "min_distance", rc.peaks.min_distance);
        if (p.contains("min_prominence") && !p.at("min_prominence").is_null())
            rc.peaks.min_prominence = p.at("min_prominence").get<double>();
    }

    auto& e = rc.experiment;
    e.data = rc.data;
    e.split = rc.split;
    e.model = rc.model;
    e.pretrain = rc.train;
    e.n_trials = rc.sweep.n_trials;
    e.tpe = rc.sweep.tpe;
    e.selection = rc.selection;
    e.peaks = rc.peaks;
    e.single_basin_batch_size = rc.train.batch_size;
    if (j.contains("experiment")) {
        const auto& x = j.at("experiment");
        detail::check_keys(x, "experiment", {"seeds", "n_seeds", "basins", "sample_size", "sample_seed", "pretrain_basins",
                                             "single_basin", "single_basin_seeds", "single_basin_batch_size", "out",
                                             "workers"});
        if (x.contains("seeds") && x.contains("n_seeds")) throw DataError("config: give either seeds or n_seeds");
        if (x.contains("seeds")) e.seeds = x.at("seeds").get<std::vector<std::uint64_t>>();
        if (x.contains("n_seeds")) {
            const int n = x.at("n_seeds").get<int>();
            if (n < 1) throw DataError("config: n_seeds must be >= 1");
            e.seeds.clear();
            for (int i = 0; i < n; ++i) e.seeds.push_back(static_cast<std::uint64_t>(i));
        }
        e.basins = get_or(x, "basins", e.basins);
        if (x.contains("sample_size") && !x.at("sample_size").is_null())
            e.sample_size = x.at("sample_size").get<std::size_t>();
        e.sample_seed = get_or(x, "sample_seed", e.sample_seed);
        e.pretrain_basins = get_or(x, "pretrain_basins", e.pretrain_basins);
        e.single_basin = get_or(x, "single_basin", e.single_basin);
        e.single_basin_seeds = get_or(x, "single_basin_seeds", e.single_basin_seeds);
        e.single_basin_batch_size = get_or(x, "single_basin_batch_size", e.single_basin_batch_size);
        e.out = get_or<std::string>(x, "out", "");
        e.workers = get_or(x, "workers", e.workers);
    }
    return rc;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(io::read_text(path));
    } catch (const json::exception& e) {
        throw DataError("config " + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

/// Data columns default to the synthetic family when the config leaves them empty.
inline DataSpec complete_data_spec(DataSpec spec) {
    if (spec.dynamic_inputs.empty()) spec.dynamic_inputs = synth_dynamic_inputs();
    if (spec.static_attributes.empty()) spec.static_attributes = synth_static_attributes();
    return spec;
}

} // namespace fineflood
