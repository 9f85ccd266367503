#pragma once

// Multi-seed experiment: pre-train per seed, sweep fine-tuning and single-basin
// training per basin, then summarize purely from the files on disk.
//
// Output layout under plan.out:
//   seed_<s>/pretrain.ckpt, seed_<s>/pretrain_history.csv
//   seed_<s>/finetune/<basin>/{trials.jsonl, best.ckpt, result.json}
//   seed_<s>/single_basin/<basin>/{trials.jsonl, best.ckpt, result.json}
// A task is complete once its result.json exists (written atomically).

#include "fineflood/checkpoint.hpp"
#include "fineflood/io.hpp"
#include "fineflood/sweep.hpp"

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace fineflood {

namespace fs = std::filesystem;

/// Uniform sample without replacement, sorted.
inline std::vector<std::string> sample_basins(std::vector<std::string> all_ids, std::size_t size, std::uint64_t seed) {
    if (size > all_ids.size())
        throw PreconditionError("sample size " + std::to_string(size) + " exceeds the " +
                                std::to_string(all_ids.size()) + " available basins");
    std::sort(all_ids.begin(), all_ids.end());
    std::mt19937_64 rng(derive_seed(seed, 0x5a3b));
    // Partial Fisher-Yates with an explicit uniform index keeps the draw portable.
    for (std::size_t i = 0; i < size; ++i) {
        std::uniform_int_distribution<std::size_t> u(i, all_ids.size() - 1);
        std::swap(all_ids[i], all_ids[u(rng)]);
    }
    all_ids.resize(size);
    std::sort(all_ids.begin(), all_ids.end());
    return all_ids;
}

struct ExperimentPlan {
    DataSpec data;
    SplitPolicy split;
    std::vector<std::uint64_t> seeds{0};
    /// Explicit basin sample; when empty, `sample_size` basins are drawn with `sample_seed`
    /// (all available basins when sample_size is unset).
    std::vector<std::string> basins;
    std::optional<std::size_t> sample_size;
    std::uint64_t sample_seed = 0;
    /// Basins used for pre-training; empty means every available basin.
    std::vector<std::string> pretrain_basins;
    ModelConfig model;
    TrainConfig pretrain;
    int n_trials = 50;
    TpeOptions tpe;
    Selection selection = Selection::ValidationNSE;
    bool single_basin = true;
    /// Seeds that also get single-basin sweeps; empty means all seeds.
    std::vector<std::uint64_t> single_basin_seeds;
    int single_basin_batch_size = 256;
    PeakOptions peaks;
    fs::path out;
    int workers = 1;
    /// Polled before each task starts; returning true stops scheduling (simulated interruption).
    std::function<bool()> should_stop;

    void validate() const {
        if (seeds.empty()) throw PreconditionError("plan needs at least one seed");
        if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
            throw PreconditionError("plan seeds must be distinct");
        if (n_trials < 1) throw PreconditionError("n_trials must be >= 1");
        if (out.empty()) throw PreconditionError("plan needs an output directory");
        auto m = model;
        m.n_dyn = std::max(m.n_dyn, 1); // filled in from the data at pre-training time
        m.validate();
        pretrain.validate();
    }

    bool runs_single_basin(std::uint64_t seed) const {
        if (!single_basin) return false;
        return single_basin_seeds.empty() ||
               std::find(single_basin_seeds.begin(), single_basin_seeds.end(), seed) != single_basin_seeds.end();
    }

    fs::path seed_dir(std::uint64_t seed) const { return out / ("seed_" + std::to_string(seed)); }
    fs::path pretrain_path(std::uint64_t seed) const { return seed_dir(seed) / "pretrain.ckpt"; }
    fs::path task_dir(std::uint64_t seed, std::string_view kind, const std::string& basin) const {
        return seed_dir(seed) / kind / basin;
    }
};

/// The concrete basin lists a plan resolves to.
struct ResolvedPlan {
    std::vector<std::string> sample;
    std::vector<std::string> pretrain;
};

inline ResolvedPlan resolve_basins(const ExperimentPlan& plan) {
    const auto available = list_basins(plan.data.data_root);
    const std::set<std::string> avail(available.begin(), available.end());
    ResolvedPlan r;
    if (!plan.basins.empty()) {
        r.sample = plan.basins;
        std::sort(r.sample.begin(), r.sample.end());
        r.sample.erase(std::unique(r.sample.begin(), r.sample.end()), r.sample.end());
        for (const auto& b : r.sample)
            if (!avail.count(b)) throw DataError("basin " + b + " not found under " + plan.data.data_root.string());
    } else {
        r.sample = sample_basins(available, plan.sample_size.value_or(available.size()), plan.sample_seed);
    }
    r.pretrain = plan.pretrain_basins.empty() ? available : plan.pretrain_basins;
    std::sort(r.pretrain.begin(), r.pretrain.end());
    for (const auto& b : r.pretrain)
        if (!avail.count(b)) throw DataError("pre-training basin " + b + " not found");
    return r;
}

// ---------------------------------------------------------------------------
// Per-task result files

struct Exclusion {
    std::uint64_t seed = 0;
    std::string basin_id;
    std::string kind; // "finetune" or "single_basin"
    std::string reason;
};

namespace detail {

inline void write_json_atomic(const fs::path& path, const nlohmann::json& j) { io::write_atomic(path, j.dump(1) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline nlohmann::json excluded_json(const std::string& basin, const std::string& reason) {
    return {{"basin_id", basin}, {"status", "excluded"}, {"reason", reason}};
}

inline std::string sweep_failure_reason(const SweepResult& sr) {
    for (const auto& t : sr.trials)
        if (!t.message.empty()) return "all " + std::to_string(sr.trials.size()) + " trials failed: " + t.message;
    return "all trials failed";
}

inline std::uint64_t basin_seed(std::uint64_t seed, const std::string& basin, std::uint64_t salt) {
    Fnv1a h;
    h.update(basin);
    return derive_seed(seed, h.digest(), salt);
}

} // namespace detail

/// Fine-tuning sweep for one (seed, basin); writes result.json last.
inline void run_finetune_task(const ExperimentPlan& plan, std::uint64_t seed, const BasinRecord& basin,
                              const ModelCheckpoint& pre) {
    const auto dir = plan.task_dir(seed, "finetune", basin.basin_id);
    fs::create_directories(dir);
    const auto space = SearchSpace::fine_tune();
    SweepOptions so;
    so.n_trials = plan.n_trials;
    so.seed = detail::basin_seed(seed, basin.basin_id, 1);
    so.tpe = plan.tpe;
    so.log_path = dir / "trials.jsonl";
    const auto sr = run_sweep(
        space,
        [&](const Point& p, std::uint64_t ts) {
            return sweep_objective(pre, basin, plan.split, space, p, ts, plan.selection);
        },
        so, basin.basin_id);
    if (!sr.best || !sr.best_checkpoint) {
        detail::write_json_atomic(dir / "result.json", detail::excluded_json(basin.basin_id, detail::sweep_failure_reason(sr)));
        return;
    }
    save_checkpoint(*sr.best_checkpoint, dir / "best.ckpt");
    nlohmann::json j;
    try {
        auto res = evaluate_pair(pre, *sr.best_checkpoint, basin, plan.split.period(basin, Subset::Test), plan.peaks);
        const auto& best = sr.trials[*sr.best];
        res.chosen_config = finetune_config_from_point(space, best.point, trial_seed(so.seed, best.point));
        res.trial_log = "trials.jsonl";
        j = to_json(res);
        j["status"] = "ok";
        j["best_trial"] = best.trial_id;
        j["best_validation_nse"] = best.objective;
    } catch (const DataError& e) {
        j = detail::excluded_json(basin.basin_id, e.what());
    }
    detail::write_json_atomic(dir / "result.json", j);
}

/// Single-basin sweep for one (seed, basin); writes result.json last.
inline void run_single_basin_task(const ExperimentPlan& plan, std::uint64_t seed, const BasinRecord& basin) {
    const auto dir = plan.task_dir(seed, "single_basin", basin.basin_id);
    fs::create_directories(dir);
    const auto space = SearchSpace::single_basin();
    auto base = plan.model;
    SweepOptions so;
    so.n_trials = plan.n_trials;
    so.seed = detail::basin_seed(seed, basin.basin_id, 2);
    so.tpe = plan.tpe;
    so.log_path = dir / "trials.jsonl";

    const auto [b, e] = detail::period_range(basin, plan.split.period(basin, Subset::Train));
    bool has_flow = false;
    for (std::size_t i = b; i < e && !has_flow; ++i) has_flow = std::isfinite(basin.streamflow(static_cast<Eigen::Index>(i)));
    if (!has_flow) {
        detail::write_json_atomic(dir / "result.json",
                                  detail::excluded_json(basin.basin_id, "untrainable basin: no data within the training period"));
        return;
    }
    const auto sr = run_sweep(
        space,
        [&](const Point& p, std::uint64_t ts) {
            return single_basin_objective(basin, plan.split, space, p, ts, plan.single_basin_batch_size,
                                          plan.selection, base);
        },
        so, basin.basin_id);
    if (!sr.best || !sr.best_checkpoint) {
        detail::write_json_atomic(dir / "result.json", detail::excluded_json(basin.basin_id, detail::sweep_failure_reason(sr)));
        return;
    }
    save_checkpoint(*sr.best_checkpoint, dir / "best.ckpt");
    nlohmann::json j;
    try {
        const auto m = evaluate_checkpoint(*sr.best_checkpoint, basin, plan.split.period(basin, Subset::Test), plan.peaks);
        const auto& best = sr.trials[*sr.best];
        j = {{"basin_id", basin.basin_id}, {"status", "ok"},          {"metrics", report_json(m)},
             {"chosen_point", space.to_json(best.point)}, {"best_trial", best.trial_id},
             {"best_validation_nse", best.objective},     {"trial_log", "trials.jsonl"}};
    } catch (const DataError& e) {
        j = detail::excluded_json(basin.basin_id, e.what());
    }
    detail::write_json_atomic(dir / "result.json", j);
}

// ---------------------------------------------------------------------------
// Summary

struct CorrelationResult {
    Metric slope;
    Metric intercept;
    Metric r_squared;
    double frac_negative_pairs = 0.0;
    double frac_negative_basins = 0.0;
    std::size_t n_pairs = 0;
    std::size_t n_basins = 0;
};

struct PairPoint {
    std::string basin_id;
    double pretrained_nse;
    double delta_nse;
};

/// OLS of delta-NSE on pre-trained NSE over all pairs, plus the fraction of negative
/// deltas over pairs and over per-basin averaged deltas.
inline CorrelationResult correlation_analysis(std::span<const PairPoint> pts) {
    if (pts.size() < 3) throw PreconditionError("correlation_analysis needs at least 3 results");
    CorrelationResult r;
    r.n_pairs = pts.size();
    const double n = static_cast<double>(pts.size());
    double mx = 0.0, my = 0.0;
    for (const auto& p : pts) {
        mx += p.pretrained_nse;
        my += p.delta_nse;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    std::size_t neg = 0;
    for (const auto& p : pts) {
        sxx += (p.pretrained_nse - mx) * (p.pretrained_nse - mx);
        syy += (p.delta_nse - my) * (p.delta_nse - my);
        sxy += (p.pretrained_nse - mx) * (p.delta_nse - my);
        if (p.delta_nse < 0.0) ++neg;
    }
    const bool constant_x = std::all_of(pts.begin(), pts.end(),
                                        [&](const PairPoint& p) { return p.pretrained_nse == pts.front().pretrained_nse; });
    if (!constant_x && sxx > 0.0) {
        r.slope = sxy / sxx;
        r.intercept = my - *r.slope * mx;
        if (syy > 0.0) r.r_squared = sxy * sxy / (sxx * syy);
    }
    r.frac_negative_pairs = static_cast<double>(neg) / n;

    std::map<std::string, std::pair<double, int>> per_basin;
    for (const auto& p : pts) {
        auto& [sum, cnt] = per_basin[p.basin_id];
        sum += p.delta_nse;
        ++cnt;
    }
    std::size_t neg_b = 0;
    for (const auto& [id, sc] : per_basin)
        if (sc.first / sc.second < 0.0) ++neg_b;
    r.n_basins = per_basin.size();
    r.frac_negative_basins = static_cast<double>(neg_b) / static_cast<double>(per_basin.size());
    return r;
}

inline constexpr std::array<const char*, 3> kFamilies{"single_basin", "pretrained", "finetuned"};

/// Aggregates of one model family: one (mean, median) pair per metric name.
struct FamilyStats {
    std::string family;
    std::size_t n_basins = 0;
    std::map<std::string, Aggregate> mean;
    std::map<std::string, Aggregate> median;
};

struct GroupStats {
    std::string group;
    std::size_t n_basins = 0;
    std::vector<FamilyStats> families;
    Metric mean_delta_nse;
};

struct PairRecord {
    std::uint64_t seed = 0;
    FineTuneResult result;
};

struct ExperimentSummary {
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> basins;
    std::vector<PairRecord> pairs;
    std::map<std::string, std::map<std::uint64_t, MetricReport>> single_basin; // basin -> seed -> metrics
    std::vector<FamilyStats> families;
    std::optional<CorrelationResult> correlation;
    std::vector<GroupStats> groups;
    std::vector<Exclusion> exclusions;
    std::size_t n_pairs_expected = 0;
    bool complete = true; // false when tasks were still missing

    const FamilyStats* family(std::string_view name) const {
        for (const auto& f : families)
            if (f.family == name) return &f;
        return nullptr;
    }
};

namespace detail {

/// Per-basin value of `metric` averaged over the seeds where it is present.
inline std::vector<Metric> basin_means(const std::map<std::string, std::vector<MetricReport>>& by_basin,
                                       const std::string& metric) {
    std::vector<Metric> out;
    for (const auto& [id, reports] : by_basin) {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : reports)
            if (auto v = r.get(metric)) {
                sum += *v;
                ++n;
            }
        out.push_back(n ? Metric(sum / n) : std::nullopt);
    }
    return out;
}

inline FamilyStats family_stats(const std::string& name, const std::map<std::string, std::vector<MetricReport>>& by_basin) {
    FamilyStats f;
    f.family = name;
    f.n_basins = by_basin.size();
    for (const auto* m : MetricReport::names) {
        const auto vals = basin_means(by_basin, m);
        f.mean[m] = aggregate(std::span<const Metric>(vals), AggregateKind::Mean);
        f.median[m] = aggregate(std::span<const Metric>(vals), AggregateKind::Median);
    }
    return f;
}

} // namespace detail

/// Builds the summary from result files only; missing tasks mark it incomplete.
inline ExperimentSummary build_summary(const ExperimentPlan& plan, const ResolvedPlan& rp) {
    ExperimentSummary s;
    s.seeds = plan.seeds;
    s.basins = rp.sample;
    s.n_pairs_expected = plan.seeds.size() * rp.sample.size();
    std::map<std::string, std::vector<MetricReport>> pre, ft, sb;
    for (auto seed : plan.seeds) {
        for (const auto& b : rp.sample) {
            const auto fpath = plan.task_dir(seed, "finetune", b) / "result.json";
            if (!fs::exists(fpath)) {
                s.complete = false;
            } else {
                const auto j = detail::read_json(fpath);
                if (j.at("status") == "ok") {
                    auto r = finetune_result_from_json(j);
                    pre[b].push_back(r.pretrained);
                    ft[b].push_back(r.finetuned);
                    s.pairs.push_back({seed, std::move(r)});
                } else {
                    s.exclusions.push_back({seed, b, "finetune", j.at("reason").get<std::string>()});
                }
            }
            if (!plan.runs_single_basin(seed)) continue;
            const auto spath = plan.task_dir(seed, "single_basin", b) / "result.json";
            if (!fs::exists(spath)) {
                s.complete = false;
                continue;
            }
            const auto j = detail::read_json(spath);
            if (j.at("status") == "ok") {
                auto m = report_from_json(j.at("metrics"));
                sb[b].push_back(m);
                s.single_basin[b][seed] = m;
            } else {
                s.exclusions.push_back({seed, b, "single_basin", j.at("reason").get<std::string>()});
            }
        }
    }
    if (plan.single_basin) s.families.push_back(detail::family_stats("single_basin", sb));
    s.families.push_back(detail::family_stats("pretrained", pre));
    s.families.push_back(detail::family_stats("finetuned", ft));

    std::vector<PairPoint> pts;
    for (const auto& p : s.pairs)
        if (p.result.pretrained.nse && p.result.delta_nse)
            pts.push_back({p.result.basin_id, *p.result.pretrained.nse, *p.result.delta_nse});
    if (pts.size() >= 3) s.correlation = correlation_analysis(pts);

    std::set<std::string> groups;
    for (const auto& b : rp.sample) groups.insert(basin_source(b));
    if (groups.size() > 1 || (groups.size() == 1 && !groups.begin()->empty())) {
        for (const auto& g : groups) {
            if (g.empty()) continue;
            auto pick = [&](const std::map<std::string, std::vector<MetricReport>>& m) {
                std::map<std::string, std::vector<MetricReport>> out;
                for (const auto& [id, v] : m)
                    if (basin_source(id) == g) out[id] = v;
                return out;
            };
            GroupStats gs;
            gs.group = g;
            const auto gpre = pick(pre), gft = pick(ft), gsb = pick(sb);
            gs.n_basins = gpre.size();
            if (plan.single_basin) gs.families.push_back(detail::family_stats("single_basin", gsb));
            gs.families.push_back(detail::family_stats("pretrained", gpre));
            gs.families.push_back(detail::family_stats("finetuned", gft));
            double sum = 0.0;
            int n = 0;
            for (const auto& p : pts)
                if (basin_source(p.basin_id) == g) {
                    sum += p.delta_nse;
                    ++n;
                }
            if (n) gs.mean_delta_nse = sum / n;
            s.groups.push_back(std::move(gs));
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Orchestration

struct ExperimentOutcome {
    ExperimentSummary summary;
    bool interrupted = false;
    std::size_t tasks_run = 0;     // tasks executed in this invocation
    std::size_t tasks_skipped = 0; // already complete on disk
};

namespace detail {

/// Runs `n` tasks on up to `workers` threads; task i is started in index order.
/// Stops handing out work once `stop` returns true. Returns the first exception seen.
inline void run_pool(std::size_t n, int workers, const std::function<void(std::size_t)>& task,
                     const std::function<bool()>& stop, std::atomic<bool>& stopped) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex err_mu;
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(err_mu);
                if (error || stopped) return;
                if (stop && stop()) {
                    stopped = true;
                    return;
                }
                i = next++;
            }
            if (i >= n) return;
            try {
                task(i);
            } catch (...) {
                std::lock_guard lock(err_mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    const auto nthreads = static_cast<std::size_t>(std::max(1, workers));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(nthreads, n); ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
}

} // namespace detail

inline ExperimentOutcome run_experiment(const ExperimentPlan& plan) {
    plan.validate();
    const auto rp = resolve_basins(plan);
    fs::create_directories(plan.out);

    std::set<std::string> needed(rp.sample.begin(), rp.sample.end());
    needed.insert(rp.pretrain.begin(), rp.pretrain.end());
    std::map<std::string, BasinRecord> records;
    for (const auto& id : needed) records.emplace(id, load_basin(plan.data, id));

    ExperimentOutcome outcome;
    std::atomic<bool> stopped{false};
    std::atomic<std::size_t> ran{0}, skipped{0};

    // Phase 1: one pre-trained checkpoint per seed.
    std::vector<BasinRecord> pre_recs;
    for (const auto& id : rp.pretrain) pre_recs.push_back(records.at(id));
    detail::run_pool(
        plan.seeds.size(), plan.workers,
        [&](std::size_t i) {
            const auto seed = plan.seeds[i];
            if (fs::exists(plan.pretrain_path(seed))) {
                ++skipped;
                return;
            }
            auto cfg = plan.pretrain;
            cfg.seed = seed;
            const auto r = pretrain(pre_recs, plan.split, plan.model, cfg);
            std::ostringstream hist;
            r.history.write_csv(hist);
            io::write_atomic(plan.seed_dir(seed) / "pretrain_history.csv", hist.str());
            save_checkpoint(r.checkpoint, plan.pretrain_path(seed));
            ++ran;
        },
        plan.should_stop, stopped);

    // Phase 2: per-(seed, basin) sweeps.
    struct Task {
        std::uint64_t seed;
        std::string basin;
        bool single;
    };
    std::vector<Task> tasks;
    for (auto seed : plan.seeds)
        for (const auto& b : rp.sample) {
            tasks.push_back({seed, b, false});
            if (plan.runs_single_basin(seed)) tasks.push_back({seed, b, true});
        }
    std::map<std::uint64_t, ModelCheckpoint> pretrained;
    if (!stopped)
        for (auto seed : plan.seeds) pretrained.emplace(seed, load_checkpoint(plan.pretrain_path(seed)));
    if (!stopped)
        detail::run_pool(
            tasks.size(), plan.workers,
            [&](std::size_t i) {
                const auto& t = tasks[i];
                const auto dir = plan.task_dir(t.seed, t.single ? "single_basin" : "finetune", t.basin);
                if (fs::exists(dir / "result.json")) {
                    ++skipped;
                    return;
                }
                if (t.single) run_single_basin_task(plan, t.seed, records.at(t.basin));
                else run_finetune_task(plan, t.seed, records.at(t.basin), pretrained.at(t.seed));
                ++ran;
            },
            plan.should_stop, stopped);

    outcome.interrupted = stopped;
    outcome.tasks_run = ran;
    outcome.tasks_skipped = skipped;
    outcome.summary = build_summary(plan, rp);
    return outcome;
}

// ---------------------------------------------------------------------------
// JSON form of the summary (no timings, so reruns compare byte for byte)

inline nlohmann::json aggregate_json(const Aggregate& a) {
    return {{"center", metric_json(a.center)},
            {"spread", metric_json(a.spread)},
            {"n_present", a.n_present},
            {"n_absent", a.n_absent}};
}

inline nlohmann::json family_json(const FamilyStats& f) {
    nlohmann::json j = {{"family", f.family},
                        {"n_basins", f.n_basins},
                        {"mean", nlohmann::json::object()},
                        {"median", nlohmann::json::object()}};
    for (const auto& [m, a] : f.mean) j["mean"][m] = aggregate_json(a);
    for (const auto& [m, a] : f.median) j["median"][m] = aggregate_json(a);
    return j;
}

inline nlohmann::json summary_json(const ExperimentSummary& s) {
    nlohmann::json j;
    j["seeds"] = s.seeds;
    j["basins"] = s.basins;
    j["complete"] = s.complete;
    j["n_pairs_expected"] = s.n_pairs_expected;
    j["n_pairs"] = s.pairs.size();
    j["families"] = nlohmann::json::array();
    for (const auto& f : s.families) j["families"].push_back(family_json(f));
    if (s.correlation) {
        const auto& c = *s.correlation;
        j["correlation"] = {{"slope", metric_json(c.slope)},
                            {"intercept", metric_json(c.intercept)},
                            {"r_squared", metric_json(c.r_squared)},
                            {"frac_negative_pairs", c.frac_negative_pairs},
                            {"frac_negative_basins", c.frac_negative_basins},
                            {"n_pairs", c.n_pairs},
                            {"n_basins", c.n_basins}};
    } else {
        j["correlation"] = nullptr;
    }
    j["groups"] = nlohmann::json::array();
    for (const auto& g : s.groups) {
        nlohmann::json gj = {{"group", g.group}, {"n_basins", g.n_basins}, {"mean_delta_nse", metric_json(g.mean_delta_nse)}};
        gj["families"] = nlohmann::json::array();
        for (const auto& f : g.families) gj["families"].push_back(family_json(f));
        j["groups"].push_back(gj);
    }
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : s.pairs) {
        auto pj = to_json(p.result);
        pj["seed"] = p.seed;
        j["pairs"].push_back(pj);
    }
    j["single_basin"] = nlohmann::json::object();
    for (const auto& [b, per_seed] : s.single_basin)
        for (const auto& [seed, m] : per_seed) j["single_basin"][b][std::to_string(seed)] = report_json(m);
    j["exclusions"] = nlohmann::json::array();
    for (const auto& e : s.exclusions)
        j["exclusions"].push_back({{"seed", e.seed}, {"basin_id", e.basin_id}, {"kind", e.kind}, {"reason", e.reason}});
    return j;
}

inline Aggregate aggregate_from_json(const nlohmann::json& j) {
    return {metric_from_json(j.at("center")), metric_from_json(j.at("spread")), j.at("n_present").get<std::size_t>(),
            j.at("n_absent").get<std::size_t>()};
}

inline FamilyStats family_from_json(const nlohmann::json& j) {
    FamilyStats f;
    f.family = j.at("family").get<std::string>();
    f.n_basins = j.at("n_basins").get<std::size_t>();
    for (const auto& [m, a] : j.at("mean").items()) f.mean[m] = aggregate_from_json(a);
    for (const auto& [m, a] : j.at("median").items()) f.median[m] = aggregate_from_json(a);
    return f;
}

inline ExperimentSummary summary_from_json(const nlohmann::json& j) {
    ExperimentSummary s;
    s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.basins = j.at("basins").get<std::vector<std::string>>();
    s.complete = j.at("complete").get<bool>();
    s.n_pairs_expected = j.at("n_pairs_expected").get<std::size_t>();
    for (const auto& f : j.at("families")) s.families.push_back(family_from_json(f));
    if (!j.at("correlation").is_null()) {
        const auto& c = j.at("correlation");
        CorrelationResult r;
        r.slope = metric_from_json(c.at("slope"));
        r.intercept = metric_from_json(c.at("intercept"));
        r.r_squared = metric_from_json(c.at("r_squared"));
        r.frac_negative_pairs = c.at("frac_negative_pairs").get<double>();
        r.frac_negative_basins = c.at("frac_negative_basins").get<double>();
        r.n_pairs = c.at("n_pairs").get<std::size_t>();
        r.n_basins = c.at("n_basins").get<std::size_t>();
        s.correlation = r;
    }
    for (const auto& gj : j.at("groups")) {
        GroupStats g;
        g.group = gj.at("group").get<std::string>();
        g.n_basins = gj.at("n_basins").get<std::size_t>();
        g.mean_delta_nse = metric_from_json(gj.at("mean_delta_nse"));
        for (const auto& f : gj.at("families")) g.families.push_back(family_from_json(f));
        s.groups.push_back(std::move(g));
    }
    for (const auto& pj : j.at("pairs")) s.pairs.push_back({pj.at("seed").get<std::uint64_t>(), finetune_result_from_json(pj)});
    for (const auto& [b, per_seed] : j.at("single_basin").items())
        for (const auto& [seed, m] : per_seed.items()) s.single_basin[b][std::stoull(seed)] = report_from_json(m);
    for (const auto& e : j.at("exclusions"))
        s.exclusions.push_back({e.at("seed").get<std::uint64_t>(), e.at("basin_id").get<std::string>(),
                                e.at("kind").get<std::string>(), e.at("reason").get<std::string>()});
    return s;
}

} // namespace fineflood
