// fineflood command-line interface.
//
// Exit codes: 0 success, 1 fatal configuration/data error, 2 partial failure
// (some basins excluded or failed).

#include "fineflood/fineflood.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace fineflood;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string out;
};

RunConfig load_run_config(const Globals& g) {
    RunConfig rc = g.config.empty() ? parse_config(nlohmann::json::object()) : load_config(g.config);
    rc.data = complete_data_spec(rc.data);
    rc.experiment.data = rc.data;
    if (g.seed) {
        rc.train.seed = *g.seed;
        rc.finetune.seed = *g.seed;
        rc.sweep.seed = *g.seed;
        for (std::size_t i = 0; i < rc.experiment.seeds.size(); ++i)
            rc.experiment.seeds[i] = *g.seed + static_cast<std::uint64_t>(i);
    }
    if (g.workers) rc.experiment.workers = *g.workers;
    if (!g.out.empty()) rc.experiment.out = g.out;
    return rc;
}

fs::path require_out(const Globals& g) {
    if (g.out.empty()) throw DataError("--out is required for this command");
    fs::create_directories(g.out);
    return g.out;
}

void require_root(const DataSpec& spec) {
    if (spec.data_root.empty()) throw DataError("config: data.root is not set");
}

void write_history(const TrainHistory& h, const fs::path& path) {
    std::ostringstream s;
    h.write_csv(s);
    io::write_atomic(path, s.str());
}

void write_json(const fs::path& path, const nlohmann::json& j) { io::write_atomic(path, j.dump(1) + "\n"); }

std::vector<BasinRecord> load_all(const DataSpec& spec, const std::vector<std::string>& ids) {
    std::vector<BasinRecord> recs;
    for (const auto& id : ids) recs.push_back(load_basin(spec, id));
    return recs;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Globals& g, int basins, int days, const std::vector<std::string>& sources) {
    SyntheticFamily fam;
    fam.n_basins = basins;
    fam.n_days = days;
    fam.seed = g.seed.value_or(0);
    if (!sources.empty()) fam.sources = sources;
    const auto out = require_out(g);
    const auto fam_out = gen_family(fam, out);
    std::cout << "wrote " << fam_out.basins.size() << " basins (" << days << " days) to " << out.string() << "\n";
    return 0;
}

int cmd_ingest_check(const Globals& g) {
    const auto rc = load_run_config(g);
    require_root(rc.data);
    const auto ids = list_basins(rc.data.data_root);
    int failed = 0;
    std::cout << "basin_id,n_days,first,last,missing_flow,train_windows,valid_windows,test_windows\n";
    std::vector<BasinRecord> ok;
    for (const auto& id : ids) {
        try {
            ok.push_back(load_basin(rc.data, id));
        } catch (const DataError& e) {
            std::cerr << "error: " << e.what() << "\n";
            ++failed;
        }
    }
    if (ok.empty()) throw DataError("no loadable basins under " + rc.data.data_root.string());
    const auto scalers = compute_scalers(ok, rc.split);
    for (const auto& r : ok) {
        std::size_t missing = 0;
        for (Eigen::Index i = 0; i < r.streamflow.size(); ++i) missing += std::isfinite(r.streamflow(i)) ? 0 : 1;
        std::cout << r.basin_id << ',' << r.n_days() << ',' << format_date(r.dates.front()) << ','
                  << format_date(r.dates.back()) << ',' << missing;
        for (auto sub : {Subset::Train, Subset::Valid, Subset::Test})
            std::cout << ',' << build_windows(r, scalers, rc.split.period(r, sub), rc.model.seq_len).size();
        std::cout << '\n';
    }
    return failed ? 2 : 0;
}

int cmd_pretrain(const Globals& g) {
    const auto rc = load_run_config(g);
    require_root(rc.data);
    const auto out = require_out(g);
    const auto ids =
        rc.experiment.pretrain_basins.empty() ? list_basins(rc.data.data_root) : rc.experiment.pretrain_basins;
    const auto recs = load_all(rc.data, ids);
    const auto r = pretrain(recs, rc.split, rc.model, rc.train);
    save_checkpoint(r.checkpoint, out / "pretrain.ckpt");
    write_history(r.history, out / "history.csv");
    std::cout << "pre-trained on " << recs.size() << " basins; checkpoint " << (out / "pretrain.ckpt").string() << "\n";
    return 0;
}

int cmd_train_single(const Globals& g, const std::string& basin, int hidden) {
    const auto rc = load_run_config(g);
    require_root(rc.data);
    const auto out = require_out(g);
    const auto rec = load_basin(rc.data, basin);
    auto base = rc.model;
    const auto r = train_single_basin(rec, rc.split, rc.train, hidden, base);
    if (!r.trainable) {
        write_json(out / "result.json", {{"basin_id", basin}, {"status", "untrainable"}, {"reason", r.reason}});
        std::cerr << basin << ": untrainable basin (" << r.reason << ")\n";
        return 2;
    }
    save_checkpoint(r.result.checkpoint, out / "model.ckpt");
    write_history(r.result.history, out / "history.csv");
    const auto m = evaluate_checkpoint(r.result.checkpoint, rec, rc.split.period(rec, Subset::Test), rc.peaks);
    write_json(out / "result.json", {{"basin_id", basin}, {"status", "ok"}, {"test_metrics", report_json(m)}});
    std::cout << basin << ": test NSE " << (m.nse ? format_double(*m.nse) : "n/a") << "\n";
    return 0;
}

int cmd_finetune(const Globals& g, const std::string& ckpt_path, const std::string& basin) {
    const auto rc = load_run_config(g);
    require_root(rc.data);
    const auto out = require_out(g);
    const auto pre = load_checkpoint(ckpt_path);
    const auto rec = load_basin(rc.data, basin);
    const auto ft = finetune(pre, rec, rc.split, rc.finetune);
    if (!ft.tunable) {
        write_json(out / "result.json", {{"basin_id", basin}, {"status", "untunable"}, {"reason", ft.reason}});
        std::cerr << basin << ": untunable basin (" << ft.reason << ")\n";
        return 2;
    }
    save_checkpoint(ft.result.checkpoint, out / "finetuned.ckpt");
    write_history(ft.result.history, out / "history.csv");
    auto res = evaluate_pair(pre, ft.result.checkpoint, rec, rc.split.period(rec, Subset::Test), rc.peaks);
    res.chosen_config = rc.finetune;
    write_json(out / "result.json", to_json(res));
    std::cout << basin << ": delta NSE " << (res.delta_nse ? format_double(*res.delta_nse) : "n/a") << "\n";
    return 0;
}

int cmd_sweep(const Globals& g, const std::string& ckpt_path, const std::string& basin, std::optional<int> trials,
              const std::string& space_name) {
    const auto rc = load_run_config(g);
    require_root(rc.data);
    const auto out = require_out(g);
    const auto rec = load_basin(rc.data, basin);
    auto so = rc.sweep;
    if (trials) so.n_trials = *trials;
    so.log_path = out / "trials.jsonl";
    SweepResult sr;
    SearchSpace space;
    std::optional<ModelCheckpoint> pre;
    if (space_name == "fine-tune") {
        if (ckpt_path.empty()) throw DataError("--checkpoint is required for the fine-tune space");
        pre = load_checkpoint(ckpt_path);
        space = SearchSpace::fine_tune();
        sr = run_sweep(
            space, [&](const Point& p, std::uint64_t s) { return sweep_objective(*pre, rec, rc.split, space, p, s, rc.selection); },
            so, basin);
    } else {
        space = SearchSpace::single_basin();
        sr = run_sweep(
            space,
            [&](const Point& p, std::uint64_t s) {
                return single_basin_objective(rec, rc.split, space, p, s, rc.train.batch_size, rc.selection, rc.model);
            },
            so, basin);
    }
    const auto* best = sr.best_trial();
    if (!best) {
        write_json(out / "result.json", {{"basin_id", basin}, {"status", "failed"}, {"reason", "all trials failed"}});
        std::cerr << basin << ": all " << sr.trials.size() << " trials failed\n";
        return 2;
    }
    nlohmann::json j = {{"basin_id", basin},
                        {"status", "ok"},
                        {"space", space_name},
                        {"best_trial", best->trial_id},
                        {"best_point", space.to_json(best->point)},
                        {"best_validation", best->objective},
                        {"n_trials", sr.trials.size()}};
    if (sr.best_checkpoint) {
        save_checkpoint(*sr.best_checkpoint, out / "best.ckpt");
        const auto test = rc.split.period(rec, Subset::Test);
        if (pre) j["test"] = to_json(evaluate_pair(*pre, *sr.best_checkpoint, rec, test, rc.peaks));
        else j["test_metrics"] = report_json(evaluate_checkpoint(*sr.best_checkpoint, rec, test, rc.peaks));
    }
    write_json(out / "result.json", j);
    std::cout << basin << ": best trial " << best->trial_id << " validation " << format_double(best->objective) << "\n";
    return 0;
}

/// Reads `date,obs,sim` (one basin per file), or a pair of `date,value` files.
HydrographPair read_pair_file(const fs::path& path) {
    const auto t = csv::read(path);
    const auto dc = t.column("date"), oc = t.column("obs"), sc = t.column("sim");
    if (!dc || !oc || !sc) throw DataError(path.string() + ": expected date, obs and sim columns");
    const auto d = *dc, o = *oc, s = *sc;
    HydrographPair p;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        p.dates.push_back(parse_date_or_throw(t.rows[r][d], path.string()));
        const auto ov = parse_double(t.rows[r][o]);
        const auto sv = parse_double(t.rows[r][s]);
        if (!ov || !sv) throw DataError(path.string() + ":" + std::to_string(t.line_numbers[r]) + ": non-numeric value");
        p.obs.push_back(*ov);
        p.sim.push_back(*sv);
    }
    return p;
}

HydrographPair read_paired_files(const fs::path& obs, const fs::path& sim) {
    auto series = [](const fs::path& path) {
        const auto t = csv::read(path);
        if (t.header.size() < 2) throw DataError(path.string() + ": expected date and value columns");
        std::map<Date, double> m;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const auto v = parse_double(t.rows[r][1]);
            if (!v) throw DataError(path.string() + ":" + std::to_string(t.line_numbers[r]) + ": non-numeric value");
            m[parse_date_or_throw(t.rows[r][0], path.string())] = *v;
        }
        return m;
    };
    const auto o = series(obs), s = series(sim);
    HydrographPair p;
    for (const auto& [date, v] : o) {
        const auto it = s.find(date);
        if (it == s.end()) continue;
        p.dates.push_back(date);
        p.obs.push_back(v);
        p.sim.push_back(it->second);
    }
    if (p.dates.empty()) throw DataError("observed and simulated files share no dates");
    return p;
}

int cmd_evaluate(const Globals& g, const std::vector<std::string>& pair_files, const std::string& obs,
                 const std::string& sim) {
    const auto rc = g.config.empty() ? RunConfig{} : load_config(g.config);
    std::vector<std::pair<std::string, HydrographPair>> pairs;
    for (const auto& f : pair_files) pairs.emplace_back(fs::path(f).stem().string(), read_pair_file(f));
    if (!obs.empty() || !sim.empty()) {
        if (obs.empty() || sim.empty()) throw DataError("--obs and --sim must be given together");
        pairs.emplace_back(fs::path(obs).stem().string(), read_paired_files(obs, sim));
    }
    if (pairs.empty()) throw DataError("nothing to evaluate: give --pairs files or --obs/--sim");
    nlohmann::json j = nlohmann::json::object();
    std::ostringstream rows;
    csv::Writer w(rows);
    std::vector<std::string> header{"basin_id"};
    for (const auto* n : MetricReport::names) header.emplace_back(n);
    header.emplace_back("n_samples");
    w.row(header);
    for (const auto& [id, p] : pairs) {
        const auto m = compute_metrics(p, rc.peaks);
        j[id] = report_json(m);
        std::vector<std::string> row{id};
        for (const auto& v : m.values()) row.push_back(v ? format_double(*v) : "");
        row.push_back(std::to_string(m.n_samples));
        w.row(row);
    }
    if (g.out.empty()) {
        std::cout << j.dump(1) << "\n";
    } else {
        const auto out = require_out(g);
        write_json(out / "metrics.json", j);
        io::write_atomic(out / "metrics.csv", rows.str());
    }
    return 0;
}

int report_and_exit_code(const ExperimentSummary& s, const fs::path& dir) {
    const auto files = render_report(s, dir);
    for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
    if (!s.exclusions.empty()) {
        std::cerr << s.exclusions.size() << " exclusion(s):\n";
        for (const auto& e : s.exclusions)
            std::cerr << "  seed " << e.seed << " " << e.basin_id << " [" << e.kind << "]: " << e.reason << "\n";
        return 2;
    }
    return 0;
}

int cmd_experiment(const Globals& g) {
    const auto rc = load_run_config(g);
    require_root(rc.data);
    const auto out = run_experiment(rc.experiment);
    std::cout << "tasks run: " << out.tasks_run << ", already complete: " << out.tasks_skipped << "\n";
    return report_and_exit_code(out.summary, rc.experiment.out / "report");
}

int cmd_report(const Globals& g, const std::string& summary_path) {
    if (!summary_path.empty()) {
        const auto s = summary_from_json(nlohmann::json::parse(io::read_text(summary_path)));
        return report_and_exit_code(s, require_out(g));
    }
    const auto rc = load_run_config(g);
    require_root(rc.data);
    const auto& plan = rc.experiment;
    if (plan.out.empty()) throw DataError("report needs --out or experiment.out to locate results");
    const auto s = build_summary(plan, resolve_basins(plan));
    if (!s.complete) warn("some tasks have no results yet; the report covers completed tasks only");
    return report_and_exit_code(s, plan.out / "report");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pre-train, fine-tune and evaluate LSTM streamflow models"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    std::uint64_t seed = 0;
    int workers = 1;
    app.add_option("--config", g.config, "JSON configuration file");
    auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config)");
    auto* workers_opt = app.add_option("--workers", workers, "Worker threads for experiment tasks")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "Output directory");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic basin family in the Caravan layout");
    int n_basins = 8, n_days = 3 * 365;
    std::vector<std::string> sources;
    synth->add_option("--basins", n_basins, "Number of basins")->check(CLI::PositiveNumber);
    synth->add_option("--days", n_days, "Days per basin (>= 730)");
    synth->add_option("--sources", sources, "Source prefixes assigned round-robin")->delimiter(',');

    auto* ingest = app.add_subcommand("ingest-check", "Load every basin and report windows per split");

    auto* pre = app.add_subcommand("pretrain", "Pre-train one model on all (or the configured) basins");

    auto* single = app.add_subcommand("train-single", "Train a fresh model on one basin");
    std::string basin;
    int hidden = 32;
    single->add_option("--basin", basin, "Basin id")->required();
    single->add_option("--hidden", hidden, "Hidden size")->check(CLI::IsMember({16, 32, 64}));

    auto* ft = app.add_subcommand("finetune", "Fine-tune a checkpoint on one basin");
    std::string ckpt;
    ft->add_option("--checkpoint", ckpt, "Pre-trained checkpoint")->required()->check(CLI::ExistingFile);
    ft->add_option("--basin", basin, "Basin id")->required();

    auto* sweep = app.add_subcommand("sweep", "TPE hyperparameter sweep for one basin");
    std::optional<int> trials;
    std::string space = "fine-tune";
    sweep->add_option("--checkpoint", ckpt, "Pre-trained checkpoint (fine-tune space)")->check(CLI::ExistingFile);
    sweep->add_option("--basin", basin, "Basin id")->required();
    sweep->add_option("--trials", trials, "Number of trials")->check(CLI::PositiveNumber);
    sweep->add_option("--space", space, "Search space")->check(CLI::IsMember({"fine-tune", "single-basin"}));

    auto* eval = app.add_subcommand("evaluate", "Compute the metric suite for hydrograph files");
    std::vector<std::string> pair_files;
    std::string obs, sim;
    eval->add_option("--pairs", pair_files, "CSV files with date,obs,sim columns (basin id = file stem)")
        ->check(CLI::ExistingFile);
    eval->add_option("--obs", obs, "Observed date,value CSV")->check(CLI::ExistingFile);
    eval->add_option("--sim", sim, "Simulated date,value CSV")->check(CLI::ExistingFile);

    auto* exp = app.add_subcommand("experiment", "Run (or resume) the multi-seed experiment");

    auto* rep = app.add_subcommand("report", "Render report files from experiment results");
    std::string summary_path;
    rep->add_option("--summary", summary_path, "Render from a summary.json instead of the result tree")
        ->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (*seed_opt) g.seed = seed;
    if (*workers_opt) g.workers = workers;

    try {
        if (*synth) return cmd_synth(g, n_basins, n_days, sources);
        if (*ingest) return cmd_ingest_check(g);
        if (*pre) return cmd_pretrain(g);
        if (*single) return cmd_train_single(g, basin, hidden);
        if (*ft) return cmd_finetune(g, ckpt, basin);
        if (*sweep) return cmd_sweep(g, ckpt, basin, trials, space);
        if (*eval) return cmd_evaluate(g, pair_files, obs, sim);
        if (*exp) return cmd_experiment(g);
        if (*rep) return cmd_report(g, summary_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
