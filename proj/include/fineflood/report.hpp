#pragma once

// Report files written by render_report:
//   comparison.csv  one row per model family; for every metric m the columns
//                   m_mean, m_mean_spread, m_median, m_median_spread, m_n
//   comparison.md   NSE/KGE headline table and the full metric table; best value
//                   per column in bold, second best in italics
//   scatter.csv     seed, basin_id, group, pretrained_nse, delta_nse (one row per pair)
//   groups.csv      group, n_basins, family, nse_mean, nse_median, kge_mean, kge_median,
//                   mean_delta_nse (omitted when there are no group labels)
//   summary.json    the full ExperimentSummary

#include "fineflood/experiment.hpp"

#include <cstdio>

namespace fineflood {

inline std::string family_label(std::string_view f) {
    if (f == "single_basin") return "Single-basin";
    if (f == "pretrained") return "Pre-trained";
    if (f == "finetuned") return "Fine-tuned";
    return std::string(f);
}

/// Smaller is better after this transform.
inline double badness(std::string_view metric, double v) {
    if (metric == "nse" || metric == "kge" || metric == "pearson_r") return -v;
    if (metric == "alpha_nse" || metric == "beta_kge") return std::abs(v - 1.0);
    if (metric == "beta_nse") return std::abs(v);
    return v;
}

enum class Mark { None, Best, Second };

/// Best (ties share) and second-best distinct value per column.
inline std::vector<Mark> rank_marks(std::string_view metric, const std::vector<Metric>& column) {
    std::vector<double> scores;
    for (const auto& v : column)
        if (v) scores.push_back(badness(metric, *v));
    std::sort(scores.begin(), scores.end());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
    std::vector<Mark> out;
    for (const auto& v : column) {
        if (!v || scores.empty()) out.push_back(Mark::None);
        else if (badness(metric, *v) == scores[0]) out.push_back(Mark::Best);
        else if (scores.size() > 1 && badness(metric, *v) == scores[1]) out.push_back(Mark::Second);
        else out.push_back(Mark::None);
    }
    return out;
}

inline std::string fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

inline std::string markdown_cell(const Aggregate& a, Mark mark) {
    if (!a.center) return "n/a";
    std::string v = fixed3(*a.center);
    if (mark == Mark::Best) v = "**" + v + "**";
    if (mark == Mark::Second) v = "*" + v + "*";
    if (a.spread) v += " (± " + fixed3(*a.spread) + ")";
    return v;
}

namespace detail {

struct Column {
    std::string metric;
    bool median;
    std::string title;
};

inline std::string markdown_table(const std::vector<FamilyStats>& fams, const std::vector<Column>& cols) {
    std::ostringstream md;
    md << "| Model |";
    for (const auto& c : cols) md << ' ' << c.title << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < cols.size(); ++i) md << "---|";
    md << '\n';
    std::vector<std::vector<Mark>> marks;
    for (const auto& c : cols) {
        std::vector<Metric> column;
        for (const auto& f : fams) column.push_back((c.median ? f.median : f.mean).at(c.metric).center);
        marks.push_back(rank_marks(c.metric, column));
    }
    for (std::size_t r = 0; r < fams.size(); ++r) {
        md << "| " << family_label(fams[r].family) << " |";
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const auto& c = cols[k];
            md << ' ' << markdown_cell((c.median ? fams[r].median : fams[r].mean).at(c.metric), marks[k][r]) << " |";
        }
        md << '\n';
    }
    return md.str();
}

inline std::string opt_str(const Metric& m) { return m ? format_double(*m) : std::string{}; }

} // namespace detail

/// Headline table: NSE and KGE, mean and median.
inline std::string render_headline_markdown(const std::vector<FamilyStats>& fams) {
    return detail::markdown_table(fams, {{"nse", false, "NSE (mean)"},
                                         {"nse", true, "NSE (median)"},
                                         {"kge", false, "KGE (mean)"},
                                         {"kge", true, "KGE (median)"}});
}

inline std::string render_comparison_csv(const std::vector<FamilyStats>& fams) {
    std::ostringstream out;
    csv::Writer w(out);
    std::vector<std::string> header{"model", "n_basins"};
    for (const auto* m : MetricReport::names)
        for (const auto* suffix : {"_mean", "_mean_spread", "_median", "_median_spread", "_n"})
            header.push_back(std::string(m) + suffix);
    w.row(header);
    for (const auto& f : fams) {
        std::vector<std::string> row{f.family, std::to_string(f.n_basins)};
        for (const auto* m : MetricReport::names) {
            const auto& a = f.mean.at(m);
            const auto& b = f.median.at(m);
            row.push_back(detail::opt_str(a.center));
            row.push_back(detail::opt_str(a.spread));
            row.push_back(detail::opt_str(b.center));
            row.push_back(detail::opt_str(b.spread));
            row.push_back(std::to_string(a.n_present));
        }
        w.row(row);
    }
    return out.str();
}

inline std::string render_markdown(const ExperimentSummary& s) {
    std::ostringstream md;
    md << "# Experiment report\n\n";
    md << "Seeds: " << s.seeds.size() << ", basins: " << s.basins.size() << ", fine-tuning pairs: " << s.pairs.size()
       << " of " << s.n_pairs_expected << (s.complete ? "" : " (incomplete)") << "\n\n";
    md << "## Model comparison\n\nBest score in bold, second best in italics.\n\n";
    md << render_headline_markdown(s.families) << '\n';
    md << "## All metrics\n\n";
    std::vector<detail::Column> cols;
    for (const auto* m : MetricReport::names) {
        cols.push_back({m, false, std::string(m) + " (mean)"});
        cols.push_back({m, true, std::string(m) + " (median)"});
    }
    md << detail::markdown_table(s.families, cols) << '\n';
    if (s.correlation) {
        const auto& c = *s.correlation;
        md << "## Improvement vs pre-trained skill\n\n";
        md << "| slope | intercept | R^2 | negative pairs | negative basins |\n|---|---|---|---|---|\n";
        md << "| " << (c.slope ? fixed3(*c.slope) : "n/a") << " | " << (c.intercept ? fixed3(*c.intercept) : "n/a")
           << " | " << (c.r_squared ? fixed3(*c.r_squared) : "n/a") << " | " << fixed3(c.frac_negative_pairs) << " | "
           << fixed3(c.frac_negative_basins) << " |\n\n";
    }
    if (!s.groups.empty()) {
        md << "## By group\n\n";
        for (const auto& g : s.groups) {
            md << "### " << g.group << " (" << g.n_basins << " basins)\n\n" << render_headline_markdown(g.families) << '\n';
        }
    }
    if (!s.exclusions.empty()) {
        md << "## Exclusions\n\n| seed | basin | kind | reason |\n|---|---|---|---|\n";
        for (const auto& e : s.exclusions)
            md << "| " << e.seed << " | " << e.basin_id << " | " << e.kind << " | " << e.reason << " |\n";
        md << '\n';
    }
    return md.str();
}

inline std::string render_scatter_csv(const ExperimentSummary& s) {
    std::ostringstream out;
    csv::Writer w(out);
    w.row({"seed", "basin_id", "group", "pretrained_nse", "delta_nse"});
    for (const auto& p : s.pairs) {
        if (!p.result.pretrained.nse || !p.result.delta_nse) continue;
        w.row({std::to_string(p.seed), p.result.basin_id, basin_source(p.result.basin_id),
               format_double(*p.result.pretrained.nse), format_double(*p.result.delta_nse)});
    }
    return out.str();
}

inline std::string render_groups_csv(const ExperimentSummary& s) {
    std::ostringstream out;
    csv::Writer w(out);
    w.row({"group", "n_basins", "family", "nse_mean", "nse_median", "kge_mean", "kge_median", "mean_delta_nse"});
    for (const auto& g : s.groups)
        for (const auto& f : g.families)
            w.row({g.group, std::to_string(g.n_basins), f.family, detail::opt_str(f.mean.at("nse").center),
                   detail::opt_str(f.median.at("nse").center), detail::opt_str(f.mean.at("kge").center),
                   detail::opt_str(f.median.at("kge").center), detail::opt_str(g.mean_delta_nse)});
    return out.str();
}

/// Writes the report files into `dir` and returns their paths.
inline std::vector<fs::path> render_report(const ExperimentSummary& s, const fs::path& dir) {
    std::vector<fs::path> written;
    auto put = [&](const char* name, const std::string& content) {
        io::write_atomic(dir / name, content);
        written.push_back(dir / name);
    };
    put("comparison.csv", render_comparison_csv(s.families));
    put("comparison.md", render_markdown(s));
    put("scatter.csv", render_scatter_csv(s));
    if (!s.groups.empty()) put("groups.csv", render_groups_csv(s));
    put("summary.json", summary_json(s).dump(1) + "\n");
    return written;
}

} // namespace fineflood
