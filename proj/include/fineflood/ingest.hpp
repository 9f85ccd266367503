#pragma once

// Caravan-layout ingestion: basin discovery, loading, train/valid/test splits,
// pooled z-score scalers and 365-day lookback windows.
//
// Directory layout:
//   <root>/timeseries/csv/<source>/<basin_id>.csv     date + dynamic columns + target
//   <root>/attributes/<source>/attributes_*.csv       gauge_id + static attributes
// A basin id is `<source>_<gauge>`; the source is everything before the first '_'.

#include "fineflood/common.hpp"
#include "fineflood/csv.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace fineflood {

inline constexpr int kLookbackDays = 365;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Which columns to read; mirrors the `data_root`, `dynamic_inputs`, `target`
/// and `static_attributes` config keys.
struct DataSpec {
    std::filesystem::path data_root;
    std::vector<std::string> dynamic_inputs;
    std::string target = "streamflow";
    std::vector<std::string> static_attributes;
};

struct BasinRecord {
    std::string basin_id;
    std::vector<Date> dates;
    RowMatrix dynamic;         // n_days x n_dyn, NaN = missing
    Eigen::VectorXd streamflow; // n_days, NaN = missing
    Eigen::VectorXd statics;    // n_stat
    std::vector<std::string> dynamic_names;
    std::vector<std::string> static_names;

    std::size_t n_days() const { return dates.size(); }

    /// Index of `d`, or nullopt if outside the record.
    std::optional<std::size_t> index_of(Date d) const {
        if (dates.empty()) return std::nullopt;
        const long off = days_between(dates.front(), d);
        if (off < 0 || off >= static_cast<long>(dates.size())) return std::nullopt;
        return static_cast<std::size_t>(off);
    }
};

struct Period {
    Date start;
    Date end; // inclusive

    bool contains(Date d) const { return d >= start && d <= end; }
    bool operator==(const Period&) const = default;
};

struct SplitConfig {
    Period train;
    Period valid;
    Period test;

    void validate() const {
        for (const Period* p : {&train, &valid, &test})
            if (p->end < p->start) throw DataError("split period ends before it starts");
        if (!(train.end < valid.start && valid.end < test.start))
            throw DataError("split periods must be non-overlapping and ordered train < valid < test");
    }
    bool operator==(const SplitConfig&) const = default;
};

enum class Subset { Train, Valid, Test };

inline const char* to_string(Subset s) {
    switch (s) {
    case Subset::Train: return "train";
    case Subset::Valid: return "valid";
    case Subset::Test: return "test";
    }
    return "?";
}

/// Either fixed calendar periods, or a chronological per-basin fraction split (default 60/20/20).
struct SplitPolicy {
    std::optional<SplitConfig> fixed;
    double train_fraction = 0.6;
    double valid_fraction = 0.2;

    SplitConfig resolve(const BasinRecord& rec) const {
        if (fixed) return *fixed;
        const auto n = static_cast<long>(rec.n_days());
        if (n < 3) throw DataError(rec.basin_id + ": too few days for a chronological split");
        const long n_train = static_cast<long>(std::floor(train_fraction * static_cast<double>(n)));
        const long n_valid_end = static_cast<long>(std::floor((train_fraction + valid_fraction) * static_cast<double>(n)));
        const Date d0 = rec.dates.front();
        using std::chrono::days;
        SplitConfig s{{d0, d0 + days(n_train - 1)},
                      {d0 + days(n_train), d0 + days(n_valid_end - 1)},
                      {d0 + days(n_valid_end), d0 + days(n - 1)}};
        return s;
    }

    Period period(const BasinRecord& rec, Subset which) const {
        const auto s = resolve(rec);
        return which == Subset::Train ? s.train : which == Subset::Valid ? s.valid : s.test;
    }
};

// ---------------------------------------------------------------------------
// Discovery and loading

inline std::string basin_source(std::string_view basin_id) {
    const auto pos = basin_id.find('_');
    return std::string(pos == std::string_view::npos ? basin_id : basin_id.substr(0, pos));
}

namespace detail {

inline std::vector<std::filesystem::path> attribute_files(const std::filesystem::path& root, const std::string& source) {
    std::vector<std::filesystem::path> files;
    const auto dir = root / "attributes" / source;
    if (!std::filesystem::is_directory(dir)) return files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.starts_with("attributes_") && e.path().extension() == ".csv")
            files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

/// Merged attribute columns for every gauge of one source.
inline std::map<std::string, std::map<std::string, std::string>> read_attributes(const std::filesystem::path& root,
                                                                                const std::string& source) {
    std::map<std::string, std::map<std::string, std::string>> out;
    for (const auto& f : attribute_files(root, source)) {
        const auto table = csv::read(f);
        const auto id_col = table.column("gauge_id");
        if (!id_col) throw DataError(f.string() + ": missing 'gauge_id' column");
        for (const auto& row : table.rows) {
            auto& attrs = out[row[*id_col]];
            for (std::size_t c = 0; c < row.size(); ++c)
                if (c != *id_col) attrs[table.header[c]] = row[c];
        }
    }
    return out;
}

} // namespace detail

/// Every basin with both a time-series file and attribute rows, sorted.
inline std::vector<std::string> list_basins(const std::filesystem::path& data_root) {
    if (!std::filesystem::is_directory(data_root)) throw DataError("data root does not exist: " + data_root.string());
    const auto ts_root = data_root / "timeseries" / "csv";
    std::vector<std::string> ids;
    if (!std::filesystem::is_directory(ts_root)) return ids;

    std::vector<std::filesystem::path> sources;
    for (const auto& e : std::filesystem::directory_iterator(ts_root))
        if (e.is_directory()) sources.push_back(e.path());
    std::sort(sources.begin(), sources.end());

    for (const auto& src_dir : sources) {
        const auto source = src_dir.filename().string();
        const auto attrs = detail::read_attributes(data_root, source);
        for (const auto& e : std::filesystem::directory_iterator(src_dir)) {
            if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
            const auto id = e.path().stem().string();
            if (attrs.contains(id))
                ids.push_back(id);
            else
                warn("basin " + id + " has a time series but no attribute rows; skipped");
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline BasinRecord load_basin(const DataSpec& spec, const std::string& basin_id) {
    const auto source = basin_source(basin_id);
    const auto ts_path = spec.data_root / "timeseries" / "csv" / source / (basin_id + ".csv");
    const auto table = csv::read(ts_path);

    const auto date_col = table.column("date");
    if (!date_col) throw DataError(ts_path.string() + ": missing column 'date'");
    std::vector<std::size_t> dyn_cols;
    for (const auto& name : spec.dynamic_inputs) {
        const auto c = table.column(name);
        if (!c) throw DataError(ts_path.string() + ": missing column '" + name + "'");
        dyn_cols.push_back(*c);
    }
    const auto flow_col = table.column(spec.target);
    if (!flow_col) throw DataError(ts_path.string() + ": missing column '" + spec.target + "'");

    auto cell = [&](std::size_t r, std::size_t c) {
        auto v = parse_double(table.rows[r][c]);
        if (!v)
            throw DataError(ts_path.string() + ":" + std::to_string(table.line_numbers[r]) + ": non-numeric value '" +
                            table.rows[r][c] + "' in column '" + table.header[c] + "'");
        return *v;
    };

    BasinRecord rec;
    rec.basin_id = basin_id;
    rec.dynamic_names = spec.dynamic_inputs;
    rec.static_names = spec.static_attributes;
    if (table.rows.empty()) throw DataError(ts_path.string() + ": no data rows");

    std::vector<Date> row_dates;
    row_dates.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto d = parse_date(table.rows[r][*date_col]);
        if (!d)
            throw DataError(ts_path.string() + ":" + std::to_string(table.line_numbers[r]) + ": unparseable date '" +
                            table.rows[r][*date_col] + "'");
        if (!row_dates.empty() && *d <= row_dates.back())
            throw DataError(ts_path.string() + ":" + std::to_string(table.line_numbers[r]) +
                            ": dates must be strictly increasing");
        row_dates.push_back(*d);
    }

    // Gap-free calendar; days absent from the file stay NaN.
    const auto n_days = static_cast<std::size_t>(days_between(row_dates.front(), row_dates.back()) + 1);
    rec.dates.resize(n_days);
    for (std::size_t i = 0; i < n_days; ++i) rec.dates[i] = row_dates.front() + std::chrono::days(static_cast<long>(i));
    rec.dynamic = RowMatrix::Constant(static_cast<Eigen::Index>(n_days), static_cast<Eigen::Index>(dyn_cols.size()), kNaN);
    rec.streamflow = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_days), kNaN);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(days_between(row_dates.front(), row_dates[r]));
        for (std::size_t k = 0; k < dyn_cols.size(); ++k) rec.dynamic(i, static_cast<Eigen::Index>(k)) = cell(r, dyn_cols[k]);
        rec.streamflow(i) = cell(r, *flow_col);
    }

    const auto attrs = detail::read_attributes(spec.data_root, source);
    const auto it = attrs.find(basin_id);
    if (it == attrs.end()) throw DataError("no attribute rows for basin " + basin_id);
    rec.statics.resize(static_cast<Eigen::Index>(spec.static_attributes.size()));
    for (std::size_t k = 0; k < spec.static_attributes.size(); ++k) {
        const auto& name = spec.static_attributes[k];
        const auto a = it->second.find(name);
        if (a == it->second.end()) throw DataError(basin_id + ": missing static attribute '" + name + "'");
        const auto v = parse_double(a->second);
        if (!v || std::isnan(*v))
            throw DataError(basin_id + ": static attribute '" + name + "' is missing or non-numeric");
        rec.statics(static_cast<Eigen::Index>(k)) = *v;
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Scalers

inline constexpr double kMinStd = 1e-10;

struct ScalerSet {
    std::vector<std::string> dynamic_names;
    std::vector<std::string> static_names;
    Eigen::VectorXd dyn_mean, dyn_std;
    Eigen::VectorXd stat_mean, stat_std;
    double flow_mean = 0.0;
    double flow_std = 1.0;
    std::vector<bool> dyn_flagged, stat_flagged;
    bool flow_flagged = false;
    /// Training-period streamflow std per basin, in raw units.
    std::map<std::string, double> per_basin_flow_std;

    std::size_t n_dyn() const { return static_cast<std::size_t>(dyn_mean.size()); }
    std::size_t n_stat() const { return static_cast<std::size_t>(stat_mean.size()); }

    double standardize_flow(double q) const { return (q - flow_mean) / flow_std; }
    double destandardize_flow(double z) const { return z * flow_std + flow_mean; }

    /// s(b) for the NSE loss in standardized target units; nullopt if the basin is unknown.
    std::optional<double> basin_std_standardized(const std::string& basin_id) const {
        const auto it = per_basin_flow_std.find(basin_id);
        if (it == per_basin_flow_std.end()) return std::nullopt;
        return it->second / flow_std;
    }

    friend bool operator==(const ScalerSet& a, const ScalerSet& b) {
        auto same = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
            return x.size() == y.size() && (x.array() == y.array()).all();
        };
        return a.dynamic_names == b.dynamic_names && a.static_names == b.static_names && same(a.dyn_mean, b.dyn_mean) &&
               same(a.dyn_std, b.dyn_std) && same(a.stat_mean, b.stat_mean) && same(a.stat_std, b.stat_std) &&
               a.flow_mean == b.flow_mean && a.flow_std == b.flow_std && a.dyn_flagged == b.dyn_flagged &&
               a.stat_flagged == b.stat_flagged && a.flow_flagged == b.flow_flagged &&
               a.per_basin_flow_std == b.per_basin_flow_std;
    }
};

namespace detail {

struct Moments {
    double mean = 0.0;
    double std = 0.0;
    std::size_t n = 0;
};

/// Two-pass population moments over finite values, in input order.
template <typename Range>
Moments moments(const Range& values) {
    Moments m;
    double sum = 0.0;
    for (double v : values)
        if (std::isfinite(v)) {
            sum += v;
            ++m.n;
        }
    if (m.n == 0) return {kNaN, kNaN, 0};
    m.mean = sum / static_cast<double>(m.n);
    double ss = 0.0;
    for (double v : values)
        if (std::isfinite(v)) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(m.n));
    return m;
}

inline double guarded_std(double s, bool& flagged) {
    flagged = !(s >= kMinStd);
    return flagged ? 1.0 : s;
}

inline std::pair<std::size_t, std::size_t> period_range(const BasinRecord& rec, const Period& p) {
    if (rec.dates.empty() || p.end < rec.dates.front() || p.start > rec.dates.back()) return {0, 0};
    const auto first = static_cast<std::size_t>(std::max(0L, days_between(rec.dates.front(), p.start)));
    const auto last = static_cast<std::size_t>(
        std::min(static_cast<long>(rec.n_days()) - 1, days_between(rec.dates.front(), p.end)));
    return {first, last + 1};
}

} // namespace detail

/// Pooled z-score statistics over every record's training period only.
inline ScalerSet compute_scalers(std::span<const BasinRecord> records, const SplitPolicy& split) {
    if (records.empty()) throw PreconditionError("compute_scalers: no records");
    ScalerSet s;
    s.dynamic_names = records.front().dynamic_names;
    s.static_names = records.front().static_names;
    const auto n_dyn = records.front().dynamic.cols();
    const auto n_stat = records.front().statics.size();

    std::vector<std::vector<double>> dyn_values(static_cast<std::size_t>(n_dyn));
    std::vector<std::vector<double>> stat_values(static_cast<std::size_t>(n_stat));
    std::vector<double> flow_values;
    std::vector<std::pair<std::string, std::vector<double>>> basin_flows;

    for (const auto& rec : records) {
        if (rec.dynamic.cols() != n_dyn || rec.statics.size() != n_stat)
            throw PreconditionError("compute_scalers: inconsistent input dimensions for " + rec.basin_id);
        const auto [b, e] = detail::period_range(rec, split.period(rec, Subset::Train));
        if (b == e) throw DataError(rec.basin_id + ": no days inside the training period");
        std::vector<double> own;
        for (std::size_t i = b; i < e; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            for (Eigen::Index k = 0; k < n_dyn; ++k) dyn_values[static_cast<std::size_t>(k)].push_back(rec.dynamic(r, k));
            flow_values.push_back(rec.streamflow(r));
            own.push_back(rec.streamflow(r));
        }
        for (Eigen::Index k = 0; k < n_stat; ++k) stat_values[static_cast<std::size_t>(k)].push_back(rec.statics(k));
        basin_flows.emplace_back(rec.basin_id, std::move(own));
    }

    auto fill = [](const std::vector<std::vector<double>>& cols, Eigen::VectorXd& mean, Eigen::VectorXd& sd,
                   std::vector<bool>& flags, const char* what) {
        mean.resize(static_cast<Eigen::Index>(cols.size()));
        sd.resize(mean.size());
        flags.assign(cols.size(), false);
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const auto m = detail::moments(cols[k]);
            if (m.n == 0) throw DataError(std::string("no training values for ") + what + " input " + std::to_string(k));
            bool flagged = false;
            mean(static_cast<Eigen::Index>(k)) = m.mean;
            sd(static_cast<Eigen::Index>(k)) = detail::guarded_std(m.std, flagged);
            flags[k] = flagged;
        }
    };
    fill(dyn_values, s.dyn_mean, s.dyn_std, s.dyn_flagged, "dynamic");
    fill(stat_values, s.stat_mean, s.stat_std, s.stat_flagged, "static");

    const auto fm = detail::moments(flow_values);
    if (fm.n == 0) throw DataError("no training-period streamflow observations");
    s.flow_mean = fm.mean;
    s.flow_std = detail::guarded_std(fm.std, s.flow_flagged);

    for (const auto& [id, flows] : basin_flows) {
        const auto m = detail::moments(flows);
        if (m.n < 2) {
            warn(id + ": fewer than 2 training streamflow values; using pooled flow std for the NSE loss");
            s.per_basin_flow_std[id] = s.flow_std;
        } else {
            s.per_basin_flow_std[id] = m.std;
        }
    }
    return s;
}

inline void check_compatible(const ScalerSet& s, const BasinRecord& rec) {
    if (s.n_dyn() != static_cast<std::size_t>(rec.dynamic.cols()) ||
        s.n_stat() != static_cast<std::size_t>(rec.statics.size()))
        throw DataError(rec.basin_id + ": input dimensions do not match the scaler set");
}

// ---------------------------------------------------------------------------
// Windows

/// One basin's data after z-scoring; missing values stay NaN.
struct StandardizedBasin {
    std::string basin_id;
    std::vector<Date> dates;
    RowMatrix dynamic;
    Eigen::VectorXd flow;
    Eigen::VectorXd statics;
};

inline StandardizedBasin standardize(const BasinRecord& rec, const ScalerSet& s) {
    check_compatible(s, rec);
    StandardizedBasin out;
    out.basin_id = rec.basin_id;
    out.dates = rec.dates;
    out.dynamic = ((rec.dynamic.rowwise() - s.dyn_mean.transpose()).array().rowwise() / s.dyn_std.transpose().array())
                      .matrix();
    out.flow = ((rec.streamflow.array() - s.flow_mean) / s.flow_std).matrix();
    out.statics = ((rec.statics - s.stat_mean).array() / s.stat_std.array()).matrix();
    return out;
}

/// Network-ready batch. Matrices are stored column-per-sample for the LSTM kernels:
/// `inputs[t]` is n_dyn x batch for lookback step t (t = 0 is target_date - seq_len).
struct WindowBatch {
    std::vector<Eigen::MatrixXd> inputs;
    Eigen::MatrixXd statics; // n_stat x batch
    Eigen::VectorXd targets;
    std::vector<std::string> basin_ids;
    std::vector<Date> target_dates;

    Eigen::Index size() const { return targets.size(); }
    int seq_len() const { return static_cast<int>(inputs.size()); }
};

struct WindowSample {
    std::size_t basin;  // index into WindowDataset::basins()
    std::size_t target; // day index of the predicted streamflow
};

/// Lookback windows for one or more basins, materialized lazily into batches.
class WindowDataset {
public:
    explicit WindowDataset(int seq_len = kLookbackDays) : seq_len_(seq_len) {
        if (seq_len < 1) throw PreconditionError("seq_len must be >= 1");
    }

    /// Adds one sample per target date in `period` whose streamflow is present and whose
    /// `seq_len` preceding days have complete dynamics. Returns the number added.
    std::size_t add(const BasinRecord& rec, const ScalerSet& scalers, const Period& period) {
        auto sb = standardize(rec, scalers);
        const auto n = static_cast<Eigen::Index>(sb.dates.size());
        // incomplete[i] = number of days < i with any missing dynamic input
        std::vector<std::size_t> incomplete(static_cast<std::size_t>(n) + 1, 0);
        for (Eigen::Index i = 0; i < n; ++i)
            incomplete[static_cast<std::size_t>(i) + 1] =
                incomplete[static_cast<std::size_t>(i)] + (sb.dynamic.row(i).array().isFinite().all() ? 0 : 1);

        const auto [b, e] = detail::period_range(rec, period);
        const std::size_t basin_index = basins_.size();
        std::size_t added = 0;
        for (std::size_t t = std::max<std::size_t>(b, static_cast<std::size_t>(seq_len_)); t < e; ++t) {
            if (!std::isfinite(sb.flow(static_cast<Eigen::Index>(t)))) continue;
            if (incomplete[t] - incomplete[t - static_cast<std::size_t>(seq_len_)] != 0) continue;
            samples_.push_back({basin_index, t});
            ++added;
        }
        basins_.push_back(std::move(sb));
        if (added == 0)
            warn(rec.basin_id + ": no valid windows in " + format_date(period.start) + ".." + format_date(period.end));
        return added;
    }

    int seq_len() const { return seq_len_; }
    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    const std::vector<WindowSample>& samples() const { return samples_; }
    const std::vector<StandardizedBasin>& basins() const { return basins_; }

    /// Sample indices belonging to basin `b`, in date order.
    std::vector<std::size_t> samples_of(std::size_t b) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples_.size(); ++i)
            if (samples_[i].basin == b) out.push_back(i);
        return out;
    }

    WindowBatch make_batch(std::span<const std::size_t> sample_ids) const {
        WindowBatch batch;
        const auto bs = static_cast<Eigen::Index>(sample_ids.size());
        if (basins_.empty()) return batch;
        const auto n_dyn = basins_.front().dynamic.cols();
        const auto n_stat = basins_.front().statics.size();
        batch.inputs.assign(static_cast<std::size_t>(seq_len_), Eigen::MatrixXd(n_dyn, bs));
        batch.statics.resize(n_stat, bs);
        batch.targets.resize(bs);
        batch.basin_ids.reserve(sample_ids.size());
        batch.target_dates.reserve(sample_ids.size());
        for (Eigen::Index j = 0; j < bs; ++j) {
            const auto& smp = samples_.at(sample_ids[static_cast<std::size_t>(j)]);
            const auto& sb = basins_[smp.basin];
            const auto first = static_cast<Eigen::Index>(smp.target) - seq_len_;
            for (int t = 0; t < seq_len_; ++t)
                batch.inputs[static_cast<std::size_t>(t)].col(j) = sb.dynamic.row(first + t).transpose();
            batch.statics.col(j) = sb.statics;
            batch.targets(j) = sb.flow(static_cast<Eigen::Index>(smp.target));
            batch.basin_ids.push_back(sb.basin_id);
            batch.target_dates.push_back(sb.dates[smp.target]);
        }
        return batch;
    }

    WindowBatch make_batch_all() const {
        std::vector<std::size_t> ids(samples_.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
        return make_batch(ids);
    }

private:
    int seq_len_;
    std::vector<StandardizedBasin> basins_;
    std::vector<WindowSample> samples_;
};

/// Windows of a single basin over `period`.
inline WindowDataset build_windows(const BasinRecord& rec, const ScalerSet& scalers, const Period& period,
                                   int seq_len = kLookbackDays) {
    WindowDataset ds(seq_len);
    ds.add(rec, scalers, period);
    return ds;
}

} // namespace fineflood
