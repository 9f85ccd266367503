#pragma once

#include "fineflood/fineflood.hpp"

#include <filesystem>
#include <fstream>
#include <random>

namespace testutil {

namespace fs = std::filesystem;
using namespace fineflood;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(std::string_view tag) {
        static std::atomic<unsigned> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("fineflood_" + std::string(tag) + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(std::string_view p) const { return path_ / p; }

private:
    fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& content) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << content;
}

/// In-memory basin with `n` consecutive days from 2000-01-01 and smooth signals.
inline BasinRecord make_record(const std::string& id, std::size_t n, int n_dyn = 2, int n_stat = 2,
                               std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    BasinRecord r;
    r.basin_id = id;
    const auto start = parse_date_or_throw("2000-01-01", "start");
    r.dynamic.resize(static_cast<Eigen::Index>(n), n_dyn);
    r.streamflow.resize(static_cast<Eigen::Index>(n));
    for (std::size_t d = 0; d < n; ++d) {
        r.dates.push_back(start + std::chrono::days(static_cast<long>(d)));
        for (int k = 0; k < n_dyn; ++k) r.dynamic(static_cast<Eigen::Index>(d), k) = std::sin(0.05 * d * (k + 1)) + 0.1 * nd(rng);
        r.streamflow(static_cast<Eigen::Index>(d)) = 2.0 + std::sin(0.05 * d) + 0.1 * nd(rng);
    }
    r.statics.resize(n_stat);
    for (int k = 0; k < n_stat; ++k) r.statics(k) = 1.0 + nd(rng);
    for (int k = 0; k < n_dyn; ++k) r.dynamic_names.push_back("dyn" + std::to_string(k));
    for (int k = 0; k < n_stat; ++k) r.static_names.push_back("stat" + std::to_string(k));
    return r;
}

/// Random batch for a config with a short sequence length.
inline WindowBatch random_batch(const ModelConfig& c, int batch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    WindowBatch b;
    for (int t = 0; t < c.seq_len; ++t) {
        Eigen::MatrixXd x(c.n_dyn, batch);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
        b.inputs.push_back(x);
    }
    b.statics.resize(c.n_stat, batch);
    for (Eigen::Index i = 0; i < b.statics.size(); ++i) b.statics.data()[i] = nd(rng);
    b.targets.resize(batch);
    for (int j = 0; j < batch; ++j) {
        b.targets(j) = nd(rng);
        b.basin_ids.push_back("x_" + std::to_string(j));
        b.target_dates.push_back(parse_date_or_throw("2001-01-01", "d"));
    }
    return b;
}

/// Small synthetic family on disk plus its loaded records.
struct Family {
    std::unique_ptr<TempDir> dir;
    GeneratedFamily gen;
    std::vector<BasinRecord> records;
};

inline Family make_family(int n_basins, int n_days, std::uint64_t seed, std::vector<std::string> sources = {"synth"}) {
    Family f;
    f.dir = std::make_unique<TempDir>("family");
    SyntheticFamily fam;
    fam.n_basins = n_basins;
    fam.n_days = n_days;
    fam.seed = seed;
    fam.sources = std::move(sources);
    f.gen = gen_family(fam, f.dir->path());
    for (const auto& id : list_basins(f.dir->path())) f.records.push_back(load_basin(f.gen.spec, id));
    return f;
}

} // namespace testutil
