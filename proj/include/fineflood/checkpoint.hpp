#pragma once

// Checkpoint container. Little-endian, layout:
//
//   magic      8 bytes  "FFLDCKPT"
//   version    u32      kCheckpointVersion
//   n_sections u32
//   section*   name_len u32, name bytes,
//              kind u8 (1 = f64 tensor, 2 = i64 tensor, 3 = utf-8 string),
//              rows u64, cols u64, payload
//                f64/i64: rows*cols values, row-major
//                string:  rows = byte count, cols = 1
//   checksum   u64      FNV-1a over every preceding byte
//
// Sections written by save_checkpoint (all required on load):
//   config.ints        i64 [1x5]  hidden_size, embed_size, n_dyn, n_stat, seq_len
//   config.dropout     f64 [1x1]
//   param.<name>       f64        one per model tensor (embed_W ... head_b)
//   scaler.dyn_names / scaler.stat_names   string, newline-joined
//   scaler.dyn         f64 [2 x n_dyn]   mean row, std row
//   scaler.stat        f64 [2 x n_stat]
//   scaler.flow        f64 [1x2]         mean, std
//   scaler.flags       i64 [1 x (n_dyn + n_stat + 1)]
//   scaler.basin_ids   string, newline-joined
//   scaler.basin_std   f64 [1 x n_basins]
//   prov.ints          i64 [1x3]  seed, epochs, batch_size
//   prov.fingerprint   string

#include "fineflood/common.hpp"
#include "fineflood/ingest.hpp"
#include "fineflood/io.hpp"
#include "fineflood/model.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <sstream>

namespace fineflood {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'F', 'F', 'L', 'D', 'C', 'K', 'P', 'T'};

struct Provenance {
    std::uint64_t seed = 0;
    int epochs = 0;
    int batch_size = 256;
    std::string data_fingerprint;
    bool operator==(const Provenance&) const = default;
};

struct ModelCheckpoint {
    ModelConfig config;
    ModelParams params;
    ScalerSet scalers;
    Provenance provenance;

    void validate() const {
        config.validate();
        check_shapes(params, config);
        if (scalers.n_dyn() != static_cast<std::size_t>(config.n_dyn) ||
            scalers.n_stat() != static_cast<std::size_t>(config.n_stat))
            throw DataError("checkpoint scalers do not match the model config dimensions");
        if (scalers.dyn_std.size() != scalers.dyn_mean.size() || scalers.stat_std.size() != scalers.stat_mean.size())
            throw DataError("checkpoint scaler mean/std lengths differ");
    }
};

namespace detail {

enum class SectionKind : std::uint8_t { F64 = 1, I64 = 2, Text = 3 };

struct Section {
    SectionKind kind = SectionKind::F64;
    std::uint64_t rows = 0, cols = 0;
    std::vector<double> f64;
    std::vector<std::int64_t> i64;
    std::string text;
};

class ByteWriter {
public:
    template <typename T>
    void put(const T& v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    void put_bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}
    template <typename T>
    T get() {
        T v;
        get_bytes(&v, sizeof(T));
        return v;
    }
    void get_bytes(void* out, std::size_t n) {
        if (n > data_.size() - pos_) throw DataError(what_ + ": truncated checkpoint");
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t pos() const { return pos_; }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
    std::string what_;
};

inline Section f64_section(const Eigen::MatrixXd& m) {
    Section s;
    s.kind = SectionKind::F64;
    s.rows = static_cast<std::uint64_t>(m.rows());
    s.cols = static_cast<std::uint64_t>(m.cols());
    s.f64.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) s.f64.push_back(m(r, c));
    return s;
}

inline Section i64_section(std::vector<std::int64_t> v) {
    Section s;
    s.kind = SectionKind::I64;
    s.rows = 1;
    s.cols = v.size();
    s.i64 = std::move(v);
    return s;
}

inline Section text_section(std::string t) {
    Section s;
    s.kind = SectionKind::Text;
    s.rows = t.size();
    s.cols = 1;
    s.text = std::move(t);
    return s;
}

inline std::string join_lines(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += '\n';
        out += v[i];
    }
    return out;
}

inline std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find('\n', start);
        out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

inline Eigen::MatrixXd to_matrix(const Section& s) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = s.f64[k++];
    return m;
}

} // namespace detail

namespace detail {

/// Encodes without validating; serialize_checkpoint() is the checked entry point.
inline std::string encode_checkpoint(const ModelCheckpoint& ck) {
    std::vector<std::pair<std::string, Section>> sections;
    const auto& c = ck.config;
    sections.emplace_back("config.ints", i64_section({c.hidden_size, c.embed_size, c.n_dyn, c.n_stat, c.seq_len}));
    sections.emplace_back("config.dropout", f64_section(Eigen::MatrixXd::Constant(1, 1, c.dropout)));
    for (std::size_t i = 0; i < kNumParams; ++i)
        sections.emplace_back("param." + std::string(kParamNames[i]), f64_section(ck.params.tensors[i]));

    const auto& s = ck.scalers;
    sections.emplace_back("scaler.dyn_names", text_section(join_lines(s.dynamic_names)));
    sections.emplace_back("scaler.stat_names", text_section(join_lines(s.static_names)));
    Eigen::MatrixXd dyn(2, s.dyn_mean.size());
    dyn << s.dyn_mean.transpose(), s.dyn_std.transpose();
    sections.emplace_back("scaler.dyn", f64_section(dyn));
    Eigen::MatrixXd stat(2, s.stat_mean.size());
    stat << s.stat_mean.transpose(), s.stat_std.transpose();
    sections.emplace_back("scaler.stat", f64_section(stat));
    Eigen::MatrixXd flow(1, 2);
    flow << s.flow_mean, s.flow_std;
    sections.emplace_back("scaler.flow", f64_section(flow));
    std::vector<std::int64_t> flags;
    for (bool b : s.dyn_flagged) flags.push_back(b);
    for (bool b : s.stat_flagged) flags.push_back(b);
    flags.push_back(s.flow_flagged);
    sections.emplace_back("scaler.flags", i64_section(std::move(flags)));
    std::vector<std::string> ids;
    Eigen::MatrixXd basin_std(1, static_cast<Eigen::Index>(s.per_basin_flow_std.size()));
    Eigen::Index k = 0;
    for (const auto& [id, v] : s.per_basin_flow_std) {
        ids.push_back(id);
        basin_std(0, k++) = v;
    }
    sections.emplace_back("scaler.basin_ids", text_section(join_lines(ids)));
    sections.emplace_back("scaler.basin_std", f64_section(basin_std));

    const auto& p = ck.provenance;
    sections.emplace_back("prov.ints", i64_section({static_cast<std::int64_t>(p.seed), p.epochs, p.batch_size}));
    sections.emplace_back("prov.fingerprint", text_section(p.data_fingerprint));

    ByteWriter w;
    w.put_bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint32_t>(sections.size()));
    for (const auto& [name, sec] : sections) {
        w.put(static_cast<std::uint32_t>(name.size()));
        w.put_bytes(name.data(), name.size());
        w.put(static_cast<std::uint8_t>(sec.kind));
        w.put(sec.rows);
        w.put(sec.cols);
        switch (sec.kind) {
        case SectionKind::F64: w.put_bytes(sec.f64.data(), sec.f64.size() * sizeof(double)); break;
        case SectionKind::I64: w.put_bytes(sec.i64.data(), sec.i64.size() * sizeof(std::int64_t)); break;
        case SectionKind::Text: w.put_bytes(sec.text.data(), sec.text.size()); break;
        }
    }
    Fnv1a h;
    h.update(w.buffer());
    w.put(h.digest());
    return std::move(w.buffer());
}

} // namespace detail

inline std::string serialize_checkpoint(const ModelCheckpoint& ck) {
    ck.validate();
    return detail::encode_checkpoint(ck);
}

inline ModelCheckpoint deserialize_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
    using namespace detail;
    if (bytes.size() < sizeof kCheckpointMagic + 16) throw DataError(what + ": truncated checkpoint");
    if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
        throw DataError(what + ": not a checkpoint file (bad magic)");
    {
        Fnv1a h;
        h.update(bytes.data(), bytes.size() - sizeof(std::uint64_t));
        std::uint64_t stored = 0;
        std::memcpy(&stored, bytes.data() + bytes.size() - sizeof stored, sizeof stored);
        if (stored != h.digest()) throw DataError(what + ": checksum mismatch (truncated or corrupt checkpoint)");
    }
    ByteReader r(bytes.substr(0, bytes.size() - sizeof(std::uint64_t)), what);
    char magic[8];
    r.get_bytes(magic, sizeof magic);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw DataError(what + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    const auto n_sections = r.get<std::uint32_t>();
    std::map<std::string, Section> sections;
    for (std::uint32_t i = 0; i < n_sections; ++i) {
        const auto len = r.get<std::uint32_t>();
        if (len > 4096) throw DataError(what + ": corrupt section header");
        std::string name(len, '\0');
        r.get_bytes(name.data(), len);
        Section s;
        s.kind = static_cast<SectionKind>(r.get<std::uint8_t>());
        s.rows = r.get<std::uint64_t>();
        s.cols = r.get<std::uint64_t>();
        const std::uint64_t count = s.rows * s.cols;
        if (count > (std::uint64_t{1} << 32)) throw DataError(what + ": corrupt section size for " + name);
        switch (s.kind) {
        case SectionKind::F64:
            s.f64.resize(count);
            r.get_bytes(s.f64.data(), count * sizeof(double));
            break;
        case SectionKind::I64:
            s.i64.resize(count);
            r.get_bytes(s.i64.data(), count * sizeof(std::int64_t));
            break;
        case SectionKind::Text:
            s.text.resize(count);
            r.get_bytes(s.text.data(), count);
            break;
        default: throw DataError(what + ": unknown section kind in " + name);
        }
        sections.emplace(std::move(name), std::move(s));
    }

    auto need = [&](const std::string& name, SectionKind kind) -> const Section& {
        const auto it = sections.find(name);
        if (it == sections.end()) throw DataError(what + ": missing section " + name);
        if (it->second.kind != kind) throw DataError(what + ": section " + name + " has the wrong type");
        return it->second;
    };

    ModelCheckpoint ck;
    const auto& ints = need("config.ints", SectionKind::I64);
    if (ints.i64.size() != 5) throw DataError(what + ": malformed config block");
    ck.config.hidden_size = static_cast<int>(ints.i64[0]);
    ck.config.embed_size = static_cast<int>(ints.i64[1]);
    ck.config.n_dyn = static_cast<int>(ints.i64[2]);
    ck.config.n_stat = static_cast<int>(ints.i64[3]);
    ck.config.seq_len = static_cast<int>(ints.i64[4]);
    const auto& dropout = need("config.dropout", SectionKind::F64);
    if (dropout.f64.size() != 1) throw DataError(what + ": malformed dropout entry");
    ck.config.dropout = dropout.f64[0];
    for (std::size_t i = 0; i < kNumParams; ++i)
        ck.params.tensors[i] = to_matrix(need("param." + std::string(kParamNames[i]), SectionKind::F64));

    auto& s = ck.scalers;
    s.dynamic_names = split_lines(need("scaler.dyn_names", SectionKind::Text).text);
    s.static_names = split_lines(need("scaler.stat_names", SectionKind::Text).text);
    const auto dyn = to_matrix(need("scaler.dyn", SectionKind::F64));
    const auto stat = to_matrix(need("scaler.stat", SectionKind::F64));
    const auto flow = to_matrix(need("scaler.flow", SectionKind::F64));
    if (dyn.rows() != 2 || stat.rows() != 2 || flow.size() != 2) throw DataError(what + ": malformed scaler block");
    s.dyn_mean = dyn.row(0).transpose();
    s.dyn_std = dyn.row(1).transpose();
    s.stat_mean = stat.row(0).transpose();
    s.stat_std = stat.row(1).transpose();
    s.flow_mean = flow(0, 0);
    s.flow_std = flow(0, 1);
    const auto& flags = need("scaler.flags", SectionKind::I64).i64;
    if (flags.size() != static_cast<std::size_t>(dyn.cols() + stat.cols() + 1))
        throw DataError(what + ": malformed scaler flags");
    for (Eigen::Index i = 0; i < dyn.cols(); ++i) s.dyn_flagged.push_back(flags[static_cast<std::size_t>(i)] != 0);
    for (Eigen::Index i = 0; i < stat.cols(); ++i)
        s.stat_flagged.push_back(flags[static_cast<std::size_t>(dyn.cols() + i)] != 0);
    s.flow_flagged = flags.back() != 0;
    if (s.dynamic_names.size() != static_cast<std::size_t>(dyn.cols()) ||
        s.static_names.size() != static_cast<std::size_t>(stat.cols()))
        throw DataError(what + ": scaler names do not match scaler dimensions");
    const auto ids = split_lines(need("scaler.basin_ids", SectionKind::Text).text);
    const auto basin_std = to_matrix(need("scaler.basin_std", SectionKind::F64));
    if (static_cast<Eigen::Index>(ids.size()) != basin_std.size()) throw DataError(what + ": malformed per-basin stds");
    for (std::size_t i = 0; i < ids.size(); ++i) s.per_basin_flow_std[ids[i]] = basin_std(0, static_cast<Eigen::Index>(i));

    const auto& prov = need("prov.ints", SectionKind::I64).i64;
    if (prov.size() != 3) throw DataError(what + ": malformed provenance block");
    ck.provenance.seed = static_cast<std::uint64_t>(prov[0]);
    ck.provenance.epochs = static_cast<int>(prov[1]);
    ck.provenance.batch_size = static_cast<int>(prov[2]);
    ck.provenance.data_fingerprint = need("prov.fingerprint", SectionKind::Text).text;

    try {
        ck.validate();
    } catch (const std::exception& e) {
        throw DataError(what + ": inconsistent checkpoint: " + e.what());
    }
    return ck;
}

inline void save_checkpoint(const ModelCheckpoint& ck, const std::filesystem::path& path) {
    io::write_atomic(path, serialize_checkpoint(ck));
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(io::read_text(path), path.string());
}

} // namespace fineflood
