#pragma once

// Streamflow LSTM: linear static embedding, single-layer LSTM over the lookback
// window, output dropout on the final hidden state, linear head.
//
// Per sample:
//   e   = W_e s + b_e                       (no activation)
//   z_t = W_ih [x_t; e] + W_hh h_{t-1} + b   gate order i, f, g, o
//   c_t = f * c_{t-1} + i * g,  h_t = o * tanh(c_t),  h_0 = c_0 = 0
//   y   = w_head . dropout(h_T) + b_head

#include "fineflood/common.hpp"
#include "fineflood/ingest.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstring>
#include <random>
#include <string_view>

namespace fineflood {

struct ModelConfig {
    int hidden_size = 256;
    int embed_size = 10;
    int n_dyn = 0;
    int n_stat = 0;
    int seq_len = kLookbackDays;
    double dropout = 0.4;

    void validate() const {
        if (hidden_size < 1) throw PreconditionError("hidden_size must be >= 1");
        if (embed_size < 1) throw PreconditionError("embed_size must be >= 1");
        if (n_dyn < 1) throw PreconditionError("n_dyn must be >= 1");
        if (n_stat < 0) throw PreconditionError("n_stat must be >= 0");
        if (seq_len < 1) throw PreconditionError("seq_len must be >= 1");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw PreconditionError("dropout must lie in [0, 1)");
    }
    int n_lstm_inputs() const { return n_dyn + embed_size; }
    bool operator==(const ModelConfig&) const = default;
};

enum class Param : std::size_t { EmbedW, EmbedB, LstmWih, LstmWhh, LstmB, HeadW, HeadB };
inline constexpr std::size_t kNumParams = 7;
inline constexpr std::array<std::string_view, kNumParams> kParamNames = {
    "embed_W", "embed_b", "lstm_W_ih", "lstm_W_hh", "lstm_b", "head_W", "head_b"};

/// All trainable tensors. Biases are stored as n x 1 matrices so every tensor
/// can be visited uniformly.
struct ModelParams {
    std::array<Eigen::MatrixXd, kNumParams> tensors;

    Eigen::MatrixXd& operator[](Param p) { return tensors[static_cast<std::size_t>(p)]; }
    const Eigen::MatrixXd& operator[](Param p) const { return tensors[static_cast<std::size_t>(p)]; }

    /// Zero tensors shaped like `other`.
    static ModelParams zeros_like(const ModelParams& other) {
        ModelParams z;
        for (std::size_t i = 0; i < kNumParams; ++i)
            z.tensors[i] = Eigen::MatrixXd::Zero(other.tensors[i].rows(), other.tensors[i].cols());
        return z;
    }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
        return n;
    }

    bool all_finite() const {
        for (const auto& t : tensors)
            if (!t.allFinite()) return false;
        return true;
    }

    ModelParams& operator+=(const ModelParams& o) {
        for (std::size_t i = 0; i < kNumParams; ++i) tensors[i] += o.tensors[i];
        return *this;
    }
};

/// Exact equality including shapes.
inline bool bit_identical(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

inline bool bit_identical(const ModelParams& a, const ModelParams& b) {
    for (std::size_t i = 0; i < kNumParams; ++i)
        if (!bit_identical(a.tensors[i], b.tensors[i])) return false;
    return true;
}

inline std::array<std::pair<Eigen::Index, Eigen::Index>, kNumParams> param_shapes(const ModelConfig& c) {
    const Eigen::Index h4 = 4 * c.hidden_size;
    return {{{c.embed_size, c.n_stat},
             {c.embed_size, 1},
             {h4, c.n_lstm_inputs()},
             {h4, c.hidden_size},
             {h4, 1},
             {1, c.hidden_size},
             {1, 1}}};
}

inline std::size_t param_count(const ModelConfig& c) {
    c.validate();
    std::size_t n = 0;
    for (const auto& [r, k] : param_shapes(c)) n += static_cast<std::size_t>(r * k);
    return n;
}

inline void check_shapes(const ModelParams& p, const ModelConfig& c) {
    const auto shapes = param_shapes(c);
    for (std::size_t i = 0; i < kNumParams; ++i)
        if (p.tensors[i].rows() != shapes[i].first || p.tensors[i].cols() != shapes[i].second)
            throw PreconditionError(std::string("parameter ") + std::string(kParamNames[i]) +
                                    " does not match the model config");
}

inline constexpr double kForgetBiasInit = 3.0;

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0 except the forget-gate slice.
inline ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(derive_seed(seed, 0x1417));
    ModelParams p;
    const auto shapes = param_shapes(config);
    for (std::size_t i = 0; i < kNumParams; ++i) {
        auto& t = p.tensors[i];
        t = Eigen::MatrixXd::Zero(shapes[i].first, shapes[i].second);
        const bool is_bias = i == 1 || i == 4 || i == 6;
        if (is_bias || t.cols() == 0) continue;
        const double a = 1.0 / std::sqrt(static_cast<double>(t.cols()));
        std::uniform_real_distribution<double> u(-a, a);
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index k = 0; k < t.cols(); ++k) t(r, k) = u(rng);
    }
    p[Param::LstmB].middleRows(config.hidden_size, config.hidden_size).setConstant(kForgetBiasInit);
    return p;
}

enum class Mode { Train, Eval };

/// Activations retained by forward() for backward(). References the batch
/// inputs, so the batch must outlive the cache.
struct ForwardCache {
    const WindowBatch* batch = nullptr;
    ModelConfig config;
    Eigen::MatrixXd embedding;          // E x B
    std::vector<Eigen::MatrixXd> gates; // per step, 4H x B, activated (i, f, g, o)
    std::vector<Eigen::MatrixXd> cell;  // per step, H x B
    std::vector<Eigen::MatrixXd> hidden;
    Eigen::MatrixXd dropout_scale;      // H x B; 0 or 1/keep in train mode, 1 in eval
    Eigen::MatrixXd head_input;         // dropout(h_T)
};

struct ForwardResult {
    Eigen::VectorXd predictions;
    ForwardCache cache;
};

namespace detail {

inline void check_batch(const ModelConfig& c, const WindowBatch& batch) {
    if (batch.seq_len() != c.seq_len) throw PreconditionError("batch sequence length does not match the model");
    if (batch.statics.rows() != c.n_stat) throw PreconditionError("batch static dimension does not match the model");
    for (const auto& x : batch.inputs)
        if (x.rows() != c.n_dyn || x.cols() != batch.size())
            throw PreconditionError("batch dynamic dimension does not match the model");
    for (Eigen::Index j = 0; j < batch.size(); ++j) {
        bool ok = batch.statics.col(j).allFinite();
        for (const auto& x : batch.inputs) ok = ok && x.col(j).allFinite();
        if (!ok) throw DataError("non-finite model input in batch sample " + std::to_string(j));
    }
}

inline void sigmoid_inplace(Eigen::Block<Eigen::MatrixXd> m) {
    m = (1.0 + (-m.array()).exp()).inverse().matrix();
}

// tanh(x) = 2*sigmoid(2x) - 1; Eigen vectorizes exp but not tanh for doubles.
template <typename Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& x) {
    return 2.0 * (1.0 + (-2.0 * x).exp()).inverse() - 1.0;
}

/// Inverted-dropout scale for one batch; sample j's mask depends only on (seed, j).
inline Eigen::MatrixXd dropout_scale(const ModelConfig& c, Eigen::Index batch, Mode mode, std::uint64_t seed) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Ones(c.hidden_size, batch);
    if (mode == Mode::Eval || c.dropout == 0.0) return s;
    const double keep = 1.0 - c.dropout;
    for (Eigen::Index j = 0; j < batch; ++j) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
        std::bernoulli_distribution bern(keep);
        for (Eigen::Index r = 0; r < c.hidden_size; ++r) s(r, j) = bern(rng) ? 1.0 / keep : 0.0;
    }
    return s;
}

/// Runs the recurrence. With `cache` null only the final hidden state is kept.
inline Eigen::MatrixXd run_lstm(const ModelParams& p, const ModelConfig& c, const WindowBatch& batch,
                                ForwardCache* cache) {
    const Eigen::Index B = batch.size();
    const Eigen::Index H = c.hidden_size;
    const Eigen::MatrixXd emb = (p[Param::EmbedW] * batch.statics).colwise() + p[Param::EmbedB].col(0);
    const auto W_x = p[Param::LstmWih].leftCols(c.n_dyn);
    const auto W_s = p[Param::LstmWih].rightCols(c.embed_size);
    const Eigen::MatrixXd static_drive = (W_s * emb).colwise() + p[Param::LstmB].col(0);

    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd cell = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd z(4 * H, B);
    if (cache) {
        cache->embedding = emb;
        cache->gates.resize(static_cast<std::size_t>(c.seq_len));
        cache->cell.resize(static_cast<std::size_t>(c.seq_len));
        cache->hidden.resize(static_cast<std::size_t>(c.seq_len));
    }
    for (int t = 0; t < c.seq_len; ++t) {
        z = static_drive;
        z.noalias() += W_x * batch.inputs[static_cast<std::size_t>(t)];
        z.noalias() += p[Param::LstmWhh] * h;
        sigmoid_inplace(z.topRows(2 * H));
        z.middleRows(2 * H, H) = fast_tanh(z.middleRows(2 * H, H).array()).matrix();
        sigmoid_inplace(z.bottomRows(H));
        cell = (z.middleRows(H, H).array() * cell.array() + z.topRows(H).array() * z.middleRows(2 * H, H).array())
                   .matrix();
        h = (z.bottomRows(H).array() * fast_tanh(cell.array())).matrix();
        if (cache) {
            const auto k = static_cast<std::size_t>(t);
            cache->gates[k] = z;
            cache->cell[k] = cell;
            cache->hidden[k] = h;
        }
    }
    return h;
}

} // namespace detail

/// Final hidden states h_T (H x batch), eval mode, no cache.
inline Eigen::MatrixXd final_hidden(const ModelParams& p, const ModelConfig& c, const WindowBatch& batch) {
    check_shapes(p, c);
    detail::check_batch(c, batch);
    return detail::run_lstm(p, c, batch, nullptr);
}

/// Linear head applied to (already dropped-out) features.
inline Eigen::VectorXd apply_head(const ModelParams& p, const Eigen::MatrixXd& features) {
    return ((p[Param::HeadW] * features).array() + p[Param::HeadB](0, 0)).matrix().transpose();
}

inline ForwardResult forward(const ModelParams& p, const ModelConfig& c, const WindowBatch& batch, Mode mode,
                             std::uint64_t dropout_seed) {
    check_shapes(p, c);
    detail::check_batch(c, batch);
    ForwardResult r;
    r.cache.batch = &batch;
    r.cache.config = c;
    const Eigen::MatrixXd hT = detail::run_lstm(p, c, batch, &r.cache);
    r.cache.dropout_scale = detail::dropout_scale(c, batch.size(), mode, dropout_seed);
    r.cache.head_input = (hT.array() * r.cache.dropout_scale.array()).matrix();
    r.predictions = apply_head(p, r.cache.head_input);
    return r;
}

/// Eval-mode predictions without retaining activations.
inline Eigen::VectorXd predict(const ModelParams& p, const ModelConfig& c, const WindowBatch& batch) {
    return apply_head(p, final_hidden(p, c, batch));
}

/// Which gradient groups backward() must produce; skipped groups come back as zeros.
struct GradientScope {
    bool lstm = true;
    bool embedding = true;
};

/// Gradient of the head alone given its input features.
inline void head_backward(const Eigen::MatrixXd& features, const Eigen::VectorXd& d_pred, ModelParams& grads) {
    grads[Param::HeadW].noalias() += d_pred.transpose() * features.transpose();
    grads[Param::HeadB](0, 0) += d_pred.sum();
}

/// Exact gradients of sum_j predictions_j * d_pred_j by backpropagation through time.
inline ModelParams backward(const ModelParams& p, const ForwardCache& cache, const Eigen::VectorXd& d_pred,
                            GradientScope scope = {}) {
    const auto& c = cache.config;
    const auto& batch = *cache.batch;
    ModelParams g = ModelParams::zeros_like(p);
    if (d_pred.size() != batch.size()) throw PreconditionError("d_pred length does not match the batch");
    head_backward(cache.head_input, d_pred, g);
    if (!scope.lstm && !scope.embedding) return g;

    const Eigen::Index H = c.hidden_size;
    const Eigen::Index B = batch.size();
    Eigen::MatrixXd dh = ((p[Param::HeadW].transpose() * d_pred.transpose()).array() * cache.dropout_scale.array()).matrix();
    Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd dz(4 * H, B);
    Eigen::MatrixXd dz_sum = Eigen::MatrixXd::Zero(4 * H, B);
    Eigen::MatrixXd dW_x = Eigen::MatrixXd::Zero(4 * H, c.n_dyn);
    Eigen::MatrixXd& dW_hh = g[Param::LstmWhh];
    const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(H, B);

    for (int t = c.seq_len - 1; t >= 0; --t) {
        const auto k = static_cast<std::size_t>(t);
        const auto& gate = cache.gates[k];
        const auto i = gate.topRows(H).array();
        const auto f = gate.middleRows(H, H).array();
        const auto gg = gate.middleRows(2 * H, H).array();
        const auto o = gate.bottomRows(H).array();
        const auto& c_prev = t > 0 ? cache.cell[k - 1] : zeros;
        const auto& h_prev = t > 0 ? cache.hidden[k - 1] : zeros;
        const Eigen::ArrayXXd tc = detail::fast_tanh(cache.cell[k].array());

        dc.array() += dh.array() * o * (1.0 - tc.square());
        dz.topRows(H) = (dc.array() * gg * i * (1.0 - i)).matrix();
        dz.middleRows(H, H) = (dc.array() * c_prev.array() * f * (1.0 - f)).matrix();
        dz.middleRows(2 * H, H) = (dc.array() * i * (1.0 - gg.square())).matrix();
        dz.bottomRows(H) = (dh.array() * tc * o * (1.0 - o)).matrix();

        dW_x.noalias() += dz * batch.inputs[k].transpose();
        if (t > 0) dW_hh.noalias() += dz * h_prev.transpose();
        dz_sum += dz;
        dh.noalias() = p[Param::LstmWhh].transpose() * dz;
        dc.array() *= f;
    }

    const auto W_s = p[Param::LstmWih].rightCols(c.embed_size);
    if (scope.lstm) {
        g[Param::LstmWih].leftCols(c.n_dyn) = dW_x;
        g[Param::LstmWih].rightCols(c.embed_size).noalias() = dz_sum * cache.embedding.transpose();
        g[Param::LstmB].col(0) = dz_sum.rowwise().sum();
    } else {
        dW_hh.setZero();
    }
    if (scope.embedding) {
        const Eigen::MatrixXd d_emb = W_s.transpose() * dz_sum;
        g[Param::EmbedW].noalias() = d_emb * batch.statics.transpose();
        g[Param::EmbedB].col(0) = d_emb.rowwise().sum();
    }
    return g;
}

} // namespace fineflood
