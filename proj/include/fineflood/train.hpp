#pragma once

#include "fineflood/checkpoint.hpp"
#include "fineflood/common.hpp"
#include "fineflood/ingest.hpp"
#include "fineflood/metrics.hpp"
#include "fineflood/model.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <ostream>
#include <random>
#include <span>

namespace fineflood {

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { NSE, MSE, RMSE };

inline const char* to_string(LossKind k) {
    switch (k) {
    case LossKind::NSE: return "NSE";
    case LossKind::MSE: return "MSE";
    case LossKind::RMSE: return "RMSE";
    }
    return "?";
}

inline LossKind parse_loss(std::string_view s) {
    if (s == "NSE" || s == "nse") return LossKind::NSE;
    if (s == "MSE" || s == "mse") return LossKind::MSE;
    if (s == "RMSE" || s == "rmse") return LossKind::RMSE;
    throw DataError("unknown loss '" + std::string(s) + "' (expected NSE, MSE or RMSE)");
}

inline constexpr double kNseLossEps = 0.1;

namespace detail {
inline void check_loss_inputs(std::span<const double> pred, std::span<const double> obs) {
    if (pred.size() != obs.size()) throw PreconditionError("loss: prediction and observation lengths differ");
    if (pred.empty()) throw PreconditionError("loss: empty batch");
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (!std::isfinite(pred[i]) || !std::isfinite(obs[i]))
            throw DataError("loss: non-finite value at batch index " + std::to_string(i));
}
} // namespace detail

/// mean_j (pred_j - obs_j)^2 / (s_j + eps)^2, with s_j the training-period flow std of sample j's basin.
inline double loss_nse(std::span<const double> pred, std::span<const double> obs, std::span<const double> basin_std,
                       double eps = kNseLossEps) {
    detail::check_loss_inputs(pred, obs);
    if (basin_std.size() != pred.size()) throw PreconditionError("loss_nse: basin_std length differs");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!std::isfinite(basin_std[i])) throw DataError("loss_nse: non-finite basin std");
        const double w = (basin_std[i] + eps) * (basin_std[i] + eps);
        sum += (pred[i] - obs[i]) * (pred[i] - obs[i]) / w;
    }
    return sum / static_cast<double>(pred.size());
}

inline double loss_mse(std::span<const double> pred, std::span<const double> obs) {
    detail::check_loss_inputs(pred, obs);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - obs[i]) * (pred[i] - obs[i]);
    return sum / static_cast<double>(pred.size());
}

inline double loss_rmse(std::span<const double> pred, std::span<const double> obs) {
    return std::sqrt(loss_mse(pred, obs));
}

// ---------------------------------------------------------------------------
// Optimizer

using TrainableMask = std::array<bool, kNumParams>;

inline TrainableMask all_trainable() {
    TrainableMask m;
    m.fill(true);
    return m;
}

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;
};

struct OptimizerState {
    ModelParams m, v;
    long step = 0;
    long skipped = 0;

    static OptimizerState for_params(const ModelParams& p) {
        return {ModelParams::zeros_like(p), ModelParams::zeros_like(p), 0, 0};
    }
};

/// Global-norm clipping over the trainable tensors, then one bias-corrected Adam
/// update of those tensors. Returns false (and leaves everything untouched) when
/// the clipped gradient is not finite.
inline bool adam_step(ModelParams& params, ModelParams grads, OptimizerState& state, double lr,
                      const TrainableMask& mask, const AdamOptions& opt = {}) {
    double sq = 0.0;
    for (std::size_t i = 0; i < kNumParams; ++i)
        if (mask[i]) sq += grads.tensors[i].squaredNorm();
    const double norm = std::sqrt(sq);
    if (opt.clip_norm > 0.0 && norm > opt.clip_norm) {
        const double scale = opt.clip_norm / norm;
        for (std::size_t i = 0; i < kNumParams; ++i)
            if (mask[i]) grads.tensors[i] *= scale;
    }
    bool finite = std::isfinite(norm);
    for (std::size_t i = 0; i < kNumParams && finite; ++i)
        if (mask[i]) finite = grads.tensors[i].allFinite();
    if (!finite) {
        ++state.skipped;
        warn("non-finite gradient; optimizer step skipped");
        return false;
    }

    ++state.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < kNumParams; ++i) {
        if (!mask[i]) continue;
        auto& m = state.m.tensors[i];
        auto& v = state.v.tensors[i];
        const auto& g = grads.tensors[i];
        m = opt.beta1 * m + (1.0 - opt.beta1) * g;
        v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
        params.tensors[i].array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + opt.eps);
    }
    return true;
}

// ---------------------------------------------------------------------------
// Configuration and history

struct LrStage {
    int first_epoch;
    int last_epoch;
    double lr;
};

struct TrainConfig {
    int epochs = 40;
    std::vector<LrStage> lr_schedule{{1, 30, 5e-5}, {31, 40, 5e-6}};
    int batch_size = 256;
    LossKind loss = LossKind::NSE;
    std::uint64_t seed = 0;
    double clip_norm = 1.0;
    double nse_eps = kNseLossEps;
    /// Validate every k epochs (and always after the last one); 0 = last epoch only.
    int validate_every = 1;

    void validate() const {
        if (epochs < 0) throw PreconditionError("epochs must be >= 0");
        if (batch_size < 1) throw PreconditionError("batch_size must be >= 1");
        if (!(clip_norm > 0.0)) throw PreconditionError("clip_norm must be positive");
        int expect = 1;
        for (const auto& s : lr_schedule) {
            if (s.first_epoch != expect || s.last_epoch < s.first_epoch)
                throw PreconditionError("lr_schedule epoch ranges must partition [1, epochs]");
            if (!(s.lr > 0.0)) throw PreconditionError("learning rates must be positive");
            expect = s.last_epoch + 1;
        }
        if (epochs > 0 && expect != epochs + 1)
            throw PreconditionError("lr_schedule epoch ranges must partition [1, epochs]");
    }

    double lr_for_epoch(int epoch) const {
        for (const auto& s : lr_schedule)
            if (epoch >= s.first_epoch && epoch <= s.last_epoch) return s.lr;
        throw PreconditionError("no learning rate scheduled for epoch " + std::to_string(epoch));
    }
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = kNaN;
    Metric val_nse_median;
    double lr = 0.0;
    long skipped_steps = 0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;

    /// Columns: epoch, train_loss, val_nse_median, seconds.
    void write_csv(std::ostream& out) const {
        csv::Writer w(out);
        w.row({"epoch", "train_loss", "val_nse_median", "seconds"});
        for (const auto& e : epochs)
            w.row({std::to_string(e.epoch), format_double(e.train_loss),
                   e.val_nse_median ? format_double(*e.val_nse_median) : std::string{}, format_double(e.seconds)});
    }

    /// True when every field except wall time matches bit for bit.
    bool same_trajectory(const TrainHistory& o) const {
        if (epochs.size() != o.epochs.size()) return false;
        for (std::size_t i = 0; i < epochs.size(); ++i) {
            const auto& a = epochs[i];
            const auto& b = o.epochs[i];
            if (a.epoch != b.epoch || std::memcmp(&a.train_loss, &b.train_loss, sizeof(double)) != 0 ||
                a.val_nse_median.has_value() != b.val_nse_median.has_value() ||
                (a.val_nse_median && *a.val_nse_median != *b.val_nse_median) || a.lr != b.lr ||
                a.skipped_steps != b.skipped_steps)
                return false;
        }
        return true;
    }
};

// ---------------------------------------------------------------------------
// Datasets and evaluation helpers

/// Training and validation windows, all standardized with one ScalerSet.
struct TrainData {
    WindowDataset train;
    WindowDataset valid;
    /// s(b) in standardized units, indexed like train.basins(); NaN when unknown.
    std::vector<double> basin_std;
};

inline std::uint64_t fingerprint(const WindowDataset& ds) {
    Fnv1a h;
    for (const auto& b : ds.basins()) {
        h.update(b.basin_id);
        h.update(b.dynamic.data(), static_cast<std::size_t>(b.dynamic.size()) * sizeof(double));
        h.update(b.flow.data(), static_cast<std::size_t>(b.flow.size()) * sizeof(double));
        h.update(b.statics.data(), static_cast<std::size_t>(b.statics.size()) * sizeof(double));
    }
    for (const auto& s : ds.samples()) {
        h.update_value(s.basin);
        h.update_value(s.target);
    }
    return h.digest();
}

inline constexpr std::size_t kEvalChunk = 256;
inline constexpr std::size_t kTrainChunk = 64;

/// Eval-mode predictions (standardized units) for every sample, in dataset order.
inline Eigen::VectorXd predict_dataset(const ModelParams& p, const ModelConfig& c, const WindowDataset& ds) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(ds.size()));
    std::vector<std::size_t> ids;
    for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
        ids.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + kEvalChunk); ++i) ids.push_back(i);
        const auto batch = ds.make_batch(ids);
        out.segment(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(ids.size())) = predict(p, c, batch);
    }
    return out;
}

/// Final hidden states (H x n) for every sample, in dataset order.
inline Eigen::MatrixXd hidden_features(const ModelParams& p, const ModelConfig& c, const WindowDataset& ds) {
    Eigen::MatrixXd out(c.hidden_size, static_cast<Eigen::Index>(ds.size()));
    std::vector<std::size_t> ids;
    for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
        ids.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + kEvalChunk); ++i) ids.push_back(i);
        const auto batch = ds.make_batch(ids);
        out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(ids.size())) =
            final_hidden(p, c, batch);
    }
    return out;
}

/// De-standardized hydrograph of one basin in `ds` given dataset-order predictions.
inline HydrographPair basin_hydrograph(const WindowDataset& ds, std::size_t basin, const Eigen::VectorXd& pred,
                                       const ScalerSet& scalers) {
    HydrographPair pair;
    const auto& sb = ds.basins()[basin];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& s = ds.samples()[i];
        if (s.basin != basin) continue;
        pair.dates.push_back(sb.dates[s.target]);
        pair.obs.push_back(scalers.destandardize_flow(sb.flow(static_cast<Eigen::Index>(s.target))));
        pair.sim.push_back(scalers.destandardize_flow(pred(static_cast<Eigen::Index>(i))));
    }
    return pair;
}

/// NSE of every basin in `ds`; basins without windows or with undefined NSE map to nullopt.
inline std::vector<Metric> per_basin_nse(const WindowDataset& ds, const Eigen::VectorXd& pred,
                                         const ScalerSet& scalers) {
    std::vector<Metric> out;
    for (std::size_t b = 0; b < ds.basins().size(); ++b) out.push_back(nse(basin_hydrograph(ds, b, pred, scalers)));
    return out;
}

inline Metric median_of(const std::vector<Metric>& v) {
    return aggregate(std::span<const Metric>(v), AggregateKind::Median).center;
}

// ---------------------------------------------------------------------------
// Epoch loop

struct TrainResult {
    ModelCheckpoint checkpoint;
    TrainHistory history;
};

namespace detail {

/// Loss value and d(loss)/d(pred) for one chunk of a batch of `batch_n` samples.
/// For RMSE this returns the MSE gradient; the caller rescales the summed gradient.
inline double chunk_loss_grad(LossKind kind, const Eigen::VectorXd& pred, const Eigen::VectorXd& obs,
                              const Eigen::VectorXd& weight, double batch_n, Eigen::VectorXd& d_pred) {
    const Eigen::VectorXd diff = pred - obs;
    if (kind == LossKind::NSE) {
        d_pred = (2.0 / batch_n) * diff.cwiseProduct(weight);
        return diff.cwiseProduct(diff).cwiseProduct(weight).sum();
    }
    d_pred = (2.0 / batch_n) * diff;
    return diff.squaredNorm();
}

inline bool head_only(const TrainableMask& m) {
    for (std::size_t i = 0; i < kNumParams; ++i) {
        const bool is_head = i == static_cast<std::size_t>(Param::HeadW) || i == static_cast<std::size_t>(Param::HeadB);
        if (m[i] && !is_head) return false;
    }
    return true;
}

} // namespace detail

/// Trains `start` for cfg.epochs epochs on `data`, updating only tensors enabled in `mask`.
/// Returns the final-epoch checkpoint; scalers are carried over unchanged.
inline TrainResult train(const ModelCheckpoint& start, const TrainData& data, const TrainConfig& cfg,
                         const TrainableMask& mask) {
    cfg.validate();
    start.validate();
    TrainResult result{start, {}};
    if (cfg.epochs == 0) return result;
    if (data.train.empty()) throw DataError("train: zero training samples");

    const auto& config = start.config;
    const auto& scalers = start.scalers;
    if (data.train.seq_len() != config.seq_len || (!data.valid.empty() && data.valid.seq_len() != config.seq_len))
        throw PreconditionError("train: dataset sequence length does not match the model");

    const auto n = data.train.size();
    Eigen::VectorXd sample_weight = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
    if (cfg.loss == LossKind::NSE) {
        if (data.basin_std.size() != data.train.basins().size())
            throw DataError("train: NSE loss selected but per-basin flow std is unavailable");
        for (std::size_t i = 0; i < n; ++i) {
            const double s = data.basin_std[data.train.samples()[i].basin];
            if (!std::isfinite(s))
                throw DataError("train: NSE loss selected but per-basin flow std is unavailable for " +
                                data.train.basins()[data.train.samples()[i].basin].basin_id);
            sample_weight(static_cast<Eigen::Index>(i)) = 1.0 / ((s + cfg.nse_eps) * (s + cfg.nse_eps));
        }
    }

    ModelParams& params = result.checkpoint.params;
    OptimizerState opt_state = OptimizerState::for_params(params);
    const AdamOptions adam{0.9, 0.999, 1e-8, cfg.clip_norm};
    const bool fast_head = detail::head_only(mask);
    const GradientScope scope{
        mask[static_cast<std::size_t>(Param::LstmWih)] || mask[static_cast<std::size_t>(Param::LstmWhh)] ||
            mask[static_cast<std::size_t>(Param::LstmB)] || mask[static_cast<std::size_t>(Param::EmbedW)] ||
            mask[static_cast<std::size_t>(Param::EmbedB)],
        mask[static_cast<std::size_t>(Param::EmbedW)] || mask[static_cast<std::size_t>(Param::EmbedB)]};

    // With only the head trainable the LSTM is a fixed feature extractor.
    Eigen::MatrixXd train_features, valid_features;
    if (fast_head) {
        train_features = hidden_features(params, config, data.train);
        if (!data.valid.empty()) valid_features = hidden_features(params, config, data.valid);
    }
    Eigen::VectorXd train_targets(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = data.train.samples()[i];
        train_targets(static_cast<Eigen::Index>(i)) =
            data.train.basins()[s.basin].flow(static_cast<Eigen::Index>(s.target));
    }

    std::vector<std::size_t> order(n);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = cfg.lr_for_epoch(epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x5eed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        const long skipped_before = opt_state.skipped;
        std::size_t batch_no = 0;
        for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(cfg.batch_size), ++batch_no) {
            const std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(cfg.batch_size));
            const double batch_n = static_cast<double>(b1 - b0);
            ModelParams grads = ModelParams::zeros_like(params);
            double sq_err = 0.0;
            std::size_t chunk_no = 0;
            for (std::size_t c0 = b0; c0 < b1; c0 += kTrainChunk, ++chunk_no) {
                const std::size_t c1 = std::min(b1, c0 + kTrainChunk);
                const std::span<const std::size_t> ids(order.data() + c0, c1 - c0);
                const auto m = static_cast<Eigen::Index>(ids.size());
                Eigen::VectorXd obs(m), weight(m);
                for (Eigen::Index j = 0; j < m; ++j) {
                    obs(j) = train_targets(static_cast<Eigen::Index>(ids[static_cast<std::size_t>(j)]));
                    weight(j) = sample_weight(static_cast<Eigen::Index>(ids[static_cast<std::size_t>(j)]));
                }
                const auto dropout_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), batch_no, chunk_no);
                Eigen::VectorXd d_pred;
                if (fast_head) {
                    Eigen::MatrixXd feats(config.hidden_size, m);
                    for (Eigen::Index j = 0; j < m; ++j)
                        feats.col(j) = train_features.col(static_cast<Eigen::Index>(ids[static_cast<std::size_t>(j)]));
                    feats.array() *= detail::dropout_scale(config, m, Mode::Train, dropout_seed).array();
                    const Eigen::VectorXd pred = apply_head(params, feats);
                    if (!pred.allFinite()) throw DataError("train: non-finite prediction");
                    sq_err += detail::chunk_loss_grad(cfg.loss, pred, obs, weight, batch_n, d_pred);
                    head_backward(feats, d_pred, grads);
                } else {
                    const auto batch = data.train.make_batch(ids);
                    auto fr = forward(params, config, batch, Mode::Train, dropout_seed);
                    if (!fr.predictions.allFinite()) throw DataError("train: non-finite prediction");
                    sq_err += detail::chunk_loss_grad(cfg.loss, fr.predictions, obs, weight, batch_n, d_pred);
                    grads += backward(params, fr.cache, d_pred, scope);
                }
            }
            double batch_loss = sq_err / batch_n;
            if (cfg.loss == LossKind::RMSE) {
                batch_loss = std::sqrt(batch_loss);
                const double scale = batch_loss > 0.0 ? 1.0 / (2.0 * batch_loss) : 0.0;
                for (auto& t : grads.tensors) t *= scale;
            }
            loss_sum += batch_loss * batch_n;
            adam_step(params, std::move(grads), opt_state, lr, mask, adam);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(n);
        rec.skipped_steps = opt_state.skipped - skipped_before;
        const bool do_val = !data.valid.empty() && (epoch == cfg.epochs ||
                                                     (cfg.validate_every > 0 && epoch % cfg.validate_every == 0));
        if (do_val) {
            const Eigen::VectorXd pred =
                fast_head ? apply_head(params, valid_features) : predict_dataset(params, config, data.valid);
            rec.val_nse_median = median_of(per_basin_nse(data.valid, pred, scalers));
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.epochs.push_back(rec);
    }

    auto& prov = result.checkpoint.provenance;
    prov.seed = cfg.seed;
    prov.epochs = cfg.epochs;
    prov.batch_size = cfg.batch_size;
    prov.data_fingerprint = hex64(fingerprint(data.train));
    return result;
}

// ---------------------------------------------------------------------------
// Multi-basin pre-training and the single-basin baseline

/// Builds train/valid windows for `records` with fixed scalers. s(b) comes from the
/// scaler set when present, otherwise from the basin's own training period.
inline TrainData make_train_data(std::span<const BasinRecord> records, const ScalerSet& scalers,
                                 const SplitPolicy& split, int seq_len = kLookbackDays) {
    TrainData d{WindowDataset(seq_len), WindowDataset(seq_len), {}};
    for (const auto& rec : records) {
        d.train.add(rec, scalers, split.period(rec, Subset::Train));
        d.valid.add(rec, scalers, split.period(rec, Subset::Valid));
        if (auto s = scalers.basin_std_standardized(rec.basin_id)) {
            d.basin_std.push_back(*s);
            continue;
        }
        const auto [b, e] = detail::period_range(rec, split.period(rec, Subset::Train));
        std::vector<double> flows;
        for (std::size_t i = b; i < e; ++i) flows.push_back(rec.streamflow(static_cast<Eigen::Index>(i)));
        const auto m = detail::moments(flows);
        d.basin_std.push_back(m.n >= 2 ? m.std / scalers.flow_std : kNaN);
    }
    return d;
}

/// Pre-trains a fresh model on every record jointly.
inline TrainResult pretrain(std::span<const BasinRecord> records, const SplitPolicy& split, ModelConfig config,
                            const TrainConfig& cfg) {
    if (records.empty()) throw DataError("pretrain: no basins");
    ModelCheckpoint init;
    init.scalers = compute_scalers(records, split);
    config.n_dyn = static_cast<int>(init.scalers.n_dyn());
    config.n_stat = static_cast<int>(init.scalers.n_stat());
    init.config = config;
    init.params = init_model(config, cfg.seed);
    init.provenance.seed = cfg.seed;
    init.provenance.batch_size = cfg.batch_size;
    const auto data = make_train_data(records, init.scalers, split, config.seq_len);
    return train(init, data, cfg, all_trainable());
}

struct SingleBasinResult {
    bool trainable = false;
    std::string reason; // set when untrainable
    TrainResult result;
};

/// Fresh model of `hidden_size` trained on one basin, scalers from that basin alone.
inline SingleBasinResult train_single_basin(const BasinRecord& rec, const SplitPolicy& split, const TrainConfig& cfg,
                                            int hidden_size, ModelConfig base = {}) {
    SingleBasinResult out;
    const auto [b, e] = detail::period_range(rec, split.period(rec, Subset::Train));
    bool has_flow = false;
    for (std::size_t i = b; i < e && !has_flow; ++i) has_flow = std::isfinite(rec.streamflow(static_cast<Eigen::Index>(i)));
    if (b == e || !has_flow) {
        out.reason = "no data within the training period";
        return out;
    }
    ModelCheckpoint init;
    const std::span<const BasinRecord> one(&rec, 1);
    init.scalers = compute_scalers(one, split);
    base.hidden_size = hidden_size;
    base.n_dyn = static_cast<int>(init.scalers.n_dyn());
    base.n_stat = static_cast<int>(init.scalers.n_stat());
    init.config = base;
    init.params = init_model(base, cfg.seed);
    const auto data = make_train_data(one, init.scalers, split, base.seq_len);
    if (data.train.empty()) {
        out.reason = "no training windows";
        return out;
    }
    out.trainable = true;
    out.result = train(init, data, cfg, all_trainable());
    return out;
}

} // namespace fineflood
