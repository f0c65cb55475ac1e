#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "lamcast/autodiff.hpp"
#include "lamcast/dataset.hpp"
#include "lamcast/denoiser.hpp"
#include "lamcast/edm.hpp"
#include "lamcast/grid.hpp"
#include "lamcast/rng.hpp"

namespace lamcast {

// Per-variable loss weights: level weight h from the grid catalogue and the
// residual scale lambda. Residual targets are standardized to unit variance,
// so lambda defaults to 1; the inverse-variance form 1/sigma_res^2 stays
// available behind a flag.
struct LossWeights {
    std::vector<double> h;
    std::vector<double> lambda;

    static LossWeights make(const GridSpec& grid, const NormStats& stats,
                            bool inverse_variance) {
        LossWeights w;
        w.h = grid.level_weight;
        w.lambda.resize(grid.var_names.size(), 1.0);
        if (inverse_variance) {
            for (size_t d = 0; d < w.lambda.size(); ++d) {
                const double s = stats.res_stddev[d];
                w.lambda[d] = 1.0 / (s * s);
            }
        }
        w.validate();
        return w;
    }

    void validate() const {
        if (h.empty() || h.size() != lambda.size())
            throw config_error("LossWeights: weight vectors empty or mismatched");
        for (double v : h)
            if (!(v > 0)) throw config_error("LossWeights: level weights must be positive");
        for (double v : lambda)
            if (!(v > 0)) throw config_error("LossWeights: residual scales must be positive");
    }

    // Combined per-channel factor h_l * lambda_d * omega_n.
    std::vector<double> channel_weights(double omega) const {
        std::vector<double> w(h.size());
        for (size_t d = 0; d < h.size(); ++d) w[d] = h[d] * lambda[d] * omega;
        return w;
    }
};

// (1/|G_I|) sum_g sum_d h_l lambda_d omega_n (pred - target)^2 over
// interior-shaped standardized states.
template <typename T>
double wmse_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& weights,
                 double omega) {
    check_same_shape(pred, target, "wmse_loss");
    require(pred.rank() >= 2, "wmse_loss: operands must be [d, ...]");
    const std::int64_t d = pred.dim(0), M = pred.numel() / d;
    require(std::int64_t(weights.h.size()) == d, "wmse_loss: weights cover " +
                std::to_string(weights.h.size()) + " variables, operands have " +
                std::to_string(d));
    double acc = 0.0;
    for (std::int64_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::int64_t g = 0; g < M; ++g) {
            const double e = double(pred[c * M + g]) - double(target[c * M + g]);
            s += e * e;
        }
        acc += weights.h[size_t(c)] * weights.lambda[size_t(c)] * omega * s;
    }
    return acc / double(M);
}

struct StageSpec {
    std::int64_t epochs = 0;
    double lr = 0.0;
};

struct TrainConfig {
    std::vector<StageSpec> stages{{60, 1e-3}, {40, 1e-4}, {20, 1e-5}};
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    std::int64_t batch_size = 4;
    std::uint64_t master_seed = 0;
    bool lambda_inverse_variance = false;

    void validate() const {
        if (stages.empty()) throw config_error("TrainConfig: no training stages");
        for (const auto& s : stages) {
            if (s.epochs <= 0) throw config_error("TrainConfig: stage epochs must be > 0");
            if (!(s.lr > 0)) throw config_error("TrainConfig: learning rates must be > 0");
        }
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
            throw config_error("TrainConfig: betas must lie in [0, 1)");
        if (!(weight_decay >= 0)) throw config_error("TrainConfig: weight decay must be >= 0");
        if (!(grad_clip > 0)) throw config_error("TrainConfig: gradient clip must be > 0");
        if (batch_size < 1) throw config_error("TrainConfig: batch size must be >= 1");
    }

    std::int64_t total_epochs() const {
        std::int64_t n = 0;
        for (const auto& s : stages) n += s.epochs;
        return n;
    }

    // Stage number (1-based) and learning rate for an absolute epoch index.
    std::pair<int, double> stage_at(std::int64_t epoch) const {
        std::int64_t base = 0;
        for (size_t i = 0; i < stages.size(); ++i) {
            base += stages[i].epochs;
            if (epoch < base) return {int(i) + 1, stages[i].lr};
        }
        throw contract_error("TrainConfig: epoch " + std::to_string(epoch) +
                             " beyond schedule of " + std::to_string(total_epochs()));
    }
};

inline nlohmann::json to_json(const TrainConfig& cfg) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : cfg.stages) stages.push_back({{"epochs", s.epochs}, {"lr", s.lr}});
    return {{"stages", stages},
            {"beta1", cfg.beta1},
            {"beta2", cfg.beta2},
            {"weight_decay", cfg.weight_decay},
            {"adam_eps", cfg.adam_eps},
            {"grad_clip", cfg.grad_clip},
            {"batch_size", cfg.batch_size},
            {"master_seed", cfg.master_seed},
            {"lambda_inverse_variance", cfg.lambda_inverse_variance}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.stages.clear();
    for (const auto& s : j.at("stages"))
        cfg.stages.push_back({s.at("epochs").get<std::int64_t>(), s.at("lr").get<double>()});
    cfg.beta1 = j.at("beta1").get<double>();
    cfg.beta2 = j.at("beta2").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.adam_eps = j.at("adam_eps").get<double>();
    cfg.grad_clip = j.at("grad_clip").get<double>();
    cfg.batch_size = j.at("batch_size").get<std::int64_t>();
    cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    cfg.lambda_inverse_variance = j.at("lambda_inverse_variance").get<bool>();
    cfg.validate();
    return cfg;
}

inline nlohmann::json to_json(const DenoiserArch& a) {
    return {{"num_vars", a.num_vars},
            {"interior_channels", a.interior_channels},
            {"boundary_channels", a.boundary_channels},
            {"latent_width", a.latent_width},
            {"level1_width", a.level1_width},
            {"level2_width", a.level2_width},
            {"emb_width", a.emb_width},
            {"fourier_freqs", a.fourier_freqs},
            {"fourier_base_period", a.fourier_base_period}};
}

inline DenoiserArch arch_from_json(const nlohmann::json& j) {
    DenoiserArch a;
    a.num_vars = j.at("num_vars").get<std::int64_t>();
    a.interior_channels = j.at("interior_channels").get<std::int64_t>();
    a.boundary_channels = j.at("boundary_channels").get<std::int64_t>();
    a.latent_width = j.at("latent_width").get<std::int64_t>();
    a.level1_width = j.at("level1_width").get<std::int64_t>();
    a.level2_width = j.at("level2_width").get<std::int64_t>();
    a.emb_width = j.at("emb_width").get<std::int64_t>();
    a.fourier_freqs = j.at("fourier_freqs").get<std::int64_t>();
    a.fourier_base_period = j.at("fourier_base_period").get<double>();
    a.validate();
    return a;
}

// Adaptive-moment state with decoupled weight decay (AdamW).
template <typename T>
struct OptimizerState {
    std::int64_t step = 0;
    std::vector<Tensor<T>> m, v;

    static OptimizerState zeros_like(const ParamSet<T>& params) {
        OptimizerState s;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const auto& p : params.values) {
            s.m.push_back(Tensor<T>::zeros(p.shape()));
            s.v.push_back(Tensor<T>::zeros(p.shape()));
        }
        return s;
    }
};

// One AdamW update with bias correction; decay is applied directly to the
// parameters, scaled by lr, independent of the gradient moments.
template <typename T>
void optimizer_update(ParamSet<T>& params, const std::vector<Tensor<T>>& grads,
                      OptimizerState<T>& state, double lr, const TrainConfig& cfg) {
    require(grads.size() == params.size() && state.m.size() == params.size(),
            "optimizer_update: state/gradient count mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = params.values[i];
        check_same_shape(p, grads[i], "optimizer_update");
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            const double g = double(grads[i][j]);
            const double m = cfg.beta1 * double(state.m[i][j]) + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * double(state.v[i][j]) + (1.0 - cfg.beta2) * g * g;
            state.m[i][j] = T(m);
            state.v[i][j] = T(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
            p[j] = T(double(p[j]) - lr * update - lr * cfg.weight_decay * double(p[j]));
        }
    }
}

// Scale gradients in place so their global norm does not exceed max_norm.
template <typename T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (std::int64_t j = 0; j < g.numel(); ++j) sq += double(g[j]) * double(g[j]);
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const T s = T(max_norm / norm);
        for (auto& g : grads)
            for (std::int64_t j = 0; j < g.numel(); ++j) g[j] = T(g[j] * s);
    }
    return norm;
}

struct EpochLog {
    std::int64_t epoch = 0;
    int stage = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double wall_seconds = 0.0;
};

// Single-step denoising trainer: each sample draws a noise level and noise,
// denoises the residual target once, and scores the decoded next state with
// the weighted MSE. No autoregressive unrolling.
template <typename T>
class Trainer {
public:
    Trainer(CondDenoiserNet<T>& net, const Dataset<T>& data, TrainConfig cfg)
        : net_(net),
          data_(data),
          cfg_(std::move(cfg)),
          mask_(net.mask()),
          schedule_(NoiseSchedule::training_defaults()),
          weights_(LossWeights::make(data.grid, data.stats, cfg_.lambda_inverse_variance)) {
        cfg_.validate();
        schedule_.validate();
        data_.grid.validate();
        prepare();
    }

    const LossWeights& weights() const { return weights_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    std::int64_t num_train_samples() const { return std::int64_t(train_pairs_.size()); }

    // One pass over the training pairs in a seeded shuffled order.
    EpochLog train_epoch(std::int64_t epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto [stage, lr] = cfg_.stage_at(epoch);
        RngStream rng(cfg_.master_seed,
                      stream_id(StreamKind::train_epoch, std::uint64_t(epoch), 0, 0));
        std::vector<size_t> order(train_pairs_.size());
        std::iota(order.begin(), order.end(), size_t(0));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[size_t(rng.uniform_below(std::uint64_t(i)))]);

        double loss_sum = 0.0;
        std::int64_t batches = 0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg_.batch_size)) {
            const size_t stop = std::min(order.size(), start + size_t(cfg_.batch_size));
            std::vector<size_t> batch(order.begin() + std::ptrdiff_t(start),
                                      order.begin() + std::ptrdiff_t(stop));
            loss_sum += train_step(batch, lr, rng);
            ++batches;
        }
        EpochLog log;
        log.epoch = epoch;
        log.stage = stage;
        log.lr = lr;
        log.train_loss = loss_sum / double(std::max<std::int64_t>(1, batches));
        log.val_loss = validation_loss();
        log.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return log;
    }

    // One optimizer update from the mean loss of a batch of sample indices.
    double train_step(const std::vector<size_t>& batch, double lr, RngStream& rng) {
        require(!batch.empty(), "train_step: empty batch");
        Tape<T> tape;
        std::vector<VarId> param_ids = net_.push_params(tape);
        VarId total{};
        bool first = true;
        for (size_t bi = 0; bi < batch.size(); ++bi) {
            const auto [ti, t] = train_pairs_[batch[bi]];
            const TrainingNoise<T> noise =
                sample_training_noise<T>(schedule_, target_shape(), rng);
            VarId sample_loss;
            try {
                sample_loss = sample_loss_graph(tape, param_ids, ti, t, noise);
            } catch (const numeric_error& e) {
                throw numeric_error(std::string(e.what()) + " (sigma=" +
                                    std::to_string(noise.sigma) + ", batch index " +
                                    std::to_string(bi) + ")");
            }
            total = first ? sample_loss : ops::add(tape, total, sample_loss);
            first = false;
        }
        total = ops::affine_scalar(tape, total, T(1.0 / double(batch.size())), T(0));
        const double loss = double(tape.value(total)[0]);
        if (!is_finite_value(loss))
            throw numeric_error("train_step: non-finite batch loss");
        tape.backward(total);

        std::vector<Tensor<T>> grads;
        grads.reserve(param_ids.size());
        for (VarId id : param_ids) grads.push_back(tape.grad(id));
        clip_global_norm(grads, cfg_.grad_clip);
        optimizer_update(net_.params(), grads, opt_, lr, cfg_);
        return loss;
    }

    // Mean single-step wmse over the validation pairs with a fixed noise
    // draw per pair, so successive epochs are directly comparable.
    double validation_loss() const {
        require(!val_pairs_.empty(), "validation_loss: empty validation split");
        RngStream rng(cfg_.master_seed, stream_id(StreamKind::train_epoch, kValStream, 0, 0));
        Preconditioner pre;
        double acc = 0.0;
        for (const auto& [ti, t] : val_pairs_) {
            const TrainingNoise<T> noise =
                sample_training_noise<T>(schedule_, target_shape(), rng);
            const Tensor<T> r = residual_target(ti, t);
            Tensor<T> z(r.shape());
            for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = r[i] + noise.eps[i];
            const ConditioningPair<T> cond = conditioning(ti, t);
            const Tensor<T> d = apply_denoiser(net_, pre, z, noise.sigma, cond);
            const Tensor<T> pred = residual_decode(interior_state(ti, t), d, data_.stats);
            acc += wmse_loss(pred, interior_state(ti, t + 1), weights_,
                             pre.loss_weight(noise.sigma));
        }
        return acc / double(val_pairs_.size());
    }

    OptimizerState<T>& opt_state() { return opt_; }
    const OptimizerState<T>& opt_state() const { return opt_; }

    // Exposed for tests: conditioning, residual target, and standardized
    // interior state for one (trajectory, time) pair.
    ConditioningPair<T> conditioning(std::int64_t ti, std::int64_t t) const {
        const auto& traj = data_.trajectories[size_t(ti)];
        return assemble_conditioning(std_states_[size_t(ti)][size_t(t - 1)],
                                     std_states_[size_t(ti)][size_t(t)],
                                     std_states_[size_t(ti)][size_t(t + 1)],
                                     traj.forcings[size_t(t - 1)], traj.forcings[size_t(t)],
                                     traj.forcings[size_t(t + 1)], traj.statics, mask_);
    }

    Tensor<T> residual_target(std::int64_t ti, std::int64_t t) const {
        return residual_encode(interior_state(ti, t), interior_state(ti, t + 1), data_.stats);
    }

    Tensor<T> interior_state(std::int64_t ti, std::int64_t t) const {
        const Tensor<T> cols =
            gather_region(std_states_[size_t(ti)][size_t(t)], *mask_->interior_cells());
        return cols.reshaped(target_shape());
    }

    const std::vector<std::pair<std::int64_t, std::int64_t>>& train_pairs() const {
        return train_pairs_;
    }

    static constexpr std::uint64_t kValStream = 0xFFFFFFFFull;

private:
    Shape target_shape() const {
        return Shape{std::int64_t(data_.grid.var_names.size()), mask_->interior_height(),
                     mask_->interior_width()};
    }

    // Loss graph for one sample: D = c_skip Z + c_out F, decode to the
    // standardized next state, score against the truth.
    VarId sample_loss_graph(Tape<T>& tape, const std::vector<VarId>& param_ids,
                            std::int64_t ti, std::int64_t t, const TrainingNoise<T>& noise) {
        const Preconditioner pre;
        const auto co = pre.coeffs(noise.sigma);
        const Tensor<T> r = residual_target(ti, t);
        Tensor<T> z(r.shape()), skip(r.shape()), scaled(r.shape());
        for (std::int64_t i = 0; i < z.numel(); ++i) {
            z[i] = r[i] + noise.eps[i];
            skip[i] = T(co.c_skip * double(z[i]));
            scaled[i] = T(co.c_in * double(z[i]));
        }
        const ConditioningPair<T> cond = conditioning(ti, t);
        VarId f = net_.forward_on(tape, param_ids, scaled, co.c_noise, cond);
        VarId d = ops::add(tape, ops::affine_scalar(tape, f, T(co.c_out), T(0)),
                           tape.constant(std::move(skip)));

        // Decoded prediction: X_hat = std(X^t) + mu_res + sigma_res * D.
        const Tensor<T> x0 = interior_state(ti, t);
        Tensor<T> offset(x0.shape());
        std::vector<T> sig_res(data_.stats.res_stddev.size());
        const std::int64_t M = x0.numel() / x0.dim(0);
        for (std::int64_t c = 0; c < x0.dim(0); ++c) {
            sig_res[size_t(c)] = T(data_.stats.res_stddev[size_t(c)]);
            for (std::int64_t g = 0; g < M; ++g)
                offset[c * M + g] =
                    T(double(x0[c * M + g]) + data_.stats.res_mean[size_t(c)]);
        }
        VarId pred = ops::scale_channels_add(tape, d, sig_res, std::move(offset));

        Tensor<T> neg_target = interior_state(ti, t + 1);
        for (std::int64_t i = 0; i < neg_target.numel(); ++i) neg_target[i] = -neg_target[i];
        VarId diff = ops::add(tape, pred, tape.constant(std::move(neg_target)));
        const auto cw = weights_.channel_weights(pre.loss_weight(noise.sigma));
        std::vector<T> cwt(cw.begin(), cw.end());
        return ops::weighted_sq_mean(tape, diff, cwt);
    }

    void prepare() {
        const auto& names = data_.grid.var_names;
        if (data_.stats.var_names != names)
            throw config_error("Trainer: stats catalogue does not match grid catalogue");
        std_states_.resize(data_.trajectories.size());
        for (size_t ti = 0; ti < data_.trajectories.size(); ++ti) {
            std_states_[ti].reserve(data_.trajectories[ti].states.size());
            for (const auto& s : data_.trajectories[ti].states)
                std_states_[ti].push_back(standardize(s, data_.stats));
        }
        for (std::int64_t ti : data_.split.indices("train")) collect_pairs(ti, train_pairs_);
        for (std::int64_t ti : data_.split.indices("val")) collect_pairs(ti, val_pairs_);
        if (train_pairs_.empty()) throw config_error("Trainer: empty training split");
        if (val_pairs_.empty()) throw config_error("Trainer: empty validation split");
        opt_ = OptimizerState<T>::zeros_like(net_.params());
    }

    void collect_pairs(std::int64_t ti,
                       std::vector<std::pair<std::int64_t, std::int64_t>>& out) const {
        const std::int64_t S = std::int64_t(data_.trajectories[size_t(ti)].states.size());
        require(S >= 3, "Trainer: trajectories need at least 3 states");
        for (std::int64_t t = 1; t + 1 < S; ++t) out.emplace_back(ti, t);
    }

    CondDenoiserNet<T>& net_;
    Dataset<T> data_;
    TrainConfig cfg_;
    std::shared_ptr<RegionMask> mask_;
    NoiseSchedule schedule_;
    LossWeights weights_;
    std::vector<std::vector<Tensor<T>>> std_states_;
    std::vector<std::pair<std::int64_t, std::int64_t>> train_pairs_, val_pairs_;
    OptimizerState<T> opt_;
};

// ---------------------------------------------------------------------------
// Checkpoints: container file with parameters and optimizer state, enough to
// resume mid-schedule bit-exactly and to run forecasts standalone.

template <typename T>
void save_checkpoint(const std::string& path, const CondDenoiserNet<T>& net,
                     const OptimizerState<T>& opt, const TrainConfig& cfg,
                     const GridSpec& grid, const NormStats& stats,
                     std::int64_t epochs_completed, const std::string& config_hash) {
    nlohmann::json header = {{"format", "lamcast-container"},
                             {"version", 1},
                             {"kind", "checkpoint"},
                             {"arch", to_json(net.arch())},
                             {"grid", to_json(grid)},
                             {"stats", to_json(stats)},
                             {"train_config", to_json(cfg)},
                             {"epochs_completed", epochs_completed},
                             {"opt_step", opt.step},
                             {"param_count", net.param_count()},
                             {"config_hash", config_hash}};
    nlohmann::json names = nlohmann::json::array();
    for (const auto& n : net.params().names) names.push_back(n);
    header["param_names"] = names;

    std::vector<float> blob;
    blob.reserve(size_t(net.param_count()) * 3);
    auto append = [&](const Tensor<T>& t) {
        for (std::int64_t i = 0; i < t.numel(); ++i) blob.push_back(float(t[i]));
    };
    for (const auto& p : net.params().values) append(p);
    for (const auto& m : opt.m) append(m);
    for (const auto& v : opt.v) append(v);
    container::write(path, header, blob);
}

template <typename T>
struct LoadedCheckpoint {
    DenoiserArch arch;
    GridSpec grid;
    NormStats stats;
    TrainConfig train_cfg;
    std::int64_t epochs_completed = 0;
    std::string config_hash;
    std::shared_ptr<RegionMask> mask;
    std::shared_ptr<CondDenoiserNet<T>> net;
    OptimizerState<T> opt;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    auto [header, blob] = container::read(path);
    if (header.value("kind", "") != "checkpoint")
        throw io_error("load_checkpoint: '" + path + "' is not a checkpoint file");
    LoadedCheckpoint<T> ck;
    ck.arch = arch_from_json(header.at("arch"));
    ck.grid = grid_from_json(header.at("grid"));
    ck.stats = stats_from_json(header.at("stats"));
    ck.train_cfg = train_config_from_json(header.at("train_config"));
    ck.epochs_completed = header.at("epochs_completed").get<std::int64_t>();
    ck.config_hash = header.value("config_hash", "");
    ck.mask = std::make_shared<RegionMask>(ck.grid.height, ck.grid.width,
                                           ck.grid.boundary_width);
    ck.net = std::make_shared<CondDenoiserNet<T>>(ck.arch, ck.mask);

    const auto names = header.at("param_names").get<std::vector<std::string>>();
    if (names != ck.net->params().names)
        throw config_error("load_checkpoint: parameter manifest does not match architecture");
    const std::int64_t n = ck.net->param_count();
    if (std::int64_t(blob.size()) != 3 * n)
        throw io_error("load_checkpoint: blob holds " + std::to_string(blob.size()) +
                       " floats, expected " + std::to_string(3 * n));
    ck.opt = OptimizerState<T>::zeros_like(ck.net->params());
    ck.opt.step = header.at("opt_step").get<std::int64_t>();
    size_t pos = 0;
    auto take = [&](Tensor<T>& t) {
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = T(blob[pos++]);
    };
    for (auto& p : ck.net->params().values) take(p);
    for (auto& m : ck.opt.m) take(m);
    for (auto& v : ck.opt.v) take(v);
    return ck;
}

// CSV training log: one row per epoch. Wall time is informational and not
// bit-stable across runs; all other columns are.
inline std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,stage,lr,train_loss,val_loss,wall_seconds\n";
    char buf[192];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf), "%lld,%d,%.3e,%.10e,%.10e,%.3f\n",
                      (long long)e.epoch, e.stage, e.lr, e.train_loss, e.val_loss,
                      e.wall_seconds);
        out += buf;
    }
    return out;
}

}  // namespace lamcast
