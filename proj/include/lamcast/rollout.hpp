#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lamcast/dataset.hpp"
#include "lamcast/edm.hpp"
#include "lamcast/grid.hpp"
#include "lamcast/rng.hpp"
#include "lamcast/toyworld.hpp"

namespace lamcast {

// Source of prescribed boundary values (raw units, [d, m_b] columns in mask
// order). boundary_at(t) is the actual boundary at data time t; future_at(t)
// is what the model is shown as X_B^{t+1} during conditioning — the ablation
// hook.
template <typename T>
class BoundaryProvider {
public:
    virtual ~BoundaryProvider() = default;
    virtual Tensor<T> boundary_at(std::int64_t t) const = 0;
    virtual Tensor<T> future_at(std::int64_t t) const = 0;
    virtual std::string kind() const = 0;
};

// Boundary read from a reference trajectory — the stand-in for boundary
// forcing obtained from a global forecasting model.
template <typename T>
class TruthBoundary : public BoundaryProvider<T> {
public:
    TruthBoundary(std::shared_ptr<const std::vector<Tensor<T>>> states,
                  std::shared_ptr<RegionMask> mask)
        : states_(std::move(states)), mask_(std::move(mask)) {}

    Tensor<T> boundary_at(std::int64_t t) const override {
        if (t < 0 || t >= std::int64_t(states_->size()))
            throw io_error("boundary provider covers times [0, " +
                           std::to_string(states_->size() - 1) + "], requested " +
                           std::to_string(t));
        return gather_region((*states_)[size_t(t)], *mask_->boundary_cells());
    }
    Tensor<T> future_at(std::int64_t t) const override { return boundary_at(t); }
    std::string kind() const override { return "truth"; }

protected:
    std::shared_ptr<const std::vector<Tensor<T>>> states_;
    std::shared_ptr<RegionMask> mask_;
};

// Ablation: the future boundary X_B^{t+1} is replaced by persistence of
// X_B^t at input assembly. Actual boundaries (used for splicing the output
// state) are unchanged.
template <typename T>
class NoFutureBoundary : public TruthBoundary<T> {
public:
    using TruthBoundary<T>::TruthBoundary;
    Tensor<T> future_at(std::int64_t t) const override {
        require(t >= 1, "NoFutureBoundary: persistence needs a state before time " +
                            std::to_string(t));
        return this->boundary_at(t - 1);
    }
    std::string kind() const override { return "no_future"; }
};

inline nlohmann::json schedule_json(const NoiseSchedule& s) {
    return {{"sigma_min", s.sigma_min},
            {"sigma_max", s.sigma_max},
            {"rho", s.rho},
            {"steps", s.steps}};
}

inline NoiseSchedule schedule_from_json(const nlohmann::json& j) {
    NoiseSchedule s;
    s.sigma_min = j.at("sigma_min").get<double>();
    s.sigma_max = j.at("sigma_max").get<double>();
    s.rho = j.at("rho").get<double>();
    s.steps = j.at("steps").get<std::int64_t>();
    s.validate();
    return s;
}

// Everything a forecast step needs besides the evolving state pair.
template <typename T>
struct RolloutInputs {
    const DenoiserInterface<T>* denoiser = nullptr;
    const BoundaryProvider<T>* provider = nullptr;
    const std::vector<Tensor<T>>* forcings = nullptr;  // indexed by data time
    const Tensor<T>* statics = nullptr;
    const NormStats* stats = nullptr;
    std::shared_ptr<RegionMask> mask;
    NoiseSchedule schedule = NoiseSchedule::inference_defaults();

    void validate() const {
        require(denoiser && provider && forcings && statics && stats && mask,
                "RolloutInputs: incomplete wiring");
        schedule.validate();
    }
};

// One autoregressive step: assemble conditioning (with the provider's future
// boundary), sample a residual via the probability-flow sampler, decode, and
// splice the provider's actual boundary into the output. Inputs and output
// are raw full-grid states at data times t-1, t, t+1.
template <typename T>
Tensor<T> forecast_step(const RolloutInputs<T>& in, const Tensor<T>& x_prev,
                        const Tensor<T>& x_curr, std::int64_t t, RngStream& rng) {
    in.validate();
    const RegionMask& mask = *in.mask;
    if (t + 1 >= std::int64_t(in.forcings->size()))
        throw io_error("forecast_step: no forcing available at time " + std::to_string(t + 1));

    const Tensor<T> std_prev = standardize(x_prev, *in.stats);
    const Tensor<T> std_curr = standardize(x_curr, *in.stats);

    // Future state slice: only its boundary cells are read downstream.
    Tensor<T> std_next = Tensor<T>::zeros(std_curr.shape());
    scatter_region(standardize(in.provider->future_at(t + 1), *in.stats),
                   *mask.boundary_cells(), std_next);

    const ConditioningPair<T> cond = assemble_conditioning(
        std_prev, std_curr, std_next, (*in.forcings)[size_t(t - 1)],
        (*in.forcings)[size_t(t)], (*in.forcings)[size_t(t + 1)], *in.statics, in.mask);

    const Shape rshape{std_curr.dim(0), mask.interior_height(), mask.interior_width()};
    const Tensor<T> z0 = sample_initial_latent<T>(in.schedule, rshape, rng);
    const Tensor<T> residual = heun_sample(*in.denoiser, z0, cond, in.schedule);

    const Tensor<T> std_curr_int =
        gather_region(std_curr, *mask.interior_cells()).reshaped(rshape);
    const Tensor<T> std_next_int = residual_decode(std_curr_int, residual, *in.stats);
    const Tensor<T> raw_int = unstandardize(std_next_int, *in.stats);

    // Output: predicted interior, prescribed boundary (bit-exact splice).
    Tensor<T> out = Tensor<T>::zeros(x_curr.shape());
    scatter_region(raw_int.reshaped(Shape{rshape[0], mask.num_interior()}),
                   *mask.interior_cells(), out);
    scatter_region(in.provider->boundary_at(t + 1), *mask.boundary_cells(), out);
    if (!out.all_finite())
        throw numeric_error("forecast_step: non-finite state at time " + std::to_string(t + 1));
    return out;
}

// Identifies one ensemble member's RNG lineage; step s of member (init, e)
// always draws from the same substream no matter who computes it.
struct MemberKey {
    std::uint64_t master_seed = 0;
    std::int64_t init_index = 0;
    std::int64_t member = 0;

    std::uint64_t stream_for_step(std::int64_t step) const {
        return stream_id(StreamKind::forecast_latent, std::uint64_t(init_index),
                         std::uint64_t(member), std::uint64_t(step));
    }
};

// Autoregressive rollout: step t+1 consumes the predicted state as the
// newest input. With `teacher` set, inputs are truth states instead
// (diagnostic mode); outputs are still full forecast states.
template <typename T>
std::vector<Tensor<T>> rollout(const RolloutInputs<T>& in, Tensor<T> x_prev, Tensor<T> x_curr,
                               std::int64_t t0, std::int64_t steps, const MemberKey& key,
                               const std::vector<Tensor<T>>* teacher = nullptr) {
    require(steps >= 1, "rollout: need at least one step");
    std::vector<Tensor<T>> out;
    out.reserve(size_t(steps));
    for (std::int64_t lead = 1; lead <= steps; ++lead) {
        const std::int64_t t = t0 + lead - 1;
        RngStream rng(key.master_seed, key.stream_for_step(lead));
        Tensor<T> next;
        try {
            next = forecast_step(in, x_prev, x_curr, t, rng);
        } catch (const numeric_error& e) {
            throw numeric_error(std::string(e.what()) + " (lead " + std::to_string(lead) +
                                ", member " + std::to_string(key.member) + ")");
        }
        out.push_back(next);
        if (teacher) {
            x_prev = (*teacher)[size_t(t)];
            x_curr = (*teacher)[size_t(t + 1)];
        } else {
            x_prev = std::move(x_curr);
            x_curr = out.back();
        }
    }
    return out;
}

struct EnsembleConfig {
    std::int64_t steps = 19;
    std::int64_t n_ens = 5;
    std::int64_t init_time = 1;
    std::uint64_t master_seed = 0;
    bool no_future = false;
    int threads = 1;
    NoiseSchedule schedule = NoiseSchedule::inference_defaults();

    void validate() const {
        if (steps < 1) throw config_error("EnsembleConfig: steps must be >= 1");
        if (n_ens < 1) throw config_error("EnsembleConfig: n_ens must be >= 1");
        if (init_time < 1) throw config_error("EnsembleConfig: init_time must be >= 1");
        if (threads < 1) throw config_error("EnsembleConfig: threads must be >= 1");
        schedule.validate();
    }
};

// Full ensemble over several initializations. Members are independent tasks
// over read-only inputs; the result is assembled by (init, member) index and
// therefore invariant to the thread count.
template <typename T>
ForecastSet<T> ensemble_forecast(const DenoiserInterface<T>& denoiser, const Dataset<T>& data,
                                 const std::vector<std::int64_t>& init_trajs,
                                 const EnsembleConfig& cfg, double* wall_seconds = nullptr) {
    cfg.validate();
    require(!init_trajs.empty(), "ensemble_forecast: no initializations");
    const auto t_start = std::chrono::steady_clock::now();
    auto mask = std::make_shared<RegionMask>(data.grid.height, data.grid.width,
                                             data.grid.boundary_width);

    ForecastSet<T> fc;
    fc.grid = data.grid;
    fc.n_inits = std::int64_t(init_trajs.size());
    fc.n_ens = cfg.n_ens;
    fc.steps = cfg.steps;
    fc.init_time = cfg.init_time;
    fc.init_trajectories = init_trajs;
    fc.master_seed = cfg.master_seed;
    fc.boundary_provider = cfg.no_future ? "no_future" : "truth";
    fc.schedule = schedule_json(cfg.schedule);
    fc.states.resize(size_t(fc.n_inits * fc.n_ens * fc.steps));

    // Per-init read-only context, shared by that init's members.
    struct InitCtx {
        std::shared_ptr<const std::vector<Tensor<T>>> states;
        std::unique_ptr<BoundaryProvider<T>> provider;
        RolloutInputs<T> inputs;
    };
    std::vector<InitCtx> ctxs(init_trajs.size());
    for (size_t i = 0; i < init_trajs.size(); ++i) {
        const auto& traj = data.trajectories.at(size_t(init_trajs[i]));
        if (cfg.init_time + cfg.steps >= std::int64_t(traj.states.size()))
            throw config_error("ensemble_forecast: trajectory too short for requested horizon");
        ctxs[i].states = std::shared_ptr<const std::vector<Tensor<T>>>(
            &traj.states, [](const std::vector<Tensor<T>>*) {});
        if (cfg.no_future)
            ctxs[i].provider = std::make_unique<NoFutureBoundary<T>>(ctxs[i].states, mask);
        else
            ctxs[i].provider = std::make_unique<TruthBoundary<T>>(ctxs[i].states, mask);
        ctxs[i].inputs = RolloutInputs<T>{&denoiser,       ctxs[i].provider.get(),
                                          &traj.forcings,  &traj.statics,
                                          &data.stats,     mask,
                                          cfg.schedule};
    }

    const std::int64_t n_tasks = fc.n_inits * fc.n_ens;
    auto run_task = [&](std::int64_t task) {
        const std::int64_t init = task / cfg.n_ens, member = task % cfg.n_ens;
        const InitCtx& ctx = ctxs[size_t(init)];
        const MemberKey key{cfg.master_seed, init_trajs[size_t(init)], member};
        auto traj = rollout(ctx.inputs, (*ctx.states)[size_t(cfg.init_time - 1)],
                            (*ctx.states)[size_t(cfg.init_time)], cfg.init_time, cfg.steps, key);
        for (std::int64_t lead = 1; lead <= cfg.steps; ++lead)
            fc.states[size_t(task * cfg.steps + lead - 1)] = std::move(traj[size_t(lead - 1)]);
    };

    if (cfg.threads == 1) {
        for (std::int64_t task = 0; task < n_tasks; ++task) run_task(task);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(size_t(cfg.threads));
        for (int w = 0; w < cfg.threads; ++w)
            pool.emplace_back([&, w] {
                for (std::int64_t task = w; task < n_tasks; task += cfg.threads)
                    run_task(task);
            });
        for (auto& th : pool) th.join();
    }
    if (wall_seconds)
        *wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return fc;
}

// Trivial reference forecasts, packaged like a 1-member ensemble.
// Persistence repeats the initialization state; climatology repeats the
// training-set mean field.
template <typename T>
ForecastSet<T> baseline_forecast(const Dataset<T>& data,
                                 const std::vector<std::int64_t>& init_trajs,
                                 const std::string& kind, const EnsembleConfig& cfg) {
    cfg.validate();
    require(!init_trajs.empty(), "baseline_forecast: no initializations");
    if (kind != "persistence" && kind != "climatology")
        throw config_error("baseline_forecast: unknown baseline '" + kind + "'");

    ForecastSet<T> fc;
    fc.grid = data.grid;
    fc.n_inits = std::int64_t(init_trajs.size());
    fc.n_ens = 1;
    fc.steps = cfg.steps;
    fc.init_time = cfg.init_time;
    fc.init_trajectories = init_trajs;
    fc.master_seed = cfg.master_seed;
    fc.boundary_provider = "none";
    fc.baseline = kind;
    fc.schedule = nlohmann::json::object();
    fc.states.reserve(size_t(fc.n_inits * fc.steps));

    Tensor<T> clim;
    if (kind == "climatology") {
        std::vector<std::vector<Tensor<T>>> train;
        for (std::int64_t ti : data.split.indices("train"))
            train.push_back(data.trajectories.at(size_t(ti)).states);
        clim = climatology_mean(train);
    }
    for (std::int64_t init : init_trajs) {
        const auto& traj = data.trajectories.at(size_t(init));
        if (cfg.init_time + cfg.steps >= std::int64_t(traj.states.size()))
            throw config_error("baseline_forecast: trajectory too short for requested horizon");
        const Tensor<T>& fixed =
            (kind == "persistence") ? traj.states[size_t(cfg.init_time)] : clim;
        for (std::int64_t lead = 1; lead <= cfg.steps; ++lead) fc.states.push_back(fixed);
    }
    return fc;
}

}  // namespace lamcast
