#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lamcast/grid.hpp"
#include "lamcast/rng.hpp"
#include "lamcast/tensor.hpp"

namespace lamcast {

// Closed-form toy atmosphere. The scalar field theta is the exact solution
// of advection-diffusion under a solid-body rotation wind: Gaussian blobs
// ride the rotation while their widths grow as sqrt(w^2 + 2 kappa t), plus a
// spatially uniform diurnal oscillation. Because the solution is closed-form
// the boundary of the domain can be prescribed exactly at any time, playing
// the role of a perfect outer model driving the limited-area grid.

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

struct BlobSpec {
    double x = 0, y = 0;      // initial center, cell coordinates (col, row)
    double amplitude = 1.0;
    double width = 4.0;       // Gaussian sigma in cells
};

struct ToyWorldConfig {
    GridSpec grid;
    double omega_rot = kTwoPi / 64.0;  // radians per step
    double kappa = 0.05;               // cells^2 per step
    double diurnal_amplitude = 0.4;
    std::int64_t diurnal_period = 8;   // steps; annual analogue is 16x this
    std::vector<BlobSpec> blobs;
    double position_jitter = 6.0;      // per-trajectory blob jitter, cells
    double obs_noise_std = 0.01;       // in per-variable standardized units
    std::int64_t steps = 24;           // states per trajectory = steps + 1
    std::uint64_t seed = 0;

    static ToyWorldConfig defaults() {
        ToyWorldConfig c;
        c.grid.width = 48;
        c.grid.height = 48;
        c.grid.boundary_width = 4;
        c.grid.var_names = {"theta", "u", "v"};
        c.grid.level_weight = {1.0, 0.1, 0.1};
        c.blobs = {{14.0, 17.0, 1.0, 4.0}, {31.0, 14.0, -0.8, 5.0}, {24.0, 33.0, 0.6, 3.5}};
        return c;
    }

    void validate() const {
        grid.validate();
        if (grid.var_names != std::vector<std::string>{"theta", "u", "v"})
            throw config_error("ToyWorldConfig: variable catalogue must be theta,u,v");
        if (kappa < 0) throw config_error("ToyWorldConfig: kappa must be >= 0");
        if (diurnal_period < 2) throw config_error("ToyWorldConfig: diurnal period must be >= 2");
        if (blobs.empty()) throw config_error("ToyWorldConfig: need at least one blob");
        for (const auto& b : blobs)
            if (!(b.width > 0)) throw config_error("ToyWorldConfig: blob widths must be > 0");
        if (obs_noise_std < 0) throw config_error("ToyWorldConfig: noise std must be >= 0");
        if (steps < 2) throw config_error("ToyWorldConfig: need at least 2 steps");
        if (diurnal_amplitude < 0)
            throw config_error("ToyWorldConfig: diurnal amplitude must be >= 0");
    }

    std::int64_t annual_period() const { return 16 * diurnal_period; }
    double center_x() const { return double(grid.width - 1) / 2.0; }
    double center_y() const { return double(grid.height - 1) / 2.0; }
};

// Forcing channel catalogue (all spatially uniform planes).
inline const std::vector<std::string>& forcing_names() {
    static const std::vector<std::string> names = {"sin_diurnal", "cos_diurnal", "sin_annual",
                                                   "cos_annual", "flux"};
    return names;
}
inline const std::vector<std::pair<int, int>>& forcing_sin_cos_pairs() {
    static const std::vector<std::pair<int, int>> pairs = {{0, 1}, {2, 3}};
    return pairs;
}

// Static channel catalogue.
inline const std::vector<std::string>& static_names() {
    static const std::vector<std::string> names = {"topography", "coord_x", "coord_y",
                                                   "boundary_mask", "interior_mask"};
    return names;
}

struct FieldSample {
    double theta, u, v;
};

// Exact field value at continuous coordinates (x, y) and time t (steps).
inline FieldSample analytic_field(const ToyWorldConfig& cfg, double x, double y, double t) {
    const double cx = cfg.center_x(), cy = cfg.center_y();
    const double phi = cfg.omega_rot * t;
    const double cphi = std::cos(phi), sphi = std::sin(phi);
    double theta = cfg.diurnal_amplitude * std::sin(kTwoPi * t / double(cfg.diurnal_period));
    for (const auto& b : cfg.blobs) {
        // Blob center advected by the rotation; spread grown by diffusion.
        const double rx = b.x - cx, ry = b.y - cy;
        const double px = cx + cphi * rx - sphi * ry;
        const double py = cy + sphi * rx + cphi * ry;
        const double s2 = b.width * b.width + 2.0 * cfg.kappa * t;
        const double dx = x - px, dy = y - py;
        theta += b.amplitude * (b.width * b.width / s2) *
                 std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
    }
    return {theta, -cfg.omega_rot * (y - cy), cfg.omega_rot * (x - cx)};
}

template <typename T>
struct Trajectory {
    std::vector<Tensor<T>> states;    // t = 0..steps, each [d_x, H, W]
    std::vector<Tensor<T>> forcings;  // same time axis, each [d_f, H, W]
    Tensor<T> statics;                // [d_s, H, W]
};

// Forcing plane for one time step: diurnal sin/cos, slow annual sin/cos,
// and a nonnegative flux analogue.
template <typename T>
Tensor<T> make_forcing(const ToyWorldConfig& cfg, double t) {
    const std::int64_t H = cfg.grid.height, W = cfg.grid.width;
    const double ad = kTwoPi * t / double(cfg.diurnal_period);
    const double aa = kTwoPi * t / double(cfg.annual_period());
    const double vals[5] = {std::sin(ad), std::cos(ad), std::sin(aa), std::cos(aa),
                            std::max(0.0, std::sin(ad))};
    Tensor<T> f(Shape{5, H, W});
    for (std::int64_t c = 0; c < 5; ++c)
        for (std::int64_t g = 0; g < H * W; ++g) f[c * H * W + g] = T(vals[c]);
    return f;
}

// Static fields: a fixed smooth topography analogue, normalized coordinates,
// and the boundary/interior mask channels.
template <typename T>
Tensor<T> make_statics(const ToyWorldConfig& cfg) {
    const std::int64_t H = cfg.grid.height, W = cfg.grid.width;
    const RegionMask mask = RegionMask::from_spec(cfg.grid);
    Tensor<T> s(Shape{5, H, W});
    auto bump = [](double x, double y, double bx, double by, double bw) {
        const double dx = x - bx, dy = y - by;
        return std::exp(-(dx * dx + dy * dy) / (2.0 * bw * bw));
    };
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
            const double x = double(j), y = double(i);
            const double topo = (bump(x, y, 0.30 * W, 0.35 * H, 0.18 * W) +
                                 0.8 * bump(x, y, 0.72 * W, 0.65 * H, 0.22 * W)) /
                                1.8;
            s.at(0, i, j) = T(std::clamp(topo, 0.0, 1.0));
            s.at(1, i, j) = T(x / double(W - 1));
            s.at(2, i, j) = T(y / double(H - 1));
            s.at(3, i, j) = T(mask.is_boundary(i, j) ? 1 : 0);
            s.at(4, i, j) = T(mask.is_boundary(i, j) ? 0 : 1);
        }
    return s;
}

// Per-trajectory variation of the blob layout, so distinct trajectories show
// distinct dynamics under one config. Pure function of (config, index).
inline ToyWorldConfig jittered_config(const ToyWorldConfig& cfg, std::uint64_t traj_index) {
    ToyWorldConfig out = cfg;
    RngStream rng(cfg.seed, StreamKind::blob_init, traj_index);
    const double margin = double(cfg.grid.boundary_width);
    for (auto& b : out.blobs) {
        b.x = std::clamp(b.x + cfg.position_jitter * (2.0 * rng.uniform() - 1.0), margin,
                         double(cfg.grid.width - 1) - margin);
        b.y = std::clamp(b.y + cfg.position_jitter * (2.0 * rng.uniform() - 1.0), margin,
                         double(cfg.grid.height - 1) - margin);
        b.amplitude *= 0.7 + 0.6 * rng.uniform();
        b.width *= 0.85 + 0.35 * rng.uniform();
    }
    return out;
}

// Sample one trajectory: exact field at cell centers, then observation noise
// with std = obs_noise_std of each variable's own spatial-temporal scale
// (population std over the noiseless trajectory), approximating
// "standardized units" without a stats dependency.
template <typename T>
Trajectory<T> generate_trajectory(const ToyWorldConfig& cfg, std::uint64_t traj_index) {
    cfg.validate();
    const ToyWorldConfig local = jittered_config(cfg, traj_index);
    const std::int64_t H = cfg.grid.height, W = cfg.grid.width, HW = H * W;

    Trajectory<T> traj;
    traj.statics = make_statics<T>(cfg);
    std::vector<Tensor<double>> clean;
    for (std::int64_t t = 0; t <= cfg.steps; ++t) {
        Tensor<double> st(Shape{3, H, W});
        for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j) {
                const FieldSample f = analytic_field(local, double(j), double(i), double(t));
                st.at(0, i, j) = f.theta;
                st.at(1, i, j) = f.u;
                st.at(2, i, j) = f.v;
            }
        clean.push_back(std::move(st));
        traj.forcings.push_back(make_forcing<T>(cfg, double(t)));
    }

    // Per-variable scale of the noiseless signal (population std).
    double scale[3] = {0, 0, 0};
    for (int v = 0; v < 3; ++v) {
        double sum = 0, sumsq = 0;
        for (const auto& st : clean)
            for (std::int64_t g = 0; g < HW; ++g) {
                sum += st[v * HW + g];
                sumsq += st[v * HW + g] * st[v * HW + g];
            }
        const double n = double(clean.size() * size_t(HW));
        const double mu = sum / n;
        scale[v] = std::sqrt(std::max(0.0, sumsq / n - mu * mu));
    }

    RngStream noise(cfg.seed, StreamKind::obs_noise, traj_index);
    for (auto& st : clean) {
        Tensor<T> out(Shape{3, H, W});
        for (int v = 0; v < 3; ++v)
            for (std::int64_t g = 0; g < HW; ++g)
                out[v * HW + g] =
                    T(st[v * HW + g] + cfg.obs_noise_std * scale[v] * noise.normal());
        traj.states.push_back(std::move(out));
    }
    return traj;
}

// Per-variable, per-cell time mean over a training set; the climatology
// baseline forecast is this field at every lead time.
template <typename T>
Tensor<T> climatology_mean(const std::vector<std::vector<Tensor<T>>>& trajectories) {
    if (trajectories.empty() || trajectories.front().empty())
        throw config_error("climatology_mean: empty training set");
    Tensor<double> acc(trajectories.front().front().shape());
    std::int64_t count = 0;
    for (const auto& traj : trajectories)
        for (const auto& st : traj) {
            check_same_shape(st, trajectories.front().front(), "climatology_mean");
            for (std::int64_t i = 0; i < st.numel(); ++i) acc[i] += double(st[i]);
            ++count;
        }
    Tensor<T> mean(acc.shape());
    for (std::int64_t i = 0; i < acc.numel(); ++i) mean[i] = T(acc[i] / double(count));
    return mean;
}

}  // namespace lamcast
