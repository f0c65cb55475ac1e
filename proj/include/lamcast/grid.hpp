#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lamcast/tensor.hpp"

namespace lamcast {

// Gridded data model: the regular W x H grid, its decomposition into a
// predicted interior and a prescribed boundary frame of width b, per-variable
// normalization and residual statistics, and assembly of the conditioning
// inputs consumed by the denoiser.

struct GridSpec {
    std::int64_t width = 48;          // W, cells
    std::int64_t height = 48;         // H, cells
    std::int64_t boundary_width = 4;  // b, counted inward from each edge
    std::vector<std::string> var_names;
    std::vector<double> level_weight;  // h_l, one per variable
    double dt_hours = 3.0;

    std::int64_t num_vars() const { return std::int64_t(var_names.size()); }

    void validate() const {
        if (width <= 2 * boundary_width || height <= 2 * boundary_width)
            throw config_error("GridSpec: interior is empty (need W > 2b and H > 2b, got " +
                               std::to_string(width) + "x" + std::to_string(height) + ", b=" +
                               std::to_string(boundary_width) + ")");
        if (boundary_width < 1) throw config_error("GridSpec: boundary width must be >= 1");
        if (var_names.empty()) throw config_error("GridSpec: need at least one variable");
        if (level_weight.size() != var_names.size())
            throw config_error("GridSpec: one level weight per variable required");
        for (size_t i = 0; i < level_weight.size(); ++i)
            if (!(level_weight[i] > 0))
                throw config_error("GridSpec: level weight for '" + var_names[i] +
                                   "' must be positive");
        std::set<std::string> uniq(var_names.begin(), var_names.end());
        if (uniq.size() != var_names.size())
            throw config_error("GridSpec: variable names must be unique");
    }
};

// Interior/boundary partition of the grid. Cell indices are flattened
// row-major (row * W + col), stored ascending, so gathering the interior
// yields the row-major raster of the central (H-2b) x (W-2b) block.
class RegionMask {
public:
    RegionMask(std::int64_t H, std::int64_t W, std::int64_t b) : H_(H), W_(W), b_(b) {
        require(W > 2 * b && H > 2 * b && b >= 1, "RegionMask: invalid geometry");
        auto interior = std::make_shared<std::vector<std::int64_t>>();
        auto boundary = std::make_shared<std::vector<std::int64_t>>();
        is_boundary_.resize(size_t(H * W));
        for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j) {
                const bool bd = i < b || j < b || i >= H - b || j >= W - b;
                is_boundary_[size_t(i * W + j)] = bd ? 1 : 0;
                (bd ? boundary : interior)->push_back(i * W + j);
            }
        interior_ = std::move(interior);
        boundary_ = std::move(boundary);
    }

    static RegionMask from_spec(const GridSpec& spec) {
        return RegionMask(spec.height, spec.width, spec.boundary_width);
    }

    std::int64_t grid_height() const { return H_; }
    std::int64_t grid_width() const { return W_; }
    std::int64_t boundary_width() const { return b_; }
    std::int64_t interior_height() const { return H_ - 2 * b_; }
    std::int64_t interior_width() const { return W_ - 2 * b_; }
    std::int64_t num_interior() const { return std::int64_t(interior_->size()); }
    std::int64_t num_boundary() const { return std::int64_t(boundary_->size()); }

    bool is_boundary(std::int64_t row, std::int64_t col) const {
        require(row >= 0 && row < H_ && col >= 0 && col < W_, "RegionMask: cell out of range");
        return is_boundary_[size_t(row * W_ + col)] != 0;
    }

    // Shared index lists (ascending flattened indices), in the form the
    // gather/scatter ops consume.
    const std::shared_ptr<const std::vector<std::int64_t>>& interior_cells() const {
        return interior_;
    }
    const std::shared_ptr<const std::vector<std::int64_t>>& boundary_cells() const {
        return boundary_;
    }

private:
    std::int64_t H_, W_, b_;
    std::shared_ptr<const std::vector<std::int64_t>> interior_;
    std::shared_ptr<const std::vector<std::int64_t>> boundary_;
    std::vector<std::uint8_t> is_boundary_;
};

// One time slice of all prognostic variables, in physical units.
template <typename T>
struct WeatherState {
    Tensor<T> values;       // [d_x, H, W]
    std::int64_t lead_time = 0;

    void validate(const GridSpec& spec) const {
        if (values.shape() != Shape{spec.num_vars(), spec.height, spec.width})
            throw contract_error("WeatherState: shape " + values.shape().str() +
                                 " does not match grid spec");
        if (!values.all_finite())
            throw numeric_error("WeatherState: non-finite value at lead time " +
                                std::to_string(lead_time));
    }
};

// Per-variable normalization statistics. Residual stats are computed on
// standardized data: they describe the one-step increments after the (mu,
// sigma) scaling, so sigma_res is the natural residual-target scale.
struct NormStats {
    std::vector<std::string> var_names;
    std::vector<double> mean, stddev;          // raw data, per variable
    std::vector<double> res_mean, res_stddev;  // standardized one-step residuals

    std::int64_t num_vars() const { return std::int64_t(var_names.size()); }

    void validate() const {
        const size_t d = var_names.size();
        if (mean.size() != d || stddev.size() != d || res_mean.size() != d ||
            res_stddev.size() != d)
            throw config_error("NormStats: per-variable arrays must have matching length");
        for (size_t i = 0; i < d; ++i) {
            if (!(stddev[i] > 0))
                throw numeric_error("NormStats: non-positive std for variable '" +
                                    var_names[i] + "'");
            if (!(res_stddev[i] > 0))
                throw numeric_error("NormStats: non-positive residual std for variable '" +
                                    var_names[i] + "'");
        }
    }

    std::int64_t index_of(const std::string& name) const {
        for (size_t i = 0; i < var_names.size(); ++i)
            if (var_names[i] == name) return std::int64_t(i);
        throw config_error("NormStats: unknown variable '" + name + "'");
    }
};

// Gather a full-grid tensor [d, H, W] into per-region columns [d, M].
template <typename T>
Tensor<T> gather_region(const Tensor<T>& full, const std::vector<std::int64_t>& cells) {
    require(full.rank() == 3, "gather_region: expected [d, H, W], got " + full.shape().str());
    const std::int64_t d = full.dim(0), HW = full.dim(1) * full.dim(2);
    const std::int64_t M = std::int64_t(cells.size());
    Tensor<T> out(Shape{d, M});
    for (std::int64_t v = 0; v < d; ++v)
        for (std::int64_t m = 0; m < M; ++m) out[v * M + m] = full[v * HW + cells[size_t(m)]];
    return out;
}

// Write per-region columns [d, M] back into a full-grid tensor [d, H, W].
template <typename T>
void scatter_region(const Tensor<T>& cols, const std::vector<std::int64_t>& cells,
                    Tensor<T>& full) {
    require(full.rank() == 3 && cols.rank() == 2, "scatter_region: rank mismatch");
    require(cols.dim(0) == full.dim(0), "scatter_region: variable count mismatch");
    require(cols.dim(1) == std::int64_t(cells.size()), "scatter_region: cell count mismatch");
    const std::int64_t d = full.dim(0), HW = full.dim(1) * full.dim(2);
    const std::int64_t M = std::int64_t(cells.size());
    for (std::int64_t v = 0; v < d; ++v)
        for (std::int64_t m = 0; m < M; ++m) full[v * HW + cells[size_t(m)]] = cols[v * M + m];
}

// Partition a state into (interior columns, boundary columns).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_interior_boundary(const Tensor<T>& state,
                                                        const RegionMask& mask) {
    require(state.rank() == 3 && state.dim(1) == mask.grid_height() &&
                state.dim(2) == mask.grid_width(),
            "split_interior_boundary: state shape " + state.shape().str() +
                " does not match grid");
    return {gather_region(state, *mask.interior_cells()),
            gather_region(state, *mask.boundary_cells())};
}

// Normalization statistics over a set of training trajectories, each a
// time-ordered sequence of [d, H, W] states. Population convention (divide
// by N) for both passes; residual stats are computed on standardized data.
template <typename T>
NormStats compute_norm_stats(const std::vector<std::vector<Tensor<T>>>& trajectories,
                             const std::vector<std::string>& var_names) {
    require(!trajectories.empty(), "compute_norm_stats: no trajectories");
    const std::int64_t d = std::int64_t(var_names.size());
    for (const auto& traj : trajectories) {
        require(traj.size() >= 2, "compute_norm_stats: trajectories need at least 2 steps");
        for (const auto& s : traj)
            require(s.rank() == 3 && s.dim(0) == d, "compute_norm_stats: bad state shape");
    }

    NormStats stats;
    stats.var_names = var_names;
    stats.mean.assign(size_t(d), 0.0);
    stats.stddev.assign(size_t(d), 0.0);
    stats.res_mean.assign(size_t(d), 0.0);
    stats.res_stddev.assign(size_t(d), 0.0);

    for (std::int64_t v = 0; v < d; ++v) {
        // Pass 1: raw mean/std over every cell of every state.
        double sum = 0.0, sumsq = 0.0;
        std::int64_t count = 0;
        for (const auto& traj : trajectories)
            for (const auto& s : traj) {
                const std::int64_t HW = s.dim(1) * s.dim(2);
                for (std::int64_t i = 0; i < HW; ++i) {
                    const double x = double(s[v * HW + i]);
                    sum += x;
                    sumsq += x * x;
                    ++count;
                }
            }
        const double mu = sum / double(count);
        const double var = sumsq / double(count) - mu * mu;
        if (!(var > 1e-24))
            throw numeric_error("compute_norm_stats: degenerate statistics, variable '" +
                                var_names[size_t(v)] + "' has zero variance");
        const double sd = std::sqrt(var);
        stats.mean[size_t(v)] = mu;
        stats.stddev[size_t(v)] = sd;

        // Pass 2: one-step residuals of the standardized data.
        double rsum = 0.0, rsumsq = 0.0;
        std::int64_t rcount = 0;
        for (const auto& traj : trajectories)
            for (size_t t = 0; t + 1 < traj.size(); ++t) {
                const std::int64_t HW = traj[t].dim(1) * traj[t].dim(2);
                for (std::int64_t i = 0; i < HW; ++i) {
                    const double a = (double(traj[t][v * HW + i]) - mu) / sd;
                    const double b = (double(traj[t + 1][v * HW + i]) - mu) / sd;
                    const double r = b - a;
                    rsum += r;
                    rsumsq += r * r;
                    ++rcount;
                }
            }
        const double rmu = rsum / double(rcount);
        const double rvar = rsumsq / double(rcount) - rmu * rmu;
        if (!(rvar > 1e-24))
            throw numeric_error("compute_norm_stats: degenerate statistics, variable '" +
                                var_names[size_t(v)] +
                                "' is constant in time (zero residual variance)");
        stats.res_mean[size_t(v)] = rmu;
        stats.res_stddev[size_t(v)] = std::sqrt(rvar);
    }
    return stats;
}

// Per-variable affine standardization of a [d, H, W] (or [d, M]) tensor.
template <typename T>
Tensor<T> standardize(const Tensor<T>& x, const NormStats& stats) {
    require(x.rank() >= 2 && x.dim(0) == stats.num_vars(),
            "standardize: variable axis mismatch with stats");
    const std::int64_t d = x.dim(0), M = x.numel() / d;
    Tensor<T> out(x.shape());
    for (std::int64_t v = 0; v < d; ++v) {
        const double mu = stats.mean[size_t(v)], sd = stats.stddev[size_t(v)];
        for (std::int64_t i = 0; i < M; ++i)
            out[v * M + i] = T((double(x[v * M + i]) - mu) / sd);
    }
    return out;
}

template <typename T>
Tensor<T> unstandardize(const Tensor<T>& x, const NormStats& stats) {
    require(x.rank() >= 2 && x.dim(0) == stats.num_vars(),
            "unstandardize: variable axis mismatch with stats");
    const std::int64_t d = x.dim(0), M = x.numel() / d;
    Tensor<T> out(x.shape());
    for (std::int64_t v = 0; v < d; ++v) {
        const double mu = stats.mean[size_t(v)], sd = stats.stddev[size_t(v)];
        for (std::int64_t i = 0; i < M; ++i)
            out[v * M + i] = T(double(x[v * M + i]) * sd + mu);
    }
    return out;
}

// Residual target from two standardized states:
// r = (X^{t+1} - X^t - mu_res) / sigma_res per variable. The encoded
// residuals over the training set then have mean ~0 and std ~1, which is
// what justifies sigma_data = 1 in the diffusion preconditioner.
template <typename T>
Tensor<T> residual_encode(const Tensor<T>& std_x0, const Tensor<T>& std_x1,
                          const NormStats& stats) {
    check_same_shape(std_x0, std_x1, "residual_encode");
    require(std_x0.dim(0) == stats.num_vars(), "residual_encode: variable axis mismatch");
    const std::int64_t d = std_x0.dim(0), M = std_x0.numel() / d;
    Tensor<T> r(std_x0.shape());
    for (std::int64_t v = 0; v < d; ++v) {
        const double rm = stats.res_mean[size_t(v)], rs = stats.res_stddev[size_t(v)];
        for (std::int64_t i = 0; i < M; ++i)
            r[v * M + i] =
                T((double(std_x1[v * M + i]) - double(std_x0[v * M + i]) - rm) / rs);
    }
    return r;
}

// Inverse of residual_encode: standardized next state from the standardized
// current state and a residual.
template <typename T>
Tensor<T> residual_decode(const Tensor<T>& std_x0, const Tensor<T>& r, const NormStats& stats) {
    check_same_shape(r, std_x0, "residual_decode");
    require(r.dim(0) == stats.num_vars(), "residual_decode: variable axis mismatch");
    const std::int64_t d = r.dim(0), M = r.numel() / d;
    Tensor<T> x1(r.shape());
    for (std::int64_t v = 0; v < d; ++v) {
        const double rm = stats.res_mean[size_t(v)], rs = stats.res_stddev[size_t(v)];
        for (std::int64_t i = 0; i < M; ++i)
            x1[v * M + i] = T(double(std_x0[v * M + i]) + rm + rs * double(r[v * M + i]));
    }
    return x1;
}

// The assembled conditioning for one forecast step. The interior input
// carries the two most recent standardized states restricted to interior
// cells; the boundary input additionally carries the future boundary state.
// Data for the opposite region is structurally absent (only the gathered
// columns are stored), and the cell accessors enforce the region contract.
template <typename T>
class ConditioningPair {
public:
    ConditioningPair(Tensor<T> interior, Tensor<T> boundary, std::shared_ptr<RegionMask> mask)
        : interior_(std::move(interior)), boundary_(std::move(boundary)), mask_(std::move(mask)) {
        require(interior_.rank() == 2 && boundary_.rank() == 2,
                "ConditioningPair: inputs must be channel-column matrices");
        require(interior_.dim(1) == mask_->num_interior() &&
                    boundary_.dim(1) == mask_->num_boundary(),
                "ConditioningPair: cell counts do not match mask");
    }

    // Channel-column matrices, cells ordered as in RegionMask.
    const Tensor<T>& interior() const { return interior_; }
    const Tensor<T>& boundary() const { return boundary_; }
    const RegionMask& mask() const { return *mask_; }
    std::int64_t interior_channels() const { return interior_.dim(0); }
    std::int64_t boundary_channels() const { return boundary_.dim(0); }

    // Region-checked accessors by full-grid coordinates.
    T interior_at(std::int64_t channel, std::int64_t row, std::int64_t col) const {
        if (mask_->is_boundary(row, col))
            throw contract_error("ConditioningPair: cell (" + std::to_string(row) + "," +
                                 std::to_string(col) + ") is boundary, read through I^t denied");
        return interior_[channel * mask_->num_interior() + interior_offset(row, col)];
    }
    T boundary_at(std::int64_t channel, std::int64_t row, std::int64_t col) const {
        if (!mask_->is_boundary(row, col))
            throw contract_error("ConditioningPair: cell (" + std::to_string(row) + "," +
                                 std::to_string(col) + ") is interior, read through B^t denied");
        const auto& cells = *mask_->boundary_cells();
        const std::int64_t flat = row * mask_->grid_width() + col;
        const auto it = std::lower_bound(cells.begin(), cells.end(), flat);
        return boundary_[channel * mask_->num_boundary() + (it - cells.begin())];
    }

private:
    std::int64_t interior_offset(std::int64_t row, std::int64_t col) const {
        const std::int64_t b = mask_->boundary_width();
        return (row - b) * mask_->interior_width() + (col - b);
    }

    Tensor<T> interior_;
    Tensor<T> boundary_;
    std::shared_ptr<RegionMask> mask_;
};

// Build the conditioning pair for one step from standardized slices.
// Channel order in both inputs: state slices oldest -> newest, then forcing
// slices oldest -> newest, then statics; variables keep catalogue order
// inside each slice. x_next may carry any values (e.g. NaN) on interior
// cells; only its boundary cells are read.
template <typename T>
ConditioningPair<T> assemble_conditioning(const Tensor<T>& x_prev, const Tensor<T>& x_curr,
                                          const Tensor<T>& x_next, const Tensor<T>& f_prev,
                                          const Tensor<T>& f_curr, const Tensor<T>& f_next,
                                          const Tensor<T>& statics,
                                          std::shared_ptr<RegionMask> mask) {
    check_same_shape(x_prev, x_curr, "assemble_conditioning");
    check_same_shape(x_prev, x_next, "assemble_conditioning");
    check_same_shape(f_prev, f_curr, "assemble_conditioning");
    check_same_shape(f_prev, f_next, "assemble_conditioning");
    for (const Tensor<T>* t : {&x_prev, &f_prev, &statics})
        require(t->rank() == 3 && t->dim(1) == mask->grid_height() &&
                    t->dim(2) == mask->grid_width(),
                "assemble_conditioning: slice shape does not match grid");

    const auto& icells = *mask->interior_cells();
    const auto& bcells = *mask->boundary_cells();
    const std::int64_t mi = mask->num_interior(), mb = mask->num_boundary();
    const std::int64_t dx = x_prev.dim(0), df = f_prev.dim(0), ds = statics.dim(0);

    Tensor<T> interior(Shape{2 * dx + 3 * df + ds, mi});
    Tensor<T> boundary(Shape{3 * dx + 3 * df + ds, mb});

    auto fill = [](Tensor<T>& dst, std::int64_t& ch, const Tensor<T>& src,
                   const std::vector<std::int64_t>& cells) {
        const std::int64_t d = src.dim(0), HW = src.dim(1) * src.dim(2);
        const std::int64_t M = std::int64_t(cells.size());
        for (std::int64_t v = 0; v < d; ++v, ++ch)
            for (std::int64_t m = 0; m < M; ++m)
                dst[ch * M + m] = src[v * HW + cells[size_t(m)]];
    };

    std::int64_t ch = 0;
    for (const Tensor<T>* s : {&x_prev, &x_curr, &f_prev, &f_curr, &f_next, &statics})
        fill(interior, ch, *s, icells);
    require(ch == interior.dim(0), "assemble_conditioning: interior channel bookkeeping");

    ch = 0;
    for (const Tensor<T>* s : {&x_prev, &x_curr, &x_next, &f_prev, &f_curr, &f_next, &statics})
        fill(boundary, ch, *s, bcells);
    require(ch == boundary.dim(0), "assemble_conditioning: boundary channel bookkeeping");

    for (std::int64_t i = 0; i < boundary.numel(); ++i)
        if (!is_finite_value(boundary[i]))
            throw numeric_error("assemble_conditioning: non-finite boundary input value");

    return ConditioningPair<T>(std::move(interior), std::move(boundary), std::move(mask));
}

// Sin/cos channel pairs of a forcing frame must lie on the unit circle.
template <typename T>
void check_sin_cos_pairs(const Tensor<T>& forcing,
                         const std::vector<std::pair<int, int>>& pairs, double tol = 1e-9) {
    const std::int64_t HW = forcing.dim(1) * forcing.dim(2);
    for (const auto& [si, ci] : pairs)
        for (std::int64_t g = 0; g < HW; ++g) {
            const double s = double(forcing[si * HW + g]), c = double(forcing[ci * HW + g]);
            if (std::abs(s * s + c * c - 1.0) > tol)
                throw numeric_error("forcing sin/cos pair (" + std::to_string(si) + "," +
                                    std::to_string(ci) + ") off the unit circle");
        }
}

}  // namespace lamcast
