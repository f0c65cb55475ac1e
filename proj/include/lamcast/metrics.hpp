#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "lamcast/dataset.hpp"
#include "lamcast/grid.hpp"

namespace lamcast {

// One variable at one lead time: S forecast cases, each an N-member ensemble
// over M interior cells, with the verifying truth. All verification math
// runs in double regardless of the storage scalar.
struct EnsembleSlice {
    std::int64_t S = 0, N = 0, M = 0;
    std::vector<double> members;  // [s][e][g] flattened
    std::vector<double> truths;   // [s][g] flattened

    double member(std::int64_t s, std::int64_t e, std::int64_t g) const {
        return members[size_t((s * N + e) * M + g)];
    }
    double truth(std::int64_t s, std::int64_t g) const { return truths[size_t(s * M + g)]; }

    void validate() const {
        if (S < 1) throw config_error("EnsembleSlice: no forecast cases");
        if (N < 1 || M < 1) throw config_error("EnsembleSlice: empty ensemble or region");
        require(std::int64_t(members.size()) == S * N * M &&
                    std::int64_t(truths.size()) == S * M,
                "EnsembleSlice: buffer sizes inconsistent");
    }
};

// Ensemble-mean RMSE; the square root is applied after averaging the squared
// errors over cases and cells.
inline double rmse(const EnsembleSlice& sl) {
    sl.validate();
    double acc = 0.0;
    for (std::int64_t s = 0; s < sl.S; ++s)
        for (std::int64_t g = 0; g < sl.M; ++g) {
            double mean = 0.0;
            for (std::int64_t e = 0; e < sl.N; ++e) mean += sl.member(s, e, g);
            mean /= double(sl.N);
            const double err = mean - sl.truth(s, g);
            acc += err * err;
        }
    return std::sqrt(acc / double(sl.S * sl.M));
}

// Root-mean of the per-cell member variance about the ensemble mean, with
// inner divisor N (the bias correction lives in the SSR factor instead).
inline double spread(const EnsembleSlice& sl) {
    sl.validate();
    if (sl.N < 2) throw config_error("spread: need at least 2 ensemble members");
    double acc = 0.0;
    for (std::int64_t s = 0; s < sl.S; ++s)
        for (std::int64_t g = 0; g < sl.M; ++g) {
            double mean = 0.0;
            for (std::int64_t e = 0; e < sl.N; ++e) mean += sl.member(s, e, g);
            mean /= double(sl.N);
            double var = 0.0;
            for (std::int64_t e = 0; e < sl.N; ++e) {
                const double d = sl.member(s, e, g) - mean;
                var += d * d;
            }
            acc += var / double(sl.N);
        }
    return std::sqrt(acc / double(sl.S * sl.M));
}

// Bias-corrected spread-skill ratio sqrt((N+1)/N) * Spread / RMSE.
inline double ssr(const EnsembleSlice& sl) {
    const double r = rmse(sl);
    const double sp = spread(sl);
    if (r == 0.0) return 0.0;  // perfect ensemble mean with zero spread
    return std::sqrt(double(sl.N + 1) / double(sl.N)) * sp / r;
}

// Fair (finite-sample unbiased) CRPS. Sort-based evaluation: for members
// sorted ascending, sum_{e,e*} |x_e - x_e*| = 2 * sum_i (2i - N + 1) x_(i).
// The N=1 convention drops the pairwise term, degrading to the MAE.
inline double crps(const EnsembleSlice& sl) {
    sl.validate();
    std::vector<double> sorted(size_t(sl.N));
    double acc = 0.0;
    for (std::int64_t s = 0; s < sl.S; ++s)
        for (std::int64_t g = 0; g < sl.M; ++g) {
            for (std::int64_t e = 0; e < sl.N; ++e) sorted[size_t(e)] = sl.member(s, e, g);
            std::sort(sorted.begin(), sorted.end());
            const double y = sl.truth(s, g);
            double term1 = 0.0, pairs = 0.0;
            for (std::int64_t i = 0; i < sl.N; ++i) {
                term1 += std::abs(sorted[size_t(i)] - y);
                pairs += double(2 * i - sl.N + 1) * sorted[size_t(i)];
            }
            double cell = term1;
            if (sl.N >= 2) cell -= (2.0 * pairs) / (2.0 * double(sl.N - 1));
            acc += cell;
        }
    return acc / double(sl.S * sl.M * sl.N);
}

struct MetricRow {
    std::string variable;  // catalogue name, or "aggregate"
    std::int64_t lead = 0;
    double rmse = 0.0, spread = 0.0, ssr = 0.0, crps = 0.0;
    std::int64_t n_samples = 0, n_ens = 0;
};

namespace detail {

// Extract one (variable, lead) slice over interior cells from a forecast set
// and its verifying dataset, optionally in standardized units.
template <typename T>
EnsembleSlice metric_slice(const ForecastSet<T>& fc, const Dataset<T>& data,
                           const RegionMask& mask, std::int64_t d, std::int64_t lead,
                           bool standardized) {
    EnsembleSlice sl;
    sl.S = fc.n_inits;
    sl.N = fc.n_ens;
    sl.M = mask.num_interior();
    sl.members.resize(size_t(sl.S * sl.N * sl.M));
    sl.truths.resize(size_t(sl.S * sl.M));
    const std::int64_t t_valid = fc.init_time + lead;
    for (std::int64_t s = 0; s < sl.S; ++s) {
        const auto& traj = data.trajectories.at(size_t(fc.init_trajectories[size_t(s)]));
        if (t_valid >= std::int64_t(traj.states.size()))
            throw config_error("metric_slice: dataset too short to verify lead " +
                               std::to_string(lead));
        Tensor<T> truth_state = traj.states[size_t(t_valid)];
        if (standardized) truth_state = standardize(truth_state, data.stats);
        const Tensor<T> truth_cols = gather_region(truth_state, *mask.interior_cells());
        for (std::int64_t g = 0; g < sl.M; ++g)
            sl.truths[size_t(s * sl.M + g)] = double(truth_cols[d * sl.M + g]);
        for (std::int64_t e = 0; e < sl.N; ++e) {
            Tensor<T> st = fc.at(s, e, lead);
            if (standardized) st = standardize(st, data.stats);
            const Tensor<T> cols = gather_region(st, *mask.interior_cells());
            for (std::int64_t g = 0; g < sl.M; ++g)
                sl.members[size_t((s * sl.N + e) * sl.M + g)] = double(cols[d * sl.M + g]);
        }
    }
    return sl;
}

}  // namespace detail

// Full verification table: per-variable rows in physical units plus, per
// lead, an "aggregate" row averaging the metrics computed on standardized
// data across variables. Interior cells only. Single-member forecasts
// (baselines) report spread and SSR as 0 by convention.
template <typename T>
std::vector<MetricRow> evaluate_forecast(const ForecastSet<T>& fc, const Dataset<T>& data) {
    require(fc.grid.var_names == data.grid.var_names,
            "evaluate_forecast: forecast and dataset catalogues differ");
    RegionMask mask(data.grid.height, data.grid.width, data.grid.boundary_width);
    const std::int64_t D = std::int64_t(data.grid.var_names.size());
    std::vector<MetricRow> rows;
    for (std::int64_t lead = 1; lead <= fc.steps; ++lead) {
        MetricRow agg;
        agg.variable = "aggregate";
        agg.lead = lead;
        agg.n_samples = fc.n_inits;
        agg.n_ens = fc.n_ens;
        for (std::int64_t d = 0; d < D; ++d) {
            const auto raw = detail::metric_slice(fc, data, mask, d, lead, false);
            const auto nrm = detail::metric_slice(fc, data, mask, d, lead, true);
            MetricRow row;
            row.variable = data.grid.var_names[size_t(d)];
            row.lead = lead;
            row.n_samples = fc.n_inits;
            row.n_ens = fc.n_ens;
            row.rmse = rmse(raw);
            row.crps = crps(raw);
            row.spread = fc.n_ens >= 2 ? spread(raw) : 0.0;
            row.ssr = fc.n_ens >= 2 ? ssr(raw) : 0.0;
            agg.rmse += rmse(nrm) / double(D);
            agg.crps += crps(nrm) / double(D);
            if (fc.n_ens >= 2) {
                agg.spread += spread(nrm) / double(D);
                agg.ssr += ssr(nrm) / double(D);
            }
            rows.push_back(row);
        }
        rows.push_back(agg);
    }
    for (const auto& r : rows)
        if (!is_finite_value(r.rmse) || !is_finite_value(r.spread) ||
            !is_finite_value(r.ssr) || !is_finite_value(r.crps))
            throw numeric_error("evaluate_forecast: non-finite metric for variable '" +
                                r.variable + "' at lead " + std::to_string(r.lead));
    return rows;
}

// Deterministic CSV: fixed column order and fixed %.10e formatting, so equal
// inputs produce byte-identical files.
inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out = "variable,lead_steps,rmse,spread,ssr,crps,n_samples,n_ens\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%lld,%.10e,%.10e,%.10e,%.10e,%lld,%lld\n",
                      r.variable.c_str(), (long long)r.lead, r.rmse, r.spread, r.ssr, r.crps,
                      (long long)r.n_samples, (long long)r.n_ens);
        out += buf;
    }
    return out;
}

inline std::vector<MetricRow> metrics_from_csv(const std::string& text) {
    std::vector<MetricRow> rows;
    size_t pos = text.find('\n');
    if (pos == std::string::npos) throw io_error("metrics_from_csv: missing header line");
    while (pos + 1 < text.size()) {
        size_t end = text.find('\n', pos + 1);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(pos + 1, end - pos - 1);
        pos = end;
        if (line.empty()) continue;
        MetricRow r;
        char var[128];
        long long lead, ns, ne;
        if (std::sscanf(line.c_str(), "%127[^,],%lld,%lf,%lf,%lf,%lf,%lld,%lld", var, &lead,
                        &r.rmse, &r.spread, &r.ssr, &r.crps, &ns, &ne) != 8)
            throw io_error("metrics_from_csv: malformed row '" + line + "'");
        r.variable = var;
        r.lead = lead;
        r.n_samples = ns;
        r.n_ens = ne;
        rows.push_back(r);
    }
    return rows;
}

}  // namespace lamcast
