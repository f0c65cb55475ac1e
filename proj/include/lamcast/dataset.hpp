#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lamcast/grid.hpp"
#include "lamcast/toyworld.hpp"

namespace lamcast {

// On-disk container shared by datasets and forecasts: a UTF-8 JSON header
// terminated by '\n' and a 0 byte, followed by little-endian 32-bit floats
// in [trajectory, time, variable, row, col] order. Headers are serialized
// with sorted keys and shortest-round-trip numbers, so identical content
// yields identical bytes.

using json = nlohmann::json;

namespace container {

inline void write(const std::string& path, const json& header, const std::vector<float>& blob) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    const std::string text = header.dump();
    out.write(text.data(), std::streamsize(text.size()));
    out.put('\n');
    out.put('\0');
    if (!blob.empty())
        out.write(reinterpret_cast<const char*>(blob.data()),
                  std::streamsize(blob.size() * sizeof(float)));
    if (!out) throw io_error("write failed for '" + path + "'");
}

struct Loaded {
    json header;
    std::vector<float> blob;
};

inline Loaded read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const size_t z = bytes.find('\0');
    if (z == std::string::npos || z == 0 || bytes[z - 1] != '\n')
        throw io_error("'" + path + "': missing header terminator");
    Loaded out;
    try {
        out.header = json::parse(bytes.substr(0, z - 1));
    } catch (const json::exception& e) {
        throw io_error("'" + path + "': bad header JSON: " + e.what());
    }
    const size_t payload = bytes.size() - (z + 1);
    if (payload % sizeof(float) != 0)
        throw io_error("'" + path + "': truncated float payload");
    out.blob.resize(payload / sizeof(float));
    if (payload > 0) std::memcpy(out.blob.data(), bytes.data() + z + 1, payload);
    return out;
}

}  // namespace container

// --- JSON mappings for the core metadata types ---

inline json to_json(const GridSpec& g) {
    return json{{"width", g.width},
                {"height", g.height},
                {"boundary_width", g.boundary_width},
                {"dt_hours", g.dt_hours},
                {"variables", g.var_names},
                {"level_weights", g.level_weight}};
}

inline GridSpec grid_from_json(const json& j) {
    GridSpec g;
    try {
        g.width = j.at("width").get<std::int64_t>();
        g.height = j.at("height").get<std::int64_t>();
        g.boundary_width = j.at("boundary_width").get<std::int64_t>();
        g.dt_hours = j.at("dt_hours").get<double>();
        g.var_names = j.at("variables").get<std::vector<std::string>>();
        g.level_weight = j.at("level_weights").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw io_error(std::string("bad grid header: ") + e.what());
    }
    g.validate();
    return g;
}

inline json to_json(const NormStats& s) {
    return json{{"variables", s.var_names},
                {"mean", s.mean},
                {"stddev", s.stddev},
                {"res_mean", s.res_mean},
                {"res_stddev", s.res_stddev}};
}

inline NormStats stats_from_json(const json& j) {
    NormStats s;
    try {
        s.var_names = j.at("variables").get<std::vector<std::string>>();
        s.mean = j.at("mean").get<std::vector<double>>();
        s.stddev = j.at("stddev").get<std::vector<double>>();
        s.res_mean = j.at("res_mean").get<std::vector<double>>();
        s.res_stddev = j.at("res_stddev").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw io_error(std::string("bad stats header: ") + e.what());
    }
    s.validate();
    return s;
}

inline json to_json(const ToyWorldConfig& c) {
    json blobs = json::array();
    for (const auto& b : c.blobs)
        blobs.push_back(json{{"x", b.x}, {"y", b.y}, {"amplitude", b.amplitude}, {"width", b.width}});
    return json{{"omega_rot", c.omega_rot},
                {"kappa", c.kappa},
                {"diurnal_amplitude", c.diurnal_amplitude},
                {"diurnal_period", c.diurnal_period},
                {"blobs", blobs},
                {"position_jitter", c.position_jitter},
                {"obs_noise_std", c.obs_noise_std},
                {"steps", c.steps},
                {"seed", c.seed}};
}

// Train/val/test split over trajectory indices, stored as inclusive ranges.
struct SplitSpec {
    std::int64_t train_begin = 0, train_end = -1;
    std::int64_t val_begin = 0, val_end = -1;
    std::int64_t test_begin = 0, test_end = -1;

    static SplitSpec fractional(std::int64_t n) {
        // 70/10/20 by trajectory with at least one trajectory per part.
        require(n >= 3, "SplitSpec: need at least 3 trajectories to split");
        std::int64_t ntrain = std::max<std::int64_t>(1, (7 * n) / 10);
        std::int64_t nval = std::max<std::int64_t>(1, n / 10);
        while (ntrain + nval >= n) (ntrain > 1 ? ntrain : nval)--;
        SplitSpec s;
        s.train_begin = 0;
        s.train_end = ntrain - 1;
        s.val_begin = ntrain;
        s.val_end = ntrain + nval - 1;
        s.test_begin = ntrain + nval;
        s.test_end = n - 1;
        return s;
    }

    std::vector<std::int64_t> indices(const std::string& part) const {
        std::int64_t b, e;
        if (part == "train") {
            b = train_begin, e = train_end;
        } else if (part == "val") {
            b = val_begin, e = val_end;
        } else if (part == "test") {
            b = test_begin, e = test_end;
        } else {
            throw config_error("unknown split '" + part + "' (want train|val|test)");
        }
        std::vector<std::int64_t> out;
        for (std::int64_t i = b; i <= e; ++i) out.push_back(i);
        return out;
    }

    json to_json() const {
        return json{{"train", {train_begin, train_end}},
                    {"val", {val_begin, val_end}},
                    {"test", {test_begin, test_end}}};
    }
    static SplitSpec from_json(const json& j) {
        SplitSpec s;
        try {
            s.train_begin = j.at("train").at(0).get<std::int64_t>();
            s.train_end = j.at("train").at(1).get<std::int64_t>();
            s.val_begin = j.at("val").at(0).get<std::int64_t>();
            s.val_end = j.at("val").at(1).get<std::int64_t>();
            s.test_begin = j.at("test").at(0).get<std::int64_t>();
            s.test_end = j.at("test").at(1).get<std::int64_t>();
        } catch (const json::exception& e) {
            throw io_error(std::string("bad split header: ") + e.what());
        }
        return s;
    }
};

// --- Dataset files ---

template <typename T>
struct Dataset {
    GridSpec grid;
    std::vector<Trajectory<T>> trajectories;
    NormStats stats;   // computed over the train split at generation time
    SplitSpec split;
    json provenance;   // toy-world parameters and config hash, echoed on write

    std::int64_t steps() const {
        return trajectories.empty() ? 0 : std::int64_t(trajectories.front().states.size()) - 1;
    }

    std::vector<std::vector<Tensor<T>>> states_of(const std::string& part) const {
        std::vector<std::vector<Tensor<T>>> out;
        for (std::int64_t idx : split.indices(part)) {
            require(idx >= 0 && idx < std::int64_t(trajectories.size()),
                    "Dataset: split index out of range");
            out.push_back(trajectories[size_t(idx)].states);
        }
        return out;
    }
};

namespace detail {

template <typename T>
void append_tensor(std::vector<float>& blob, const Tensor<T>& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) blob.push_back(float(t[i]));
}

template <typename T>
Tensor<T> take_tensor(const std::vector<float>& blob, size_t& pos, Shape shape) {
    const std::int64_t n = shape.numel();
    if (pos + size_t(n) > blob.size()) throw io_error("container payload shorter than header implies");
    Tensor<T> t(shape);
    for (std::int64_t i = 0; i < n; ++i) t[i] = T(blob[pos + size_t(i)]);
    pos += size_t(n);
    return t;
}

}  // namespace detail

template <typename T>
void write_dataset(const std::string& path, const Dataset<T>& ds) {
    json header{{"format", "lamcast-container"},
                {"version", 1},
                {"kind", "dataset"},
                {"grid", to_json(ds.grid)},
                {"forcing_names", forcing_names()},
                {"static_names", static_names()},
                {"num_trajectories", ds.trajectories.size()},
                {"steps", ds.steps()},
                {"split", ds.split.to_json()},
                {"stats", to_json(ds.stats)},
                {"provenance", ds.provenance}};
    std::vector<float> blob;
    for (const auto& tr : ds.trajectories)
        for (const auto& st : tr.states) detail::append_tensor(blob, st);
    for (const auto& tr : ds.trajectories)
        for (const auto& f : tr.forcings) detail::append_tensor(blob, f);
    if (!ds.trajectories.empty()) detail::append_tensor(blob, ds.trajectories.front().statics);
    container::write(path, header, blob);
}

template <typename T>
Dataset<T> read_dataset(const std::string& path) {
    const auto loaded = container::read(path);
    const json& h = loaded.header;
    if (h.value("kind", "") != "dataset")
        throw io_error("'" + path + "' is not a dataset container");
    Dataset<T> ds;
    ds.grid = grid_from_json(h.at("grid"));
    ds.stats = stats_from_json(h.at("stats"));
    ds.split = SplitSpec::from_json(h.at("split"));
    ds.provenance = h.value("provenance", json::object());
    const auto R = h.at("num_trajectories").get<std::int64_t>();
    const auto S = h.at("steps").get<std::int64_t>();
    const auto fn = h.at("forcing_names").get<std::vector<std::string>>();
    const auto sn = h.at("static_names").get<std::vector<std::string>>();
    const std::int64_t dx = ds.grid.num_vars(), df = std::int64_t(fn.size()),
                       dsn = std::int64_t(sn.size());
    const std::int64_t H = ds.grid.height, W = ds.grid.width;
    const size_t expect = size_t(R * (S + 1) * (dx + df) * H * W + dsn * H * W);
    if (loaded.blob.size() != expect)
        throw io_error("'" + path + "': payload has " + std::to_string(loaded.blob.size()) +
                       " floats, header implies " + std::to_string(expect));
    size_t pos = 0;
    ds.trajectories.resize(size_t(R));
    for (auto& tr : ds.trajectories)
        for (std::int64_t t = 0; t <= S; ++t)
            tr.states.push_back(detail::take_tensor<T>(loaded.blob, pos, Shape{dx, H, W}));
    for (auto& tr : ds.trajectories)
        for (std::int64_t t = 0; t <= S; ++t)
            tr.forcings.push_back(detail::take_tensor<T>(loaded.blob, pos, Shape{df, H, W}));
    Tensor<T> statics = detail::take_tensor<T>(loaded.blob, pos, Shape{dsn, H, W});
    for (auto& tr : ds.trajectories) tr.statics = statics;
    return ds;
}

// --- Forecast files ---

// S inits x N members x T leads of predicted full states. The member axis is
// flattened into the container's trajectory axis as init * n_ens + member.
template <typename T>
struct ForecastSet {
    GridSpec grid;
    std::int64_t n_inits = 0, n_ens = 0, steps = 0;
    std::int64_t init_time = 1;  // data time index of X^t at initialization
    std::vector<std::int64_t> init_trajectories;
    std::uint64_t master_seed = 0;
    std::string boundary_provider = "truth";  // truth | no_future
    std::string baseline = "none";            // none | persistence | climatology
    json schedule;                            // sampler parameters, echoed
    std::string checkpoint_hash;
    std::vector<Tensor<T>> states;  // [(init*n_ens + member)*steps + (lead-1)]

    const Tensor<T>& at(std::int64_t init, std::int64_t member, std::int64_t lead) const {
        require(init >= 0 && init < n_inits && member >= 0 && member < n_ens && lead >= 1 &&
                    lead <= steps,
                "ForecastSet: index out of range");
        return states[size_t((init * n_ens + member) * steps + lead - 1)];
    }
};

template <typename T>
void write_forecast(const std::string& path, const ForecastSet<T>& fc) {
    json header{{"format", "lamcast-container"},
                {"version", 1},
                {"kind", "forecast"},
                {"grid", to_json(fc.grid)},
                {"n_inits", fc.n_inits},
                {"n_ens", fc.n_ens},
                {"steps", fc.steps},
                {"init_time", fc.init_time},
                {"init_trajectories", fc.init_trajectories},
                {"master_seed", fc.master_seed},
                {"rng_stream_rule", "philox4x32(seed; forecast_latent(init, member, step))"},
                {"boundary_provider", fc.boundary_provider},
                {"baseline", fc.baseline},
                {"schedule", fc.schedule},
                {"checkpoint_hash", fc.checkpoint_hash}};
    require(std::int64_t(fc.states.size()) == fc.n_inits * fc.n_ens * fc.steps,
            "write_forecast: state count mismatch");
    std::vector<float> blob;
    for (const auto& st : fc.states) detail::append_tensor(blob, st);
    container::write(path, header, blob);
}

template <typename T>
ForecastSet<T> read_forecast(const std::string& path) {
    const auto loaded = container::read(path);
    const json& h = loaded.header;
    if (h.value("kind", "") != "forecast")
        throw io_error("'" + path + "' is not a forecast container");
    ForecastSet<T> fc;
    try {
        fc.grid = grid_from_json(h.at("grid"));
        fc.n_inits = h.at("n_inits").get<std::int64_t>();
        fc.n_ens = h.at("n_ens").get<std::int64_t>();
        fc.steps = h.at("steps").get<std::int64_t>();
        fc.init_time = h.at("init_time").get<std::int64_t>();
        fc.init_trajectories = h.at("init_trajectories").get<std::vector<std::int64_t>>();
        fc.master_seed = h.at("master_seed").get<std::uint64_t>();
        fc.boundary_provider = h.at("boundary_provider").get<std::string>();
        fc.baseline = h.at("baseline").get<std::string>();
        fc.schedule = h.at("schedule");
        fc.checkpoint_hash = h.at("checkpoint_hash").get<std::string>();
    } catch (const json::exception& e) {
        throw io_error("'" + path + "': bad forecast header: " + e.what());
    }
    const std::int64_t dx = fc.grid.num_vars(), H = fc.grid.height, W = fc.grid.width;
    const size_t expect = size_t(fc.n_inits * fc.n_ens * fc.steps * dx * H * W);
    if (loaded.blob.size() != expect)
        throw io_error("'" + path + "': payload has " + std::to_string(loaded.blob.size()) +
                       " floats, header implies " + std::to_string(expect));
    size_t pos = 0;
    for (std::int64_t i = 0; i < fc.n_inits * fc.n_ens * fc.steps; ++i)
        fc.states.push_back(detail::take_tensor<T>(loaded.blob, pos, Shape{dx, H, W}));
    return fc;
}

// --- Standalone stats files (JSON text, no blob) ---

inline void write_stats_file(const std::string& path, const NormStats& stats,
                             const std::string& source_note) {
    json j{{"format", "lamcast-stats"},
           {"version", 1},
           {"source", source_note},
           {"stats", to_json(stats)}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
    if (!out) throw io_error("write failed for '" + path + "'");
}

inline NormStats read_stats_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw io_error("'" + path + "': bad stats JSON: " + e.what());
    }
    if (j.value("format", "") != "lamcast-stats")
        throw io_error("'" + path + "' is not a stats file");
    return stats_from_json(j.at("stats"));
}

}  // namespace lamcast
