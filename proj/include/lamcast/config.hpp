#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lamcast/common.hpp"
#include "lamcast/denoiser.hpp"
#include "lamcast/edm.hpp"
#include "lamcast/grid.hpp"
#include "lamcast/rollout.hpp"
#include "lamcast/toyworld.hpp"
#include "lamcast/training.hpp"

namespace lamcast {

// Flat key = value run configuration. Every key is validated against the
// registry below; unknown or duplicate keys are rejected. The canonical
// rendering (all keys, sorted, with effective values) feeds the config hash
// that is embedded in all output files.
class RunConfig {
public:
    static const std::map<std::string, std::string>& registry() {
        static const std::map<std::string, std::string> defaults = {
            {"grid.width", "48"},
            {"grid.height", "48"},
            {"grid.boundary_width", "4"},
            {"weights.theta", "1.0"},
            {"weights.u", "0.1"},
            {"weights.v", "0.1"},
            {"world.omega_rot", "0.09817477042468103"},  // 2*pi/64
            {"world.kappa", "0.05"},
            {"world.diurnal_amplitude", "0.4"},
            {"world.diurnal_period", "8"},
            {"world.position_jitter", "6.0"},
            {"world.obs_noise_std", "0.01"},
            {"world.steps", "24"},
            {"world.trajectories", "10"},
            {"model.latent_width", "32"},
            {"model.level2_width", "64"},
            {"model.emb_width", "128"},
            {"train.epochs1", "60"},
            {"train.epochs2", "40"},
            {"train.epochs3", "20"},
            {"train.lr1", "1e-3"},
            {"train.lr2", "1e-4"},
            {"train.lr3", "1e-5"},
            {"train.batch_size", "4"},
            {"train.beta1", "0.9"},
            {"train.beta2", "0.95"},
            {"train.weight_decay", "0.1"},
            {"train.grad_clip", "1.0"},
            {"train.lambda_inverse_variance", "false"},
            {"sched.train.sigma_min", "0.02"},
            {"sched.train.sigma_max", "88.0"},
            {"sched.train.rho", "7.0"},
            {"sched.train.steps", "20"},
            {"sched.infer.sigma_min", "0.03"},
            {"sched.infer.sigma_max", "80.0"},
            {"sched.infer.rho", "7.0"},
            {"sched.infer.steps", "20"},
            {"forecast.steps", "19"},
            {"forecast.n_ens", "5"},
            {"forecast.init_time", "1"},
            {"forecast.threads", "1"},
        };
        return defaults;
    }

    static RunConfig defaults() { return RunConfig(); }

    static RunConfig from_text(const std::string& text) {
        RunConfig cfg;
        std::istringstream in(text);
        std::string line;
        std::int64_t lineno = 0;
        std::map<std::string, bool> seen;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string stripped = strip(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            const size_t eq = stripped.find('=');
            if (eq == std::string::npos)
                throw config_error("config line " + std::to_string(lineno) +
                                   ": expected key = value, got '" + stripped + "'");
            const std::string key = strip(stripped.substr(0, eq));
            const std::string value = strip(stripped.substr(eq + 1));
            if (registry().find(key) == registry().end())
                throw config_error("config line " + std::to_string(lineno) +
                                   ": unknown key '" + key + "'");
            if (seen[key])
                throw config_error("config line " + std::to_string(lineno) +
                                   ": duplicate key '" + key + "'");
            seen[key] = true;
            cfg.values_[key] = value;
        }
        cfg.validate();
        return cfg;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw io_error("cannot open config file '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return from_text(ss.str());
    }

    // All keys with their effective values, sorted; stable input to hashing.
    std::string canonical_text() const {
        std::string out;
        for (const auto& [key, def] : registry())
            out += key + " = " + get(key) + "\n";
        return out;
    }

    std::string hash() const { return fnv1a64_hex(canonical_text()); }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it != values_.end()) return it->second;
        auto def = registry().find(key);
        if (def == registry().end())
            throw contract_error("RunConfig: key '" + key + "' not in registry");
        return def->second;
    }

    std::int64_t get_int(const std::string& key) const {
        try {
            size_t used = 0;
            const std::int64_t v = std::stoll(get(key), &used);
            if (used != get(key).size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw config_error("config key '" + key + "': '" + get(key) +
                               "' is not an integer");
        }
    }

    double get_double(const std::string& key) const {
        try {
            size_t used = 0;
            const double v = std::stod(get(key), &used);
            if (used != get(key).size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw config_error("config key '" + key + "': '" + get(key) +
                               "' is not a number");
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw config_error("config key '" + key + "': '" + v + "' is not a boolean");
    }

    // ---- typed views over the flat keys ------------------------------------

    GridSpec grid() const {
        GridSpec g;
        g.width = get_int("grid.width");
        g.height = get_int("grid.height");
        g.boundary_width = get_int("grid.boundary_width");
        g.var_names = {"theta", "u", "v"};
        g.level_weight = {get_double("weights.theta"), get_double("weights.u"),
                          get_double("weights.v")};
        g.validate();
        return g;
    }

    ToyWorldConfig world(std::uint64_t seed) const {
        ToyWorldConfig w = ToyWorldConfig::defaults();
        w.grid = grid();
        w.omega_rot = get_double("world.omega_rot");
        w.kappa = get_double("world.kappa");
        w.diurnal_amplitude = get_double("world.diurnal_amplitude");
        w.diurnal_period = get_int("world.diurnal_period");
        w.position_jitter = get_double("world.position_jitter");
        w.obs_noise_std = get_double("world.obs_noise_std");
        w.steps = get_int("world.steps");
        w.seed = seed;
        w.validate();
        return w;
    }

    std::int64_t num_trajectories() const {
        const std::int64_t n = get_int("world.trajectories");
        if (n < 3) throw config_error("world.trajectories must be >= 3 (one per split)");
        return n;
    }

    DenoiserArch arch() const {
        DenoiserArch a = default_arch(3, std::int64_t(forcing_names().size()),
                                      std::int64_t(static_names().size()));
        a.latent_width = get_int("model.latent_width");
        a.level1_width = a.latent_width;
        a.level2_width = get_int("model.level2_width");
        a.emb_width = get_int("model.emb_width");
        a.validate();
        return a;
    }

    TrainConfig train(std::uint64_t seed) const {
        TrainConfig t;
        t.stages = {{get_int("train.epochs1"), get_double("train.lr1")},
                    {get_int("train.epochs2"), get_double("train.lr2")},
                    {get_int("train.epochs3"), get_double("train.lr3")}};
        t.batch_size = get_int("train.batch_size");
        t.beta1 = get_double("train.beta1");
        t.beta2 = get_double("train.beta2");
        t.weight_decay = get_double("train.weight_decay");
        t.grad_clip = get_double("train.grad_clip");
        t.lambda_inverse_variance = get_bool("train.lambda_inverse_variance");
        t.master_seed = seed;
        t.validate();
        return t;
    }

    NoiseSchedule training_schedule() const {
        return make_schedule("sched.train.");
    }
    NoiseSchedule inference_schedule() const {
        return make_schedule("sched.infer.");
    }

    EnsembleConfig forecast(std::uint64_t seed) const {
        EnsembleConfig e;
        e.steps = get_int("forecast.steps");
        e.n_ens = get_int("forecast.n_ens");
        e.init_time = get_int("forecast.init_time");
        e.threads = int(get_int("forecast.threads"));
        e.master_seed = seed;
        e.schedule = inference_schedule();
        e.validate();
        return e;
    }

private:
    NoiseSchedule make_schedule(const std::string& prefix) const {
        NoiseSchedule s;
        s.sigma_min = get_double(prefix + "sigma_min");
        s.sigma_max = get_double(prefix + "sigma_max");
        s.rho = get_double(prefix + "rho");
        s.steps = get_int(prefix + "steps");
        s.validate();
        return s;
    }

    void validate() const {
        grid();
        world(0);
        num_trajectories();
        arch();
        train(0);
        training_schedule();
        inference_schedule();
        forecast(0);
    }

    static std::string strip(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace lamcast
