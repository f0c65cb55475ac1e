// lamcast: limited-area ensemble diffusion forecasting on a synthetic
// atmosphere. Subcommands cover the full pipeline: gen-data -> stats ->
// train -> forecast -> evaluate -> report, with deterministic file-based
// handoffs. Exit codes: 0 ok, 2 config, 3 io, 4 numeric, 5 internal.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lamcast/config.hpp"
#include "lamcast/dataset.hpp"
#include "lamcast/denoiser.hpp"
#include "lamcast/metrics.hpp"
#include "lamcast/rollout.hpp"
#include "lamcast/svg.hpp"
#include "lamcast/toyworld.hpp"
#include "lamcast/training.hpp"

namespace {

using Scalar = float;
using namespace lamcast;

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

std::string file_hash(const std::string& path) { return fnv1a64_hex(read_file_bytes(path)); }

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw io_error("write failed for '" + path + "'");
}

RunConfig load_config(const std::string& path) {
    return path.empty() ? RunConfig::defaults() : RunConfig::from_file(path);
}

NormStats train_split_stats(const Dataset<Scalar>& data) {
    return compute_norm_stats(data.states_of("train"), data.grid.var_names);
}

void require_same_grid(const GridSpec& a, const GridSpec& b, const std::string& what) {
    if (to_json(a) != to_json(b))
        throw config_error(what + ": grid does not match (" + to_json(a).dump() + " vs " +
                           to_json(b).dump() + ")");
}

// ---------------------------------------------------------------------------

void cmd_gen_data(const std::string& config_path, const std::string& out,
                  std::uint64_t seed) {
    const RunConfig cfg = load_config(config_path);
    const ToyWorldConfig world = cfg.world(seed);
    const std::int64_t n = cfg.num_trajectories();

    Dataset<Scalar> ds;
    ds.grid = world.grid;
    ds.split = SplitSpec::fractional(n);
    for (std::int64_t ti = 0; ti < n; ++ti)
        ds.trajectories.push_back(generate_trajectory<Scalar>(world, std::uint64_t(ti)));
    ds.stats = train_split_stats(ds);
    ds.provenance = {{"config_hash", cfg.hash()}, {"seed", seed}, {"world", to_json(world)}};
    write_dataset(out, ds);
    std::printf("wrote %s: %lld trajectories x %lld steps on %lldx%lld grid (config %s)\n",
                out.c_str(), (long long)n, (long long)ds.steps(), (long long)world.grid.height,
                (long long)world.grid.width, cfg.hash().c_str());
}

void cmd_stats(const std::string& data_path, const std::string& out) {
    const auto data = read_dataset<Scalar>(data_path);
    const NormStats stats = train_split_stats(data);
    write_stats_file(out, stats, "train split of " + data_path);
    std::printf("wrote %s: normalization stats over %zu train trajectories\n", out.c_str(),
                data.split.indices("train").size());
}

void cmd_train(const std::string& config_path, const std::string& data_path,
               const std::string& stats_path, const std::string& out_ckpt,
               const std::string& resume, std::uint64_t seed, bool seed_given,
               const std::string& log_path) {
    auto data = read_dataset<Scalar>(data_path);
    if (!stats_path.empty()) data.stats = read_stats_file(stats_path);
    if (data.stats.var_names != data.grid.var_names)
        throw config_error("train: stats catalogue does not match dataset");

    std::shared_ptr<CondDenoiserNet<Scalar>> net;
    TrainConfig tc;
    OptimizerState<Scalar> opt;
    std::int64_t start_epoch = 0;
    std::string cfg_hash;
    if (!resume.empty()) {
        // A resumed run is defined entirely by its checkpoint; a config, if
        // given, is only cross-checked against it.
        auto ck = load_checkpoint<Scalar>(resume);
        require_same_grid(ck.grid, data.grid, "train (checkpoint)");
        if (!config_path.empty() && !(ck.arch == RunConfig::from_file(config_path).arch()))
            throw config_error("train: checkpoint architecture does not match config");
        if (seed_given && seed != ck.train_cfg.master_seed)
            throw config_error("train: --seed differs from the checkpoint's master seed");
        net = ck.net;
        tc = ck.train_cfg;  // schedule continuity: resumed runs keep their config
        opt = std::move(ck.opt);
        start_epoch = ck.epochs_completed;
        cfg_hash = ck.config_hash;
    } else {
        const RunConfig cfg = load_config(config_path);
        require_same_grid(cfg.grid(), data.grid, "train");
        tc = cfg.train(seed);
        cfg_hash = cfg.hash();
        auto mask = std::make_shared<RegionMask>(data.grid.height, data.grid.width,
                                                 data.grid.boundary_width);
        net = std::make_shared<CondDenoiserNet<Scalar>>(cfg.arch(), mask);
        RngStream init_rng(seed, stream_id(StreamKind::model_init, 0, 0, 0));
        net->init_params(init_rng);
    }

    Trainer<Scalar> trainer(*net, data, tc);
    if (start_epoch > 0) trainer.opt_state() = std::move(opt);
    std::printf("model: %lld parameters; %lld train samples; initial val wmse %.6e\n",
                (long long)net->param_count(), (long long)trainer.num_train_samples(),
                trainer.validation_loss());

    std::vector<EpochLog> log;
    const std::int64_t total = tc.total_epochs();
    for (std::int64_t e = start_epoch; e < total; ++e) {
        const EpochLog entry = trainer.train_epoch(e);
        log.push_back(entry);
        std::printf("epoch %lld/%lld stage %d lr %.1e train %.6e val %.6e (%.1fs)\n",
                    (long long)(e + 1), (long long)total, entry.stage, entry.lr,
                    entry.train_loss, entry.val_loss, entry.wall_seconds);
        std::fflush(stdout);
        save_checkpoint(out_ckpt, *net, trainer.opt_state(), tc, data.grid, data.stats, e + 1,
                        cfg_hash);
        if (!log_path.empty()) write_text(log_path, training_log_csv(log));
    }
    if (start_epoch >= total)
        std::printf("schedule already complete (%lld epochs); checkpoint unchanged\n",
                    (long long)total);
    std::printf("wrote %s\n", out_ckpt.c_str());
}

void cmd_forecast(const std::string& ckpt_path, const std::string& data_path,
                  const std::string& split, std::int64_t n_ens, std::int64_t steps,
                  std::uint64_t seed, const std::string& boundary, const std::string& out,
                  const std::string& baseline, int threads, std::int64_t init_time,
                  const std::string& config_path) {
    auto data = read_dataset<Scalar>(data_path);
    const std::vector<std::int64_t> inits = data.split.indices(split);
    if (inits.empty()) throw config_error("forecast: split '" + split + "' is empty");
    if (boundary != "truth" && boundary != "no-future")
        throw config_error("forecast: --boundary must be 'truth' or 'no-future'");

    const RunConfig cfg = load_config(config_path);
    EnsembleConfig ecfg;
    ecfg.steps = steps;
    ecfg.n_ens = n_ens;
    ecfg.init_time = init_time;
    ecfg.master_seed = seed;
    ecfg.no_future = (boundary == "no-future");
    ecfg.threads = threads;
    ecfg.schedule = cfg.inference_schedule();

    ForecastSet<Scalar> fc;
    double wall = 0.0;
    if (baseline != "none") {
        fc = baseline_forecast(data, inits, baseline, ecfg);
    } else {
        if (ckpt_path.empty())
            throw config_error("forecast: --checkpoint required unless --baseline is given");
        auto ck = load_checkpoint<Scalar>(ckpt_path);
        require_same_grid(ck.grid, data.grid, "forecast");
        data.stats = ck.stats;  // forecasts standardize with the stats trained against
        const PreconditionedDenoiser<Scalar> denoiser(*ck.net, Preconditioner{});
        fc = ensemble_forecast(denoiser, data, inits, ecfg, &wall);
        fc.checkpoint_hash = file_hash(ckpt_path);
    }
    write_forecast(out, fc);
    std::printf("wrote %s: %lld inits x %lld members x %lld steps (%s boundary%s)%s\n",
                out.c_str(), (long long)fc.n_inits, (long long)fc.n_ens, (long long)fc.steps,
                fc.boundary_provider.c_str(),
                baseline == "none" ? "" : (", baseline " + baseline).c_str(),
                wall > 0 ? (" in " + std::to_string(wall) + "s").c_str() : "");
}

void cmd_evaluate(const std::string& fc_path, const std::string& data_path,
                  const std::string& stats_path, const std::string& out_csv) {
    const auto fc = read_forecast<Scalar>(fc_path);
    auto data = read_dataset<Scalar>(data_path);
    require_same_grid(fc.grid, data.grid, "evaluate");
    if (!stats_path.empty()) data.stats = read_stats_file(stats_path);
    const auto rows = evaluate_forecast(fc, data);
    write_text(out_csv, metrics_csv(rows));
    std::printf("wrote %s: %zu metric rows (%lld leads)\n", out_csv.c_str(), rows.size(),
                (long long)fc.steps);
}

void cmd_report(const std::vector<std::string>& csv_paths, const std::string& out_dir) {
    if (csv_paths.empty()) throw config_error("report: need at least one --csv input");
    std::filesystem::create_directories(out_dir);

    struct Input {
        std::string label;
        std::vector<MetricRow> agg;  // aggregate rows, lead ascending
    };
    std::vector<Input> inputs;
    for (const auto& path : csv_paths) {
        Input in;
        in.label = std::filesystem::path(path).stem().string();
        std::int64_t n_ens = 0;
        for (const auto& r : metrics_from_csv(read_file_bytes(path)))
            if (r.variable == "aggregate") {
                in.agg.push_back(r);
                n_ens = r.n_ens;
            }
        if (in.agg.empty())
            throw io_error("report: '" + path + "' contains no aggregate rows");
        in.label += " (N=" + std::to_string(n_ens) + ")";
        inputs.push_back(std::move(in));
    }

    const struct {
        const char* name;
        double MetricRow::*field;
    } plots[] = {{"rmse", &MetricRow::rmse},
                 {"spread", &MetricRow::spread},
                 {"ssr", &MetricRow::ssr},
                 {"crps", &MetricRow::crps}};
    for (const auto& p : plots) {
        std::vector<PlotSeries> series;
        for (const auto& in : inputs) {
            PlotSeries s;
            s.label = in.label;
            for (const auto& r : in.agg) {
                s.x.push_back(double(r.lead));
                s.y.push_back(r.*(p.field));
            }
            series.push_back(std::move(s));
        }
        const std::string path = out_dir + "/" + p.name + ".svg";
        write_text(path, render_line_plot(std::string("aggregate normalized ") + p.name,
                                          "lead time (steps)", p.name, series));
        std::printf("wrote %s\n", path.c_str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"limited-area ensemble diffusion forecasting on a toy atmosphere"};
    app.require_subcommand(1);
    std::function<void()> action;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    static std::string g_config, g_out = "data.lmc";
    static std::uint64_t g_seed = 0;
    gen->add_option("--config", g_config, "run-config file (key = value)");
    gen->add_option("--out", g_out, "output dataset path")->required();
    gen->add_option("--seed", g_seed, "master seed for world generation");
    gen->callback([&] { action = [] { cmd_gen_data(g_config, g_out, g_seed); }; });

    // stats
    auto* st = app.add_subcommand("stats", "compute normalization stats from the train split");
    static std::string s_data, s_out = "stats.json";
    st->add_option("--data", s_data, "dataset path")->required();
    st->add_option("--out", s_out, "output stats path")->required();
    st->callback([&] { action = [] { cmd_stats(s_data, s_out); }; });

    // train
    auto* tr = app.add_subcommand("train", "train the denoiser on a dataset");
    static std::string t_config, t_data, t_stats, t_out = "model.ckpt", t_resume, t_log;
    static std::uint64_t t_seed = 0;
    tr->add_option("--config", t_config, "run-config file");
    tr->add_option("--data", t_data, "dataset path")->required();
    tr->add_option("--stats", t_stats, "stats file (defaults to stats embedded in the dataset)");
    tr->add_option("--out-checkpoint", t_out, "checkpoint output path")->required();
    tr->add_option("--resume", t_resume, "resume from an existing checkpoint");
    auto* t_seed_opt = tr->add_option("--seed", t_seed, "master seed for init and training");
    tr->add_option("--log-csv", t_log, "training log CSV path");
    tr->callback([&, t_seed_opt] {
        const bool seed_given = t_seed_opt->count() > 0;
        action = [seed_given] {
            cmd_train(t_config, t_data, t_stats, t_out, t_resume, t_seed, seed_given, t_log);
        };
    });

    // forecast
    auto* fo = app.add_subcommand("forecast", "run an ensemble forecast or a baseline");
    static std::string f_ckpt, f_data, f_split = "test", f_boundary = "truth",
                       f_out = "forecast.lmc", f_baseline = "none", f_config;
    static std::int64_t f_nens = 5, f_steps = 19, f_init = 1;
    static std::uint64_t f_seed = 0;
    static int f_threads = 1;
    fo->add_option("--checkpoint", f_ckpt, "trained checkpoint");
    fo->add_option("--data", f_data, "dataset path")->required();
    fo->add_option("--split", f_split, "trajectory split to initialize from (train|val|test)");
    fo->add_option("--n-ens", f_nens, "ensemble members");
    fo->add_option("--steps", f_steps, "autoregressive lead steps");
    fo->add_option("--seed", f_seed, "master seed for member substreams");
    fo->add_option("--boundary", f_boundary, "boundary provider: truth | no-future");
    fo->add_option("--out", f_out, "forecast output path")->required();
    fo->add_option("--baseline", f_baseline, "none | persistence | climatology");
    fo->add_option("--threads", f_threads, "worker threads over members");
    fo->add_option("--init-time", f_init, "data time index of the initialization state");
    fo->add_option("--config", f_config, "run-config file (for the sampling schedule)");
    fo->callback([&] {
        action = [] {
            cmd_forecast(f_ckpt, f_data, f_split, f_nens, f_steps, f_seed, f_boundary, f_out,
                         f_baseline, f_threads, f_init, f_config);
        };
    });

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "verify a forecast against its dataset");
    static std::string e_fc, e_data, e_stats, e_out = "metrics.csv";
    ev->add_option("--forecasts", e_fc, "forecast file")->required();
    ev->add_option("--data", e_data, "dataset path")->required();
    ev->add_option("--stats", e_stats, "stats file for standardized aggregates");
    ev->add_option("--out-csv", e_out, "metrics CSV output path")->required();
    ev->callback([&] { action = [] { cmd_evaluate(e_fc, e_data, e_stats, e_out); }; });

    // report
    auto* re = app.add_subcommand("report", "render SVG lead-time plots from metric CSVs");
    static std::vector<std::string> r_csvs;
    static std::string r_out = "plots";
    re->add_option("--csv", r_csvs, "metrics CSV (repeatable; one line per file)");
    re->add_option("--out-dir", r_out, "output directory for SVGs");
    re->callback([&] { action = [] { cmd_report(r_csvs, r_out); }; });

    try {
        app.parse(argc, argv);
        if (action) action();
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const lamcast::config_error& e) {
        std::fprintf(stderr, "ERROR:2: %s\n", e.what());
        return 2;
    } catch (const lamcast::io_error& e) {
        std::fprintf(stderr, "ERROR:3: %s\n", e.what());
        return 3;
    } catch (const lamcast::numeric_error& e) {
        std::fprintf(stderr, "ERROR:4: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "ERROR:5: %s\n", e.what());
        return 5;
    }
}
