#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lamcast/config.hpp"
#include "lamcast/dataset.hpp"
#include "lamcast/metrics.hpp"

// Path of the built binary, injected by the build system.
#ifndef LAMCAST_CLI
#error "LAMCAST_CLI must point at the lamcast executable"
#endif

using namespace lamcast;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "lamcast_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

fs::path in_scratch(const std::string& name) { return scratch_dir() / name; }

// Run one subcommand line, return its exit code; output goes to a log file
// so failures can be inspected.
int run(const std::string& args) {
    const std::string cmd = std::string(LAMCAST_CLI) + " " + args + " >> " +
                            (scratch_dir() / "cli.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
    REQUIRE(out.good());
}

const char* kConfig =
    "# desk-scale pipeline exercise\n"
    "grid.width = 24\n"
    "grid.height = 24\n"
    "grid.boundary_width = 3\n"
    "world.steps = 6\n"
    "world.trajectories = 5\n"
    "world.position_jitter = 2.0\n"
    "model.latent_width = 8\n"
    "model.level2_width = 16\n"
    "model.emb_width = 32\n"
    "train.epochs1 = 1\n"
    "train.epochs2 = 1\n"
    "train.epochs3 = 1\n"
    "forecast.steps = 2\n"
    "forecast.n_ens = 2\n";

std::string q(const fs::path& p) { return p.string(); }

}  // namespace

TEST_CASE("pipeline: gen-data, stats, train, forecast, evaluate, report") {
    const fs::path cfg = in_scratch("run.cfg");
    spit(cfg, kConfig);

    // --- gen-data, twice: identical bytes, loadable in-process.
    REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(in_scratch("data.lmc")) +
                " --seed 7") == 0);
    REQUIRE(run("gen-data --config " + q(cfg) + " --out " + q(in_scratch("data2.lmc")) +
                " --seed 7") == 0);
    CHECK(slurp(in_scratch("data.lmc")) == slurp(in_scratch("data2.lmc")));

    const auto data = read_dataset<float>(in_scratch("data.lmc").string());
    CHECK(data.trajectories.size() == 5);
    CHECK(data.grid.width == 24);
    CHECK(data.steps() == 6);
    CHECK(data.provenance.at("config_hash").get<std::string>() ==
          RunConfig::from_file(cfg.string()).hash());

    // --- stats recomputes exactly what gen-data embedded.
    REQUIRE(run("stats --data " + q(in_scratch("data.lmc")) + " --out " +
                q(in_scratch("stats.json"))) == 0);
    const NormStats st = read_stats_file(in_scratch("stats.json").string());
    CHECK(to_json(st) == to_json(data.stats));

    // --- train, twice: identical checkpoints, log has one row per epoch.
    const std::string train_args = "train --config " + q(cfg) + " --data " +
                                   q(in_scratch("data.lmc")) + " --seed 5 --log-csv " +
                                   q(in_scratch("train_log.csv"));
    REQUIRE(run(train_args + " --out-checkpoint " + q(in_scratch("model.ckpt"))) == 0);
    REQUIRE(run(train_args + " --out-checkpoint " + q(in_scratch("model2.ckpt"))) == 0);
    CHECK(slurp(in_scratch("model.ckpt")) == slurp(in_scratch("model2.ckpt")));
    {
        std::stringstream log(slurp(in_scratch("train_log.csv")));
        std::string line;
        std::getline(log, line);
        CHECK(line == "epoch,stage,lr,train_loss,val_loss,wall_seconds");
        int rows = 0;
        while (std::getline(log, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 3);
    }

    // --- resuming a finished schedule changes nothing.
    const std::string before = slurp(in_scratch("model.ckpt"));
    REQUIRE(run("train --data " + q(in_scratch("data.lmc")) + " --resume " +
                q(in_scratch("model.ckpt")) + " --out-checkpoint " +
                q(in_scratch("model.ckpt"))) == 0);
    CHECK(slurp(in_scratch("model.ckpt")) == before);

    // --- forecast: deterministic, thread-invariant, hash-stamped.
    const std::string fc_args = "forecast --checkpoint " + q(in_scratch("model.ckpt")) +
                                " --data " + q(in_scratch("data.lmc")) +
                                " --split test --n-ens 2 --steps 2 --seed 3 --config " +
                                q(cfg);
    REQUIRE(run(fc_args + " --out " + q(in_scratch("fc.lmc"))) == 0);
    REQUIRE(run(fc_args + " --out " + q(in_scratch("fc2.lmc"))) == 0);
    CHECK(slurp(in_scratch("fc.lmc")) == slurp(in_scratch("fc2.lmc")));
    REQUIRE(run(fc_args + " --out " + q(in_scratch("fc3.lmc")) + " --threads 3") == 0);
    CHECK(slurp(in_scratch("fc.lmc")) == slurp(in_scratch("fc3.lmc")));

    const auto fc = read_forecast<float>(in_scratch("fc.lmc").string());
    CHECK(fc.n_inits == 1);
    CHECK(fc.n_ens == 2);
    CHECK(fc.steps == 2);
    CHECK(fc.boundary_provider == "truth");
    CHECK(fc.checkpoint_hash == fnv1a64_hex(slurp(in_scratch("model.ckpt"))));

    // --- ablated boundary and the two reference baselines.
    REQUIRE(run(fc_args + " --boundary no-future --out " + q(in_scratch("fc_nf.lmc"))) == 0);
    CHECK(read_forecast<float>(in_scratch("fc_nf.lmc").string()).boundary_provider ==
          "no_future");
    REQUIRE(run("forecast --data " + q(in_scratch("data.lmc")) +
                " --split test --steps 2 --baseline persistence --out " +
                q(in_scratch("pers.lmc"))) == 0);
    REQUIRE(run("forecast --data " + q(in_scratch("data.lmc")) +
                " --split test --steps 2 --baseline climatology --out " +
                q(in_scratch("clim.lmc"))) == 0);

    // --- evaluate all four; reruns are byte-identical.
    for (const char* name : {"fc", "fc_nf", "pers", "clim"}) {
        REQUIRE(run("evaluate --forecasts " + q(in_scratch(std::string(name) + ".lmc")) +
                    " --data " + q(in_scratch("data.lmc")) + " --out-csv " +
                    q(in_scratch(std::string(name) + ".csv"))) == 0);
    }
    REQUIRE(run("evaluate --forecasts " + q(in_scratch("fc.lmc")) + " --data " +
                q(in_scratch("data.lmc")) + " --out-csv " + q(in_scratch("fc_again.csv"))) ==
            0);
    CHECK(slurp(in_scratch("fc.csv")) == slurp(in_scratch("fc_again.csv")));

    const auto rows = metrics_from_csv(slurp(in_scratch("fc.csv")));
    REQUIRE(rows.size() == size_t(2 * 4));  // 2 leads x (3 variables + aggregate)
    for (const auto& r : rows) {
        CHECK(std::isfinite(r.rmse));
        CHECK(std::isfinite(r.crps));
        CHECK(r.n_ens == 2);
    }
    // Baselines carry the 1-member convention through the CSV.
    for (const auto& r : metrics_from_csv(slurp(in_scratch("pers.csv")))) {
        CHECK(r.n_ens == 1);
        CHECK(r.spread == 0.0);
        CHECK(r.ssr == 0.0);
    }

    // --- report renders one SVG per metric from several CSVs.
    REQUIRE(run("report --csv " + q(in_scratch("fc.csv")) + " --csv " +
                q(in_scratch("pers.csv")) + " --csv " + q(in_scratch("clim.csv")) +
                " --out-dir " + q(in_scratch("plots"))) == 0);
    for (const char* name : {"rmse", "spread", "ssr", "crps"}) {
        const fs::path svg = in_scratch("plots") / (std::string(name) + ".svg");
        REQUIRE(fs::exists(svg));
        CHECK(slurp(svg).find("<svg") != std::string::npos);
    }
}

TEST_CASE("cli failures map to the documented exit codes") {
    const fs::path cfg = in_scratch("run.cfg");  // written by the pipeline case
    spit(in_scratch("bad_key.cfg"), "no.such.key = 1\n");
    spit(in_scratch("bad_value.cfg"), "grid.width = banana\n");

    // Config problems: exit 2.
    CHECK(run("gen-data --config " + q(in_scratch("bad_key.cfg")) + " --out " +
              q(in_scratch("x.lmc"))) == 2);
    CHECK(run("gen-data --config " + q(in_scratch("bad_value.cfg")) + " --out " +
              q(in_scratch("x.lmc"))) == 2);
    CHECK(run("forecast --data " + q(in_scratch("data.lmc")) +
              " --split test --boundary sideways --out " + q(in_scratch("x.lmc"))) == 2);
    CHECK(run("forecast --data " + q(in_scratch("data.lmc")) +
              " --split test --baseline drift --out " + q(in_scratch("x.lmc"))) == 2);
    // Horizon beyond the dataset is a configuration problem, not a crash.
    CHECK(run("forecast --data " + q(in_scratch("data.lmc")) +
              " --split test --steps 50 --baseline persistence --out " +
              q(in_scratch("x.lmc"))) == 2);
    // Resuming under a contradictory seed is refused.
    CHECK(run("train --data " + q(in_scratch("data.lmc")) + " --resume " +
              q(in_scratch("model.ckpt")) + " --seed 99 --out-checkpoint " +
              q(in_scratch("x.ckpt"))) == 2);

    // Missing or malformed files: exit 3.
    CHECK(run("gen-data --config " + q(in_scratch("nowhere.cfg")) + " --out " +
              q(in_scratch("x.lmc"))) == 3);
    CHECK(run("train --data " + q(in_scratch("nowhere.lmc")) + " --out-checkpoint " +
              q(in_scratch("x.ckpt"))) == 3);
    CHECK(run("evaluate --forecasts " + q(in_scratch("data.lmc")) + " --data " +
              q(in_scratch("data.lmc")) + " --out-csv " + q(in_scratch("x.csv"))) == 3);
    CHECK(run("report --csv " + q(in_scratch("train_log.csv")) + " --out-dir " +
              q(in_scratch("plots2"))) == 3);

    // Argument-parser failures are nonzero but not ours.
    const int rc = run("gen-data");
    CHECK(rc != 0);

    (void)cfg;
}
