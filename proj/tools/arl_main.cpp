// Command-line front end for the experiment runner.
//
//   arl run            one run from a config file
//   arl ablate-revalue revalue on vs off, paired seeds
//   arl ablate-gipo    trust-weighted objective vs clipped objective
//   arl scale-workers  async vs lock-step throughput over worker counts
//   arl wm-efficiency  world-model arm vs model-free arm
//
// Every subcommand accepts --config, --seed, --out, --mode, --virtual-clock
// and repeated --set section.key=value overrides.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "arl/error.hpp"
#include "arl/harness.hpp"

namespace {

using namespace arl;

struct Common {
    std::string config;
    std::uint64_t seed = 1;
    bool seed_set = false;
    std::string out;
    std::string mode;
    std::string clock;
    std::vector<std::string> sets;
    std::size_t seeds = 1;
};

void add_common(CLI::App* cmd, Common& c, bool multi_seed) {
    cmd->add_option("--config", c.config, "INI config applied on top of the preset")->check(CLI::ExistingFile);
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_set = true; }, "master seed (first seed of a sweep)");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--mode", c.mode, "async | sync_baseline");
    cmd->add_option("--virtual-clock", c.clock, "true | false")->expected(0, 1)->default_str("true");
    cmd->add_option("--set", c.sets, "section.key=value override (repeatable)");
    if (multi_seed) cmd->add_option("--seeds", c.seeds, "number of paired seeds")->check(CLI::PositiveNumber);
}

// Preset, then config file, then command-line flags.
ExperimentConfig resolve(ExperimentConfig base, const Common& c, CLI::App* cmd, std::uint64_t seed_offset = 0) {
    ExperimentConfig cfg = c.config.empty() ? base : load_config_file(c.config, base);
    if (c.seed_set || seed_offset) cfg.seed = c.seed + seed_offset;
    if (!c.mode.empty()) cfg.mode = parse_run_mode(c.mode);
    if (cmd->count("--virtual-clock")) set_config_value(cfg, "run.virtual_clock", c.clock.empty() ? "true" : c.clock);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

std::string join(const std::string& dir, const std::string& leaf) {
    if (dir.empty()) return "";
    return (std::filesystem::path(dir) / leaf).string();
}

void print_summary(const std::string& label, const MetricsReport& r) {
    std::printf("%-28s env_steps=%.0f episodes=%.0f eps/s=%.2f sps=%.1f final_return=%.3f steps_to_0.8=%.0f util=%.3f\n",
                label.c_str(), r.summary_or("env_steps", 0), r.summary_or("real_episodes", 0),
                r.summary_or("episodes_per_s", 0), r.summary_or("steps_per_s", 0), r.summary_or("final_return", 0),
                r.summary_or("steps_to_0.8", -1), r.summary_or("worker_utilization", 0));
    std::fflush(stdout);
}

// Runs two arms over paired seeds and reports how often arm A wins.
template <class Better>
int paired(const std::string& name_a, ExperimentConfig a, const std::string& name_b, ExperimentConfig b,
           const Common& c, CLI::App* cmd, Better better) {
    int wins = 0;
    for (std::size_t i = 0; i < c.seeds; ++i) {
        ExperimentConfig ca = resolve(a, c, cmd, i);
        ExperimentConfig cb = resolve(b, c, cmd, i);
        const std::string tag = "seed" + std::to_string(ca.seed);
        ca.out_dir = join(c.out, name_a + "/" + tag);
        cb.out_dir = join(c.out, name_b + "/" + tag);
        const MetricsReport ra = run_experiment(ca);
        const MetricsReport rb = run_experiment(cb);
        print_summary(name_a + " " + tag, ra);
        print_summary(name_b + " " + tag, rb);
        const bool win = better(ra, rb);
        wins += win;
        std::printf("  %s %s\n", tag.c_str(), win ? (name_a + " better").c_str() : (name_a + " not better").c_str());
    }
    std::printf("%s better on %d of %zu seeds\n", name_a.c_str(), wins, c.seeds);
    return 0;
}

double steps_or_inf(const MetricsReport& r) {
    const double s = r.summary_or("steps_to_0.8", -1);
    return s < 0 ? 1e300 : s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"asynchronous RL experiment runner"};
    app.require_subcommand(1);
    Common run_c, rev_c, gipo_c, scale_c, wm_c;

    auto* run = app.add_subcommand("run", "run one experiment");
    add_common(run, run_c, false);
    bool dump = false;
    run->add_flag("--dump-config", dump, "print the resolved config and exit");

    auto* rev = app.add_subcommand("ablate-revalue", "value recomputation on vs off");
    add_common(rev, rev_c, true);
    auto* gipo = app.add_subcommand("ablate-gipo", "trust-weighted vs clipped policy objective");
    add_common(gipo, gipo_c, true);
    auto* scale = app.add_subcommand("scale-workers", "throughput of async and lock-step modes");
    add_common(scale, scale_c, false);
    std::vector<std::size_t> worker_counts{1, 2, 4, 8};
    scale->add_option("--workers", worker_counts, "worker counts")->delimiter(',');
    auto* wm = app.add_subcommand("wm-efficiency", "world-model arm vs model-free arm");
    add_common(wm, wm_c, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            ExperimentConfig cfg = resolve(presets::learning(), run_c, run);
            if (!run_c.out.empty()) cfg.out_dir = run_c.out;
            if (dump) {
                cfg.finalize();
                std::cout << dump_config(cfg);
                return 0;
            }
            print_summary("run", run_experiment(cfg));
        } else if (*rev) {
            return paired("revalue", presets::revalue_ablation(true), "no_revalue", presets::revalue_ablation(false),
                          rev_c, rev, [](const MetricsReport& a, const MetricsReport& b) {
                              return a.summary_or("final_return", 0) >= b.summary_or("final_return", 0);
                          });
        } else if (*gipo) {
            return paired("gipo", presets::algorithm_ablation(Algorithm::gipo), "ppo",
                          presets::algorithm_ablation(Algorithm::ppo), gipo_c, gipo,
                          [](const MetricsReport& a, const MetricsReport& b) { return steps_or_inf(a) < steps_or_inf(b); });
        } else if (*wm) {
            return paired("world_model", presets::world_model_efficiency(true), "model_free",
                          presets::world_model_efficiency(false), wm_c, wm,
                          [](const MetricsReport& a, const MetricsReport& b) {
                              return steps_or_inf(a) < 1e300 && steps_or_inf(a) <= 0.5 * steps_or_inf(b);
                          });
        } else if (*scale) {
            for (std::size_t n : worker_counts) {
                double eps[2] = {0, 0};
                for (RunMode m : {RunMode::async, RunMode::sync_baseline}) {
                    ExperimentConfig cfg = resolve(presets::worker_scaling(n, m), scale_c, scale);
                    cfg.mode = m;
                    cfg.out_dir = join(scale_c.out, to_string(m) + "/workers" + std::to_string(n));
                    const MetricsReport r = run_experiment(cfg);
                    eps[m == RunMode::async ? 0 : 1] = r.summary_or("episodes_per_s", 0);
                    print_summary(to_string(m) + " workers=" + std::to_string(n), r);
                }
                std::printf("  workers=%zu async/sync episode throughput ratio %.2f\n", n, eps[1] > 0 ? eps[0] / eps[1] : 0.0);
            }
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "run failed: %s\n", e.what());
        return 1;
    }
    return 0;
}
