#include "arl/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "arl/error.hpp"

namespace arl {

RunMode parse_run_mode(const std::string& s) {
    if (s == "async") return RunMode::async;
    if (s == "sync_baseline" || s == "sync") return RunMode::sync_baseline;
    throw ConfigError("unknown run mode '" + s + "' (expected async|sync_baseline)");
}

std::string to_string(RunMode m) { return m == RunMode::async ? "async" : "sync_baseline"; }

ExperimentConfig::ExperimentConfig() {
    suite.latency.kind = LatencyKind::constant;
    suite.latency.constant_ms = 5.0;
    suite.object_spread = 1;
    for (auto& w : inference.window) w = BatchWindowConfig{4, from_ms(2.0)};
    inference.cost = InferenceCost{from_ms(0.5), from_ms(0.05)};
    rollout.num_workers = 4;
    main_capacity = 128;
    prefetch.trajectories_per_batch = 64;
    prefetch.min_trajectories = 64;
    prefetch.cache_capacity = 2;
    prefetch.build_cost = from_ms(2.0);
    trainer.adam.lr = 1e-2;
    trainer.loss.entropy_coef = 0.003;
    trainer.step_cost = from_ms(150.0);
    trainer.wm_step_cost = from_ms(5.0);
    trainer.wm_adam.lr = 3e-3;
}

void ExperimentConfig::finalize() {
    suite.validate();
    model.obs_dim = suite.obs_dim();
    model.n_actions = kNumPrimitiveActions;
    model.chunk_len = suite.chunk_len;
    model.max_step = suite.horizon + static_cast<int>(rollout.h_img) + 1;
    model.snap_channels = snap_predicted_obs ? 3 : 0;
    model.validate();
    rollout.latency_scales = worker_latency_scales;
    rollout.validate();
    for (const auto& w : inference.window) w.validate();
    if (inference.cost.per_batch < Duration::zero() || inference.cost.per_item < Duration::zero()) {
        throw ConfigError("inference costs must be >= 0");
    }
    inference.seed = seed * 0x9E3779B97F4A7C15ULL + 17;
    prefetch.batch.gae.validate();
    if (prefetch.batch.shards < 1) throw ConfigError("trainer.shards must be >= 1");
    if (!(prefetch.batch.norm_eps > 0.0)) throw ConfigError("trainer.norm_eps must be > 0");
    if (prefetch.cache_capacity < 1) throw ConfigError("buffers.prefetch_cache_size must be >= 1");
    if (prefetch.trajectories_per_batch < 1) throw ConfigError("buffers.batch_trajectories must be >= 1");
    if (main_capacity < 1 || wm_capacity < 1 || img_capacity < 1) {
        throw ConfigError("buffer capacities must be >= 1");
    }
    trainer.world_model = world_model;
    trainer.loss.validate();
    trainer.schedule.validate();
    if (!(trainer.adam.lr > 0.0) || !(trainer.wm_adam.lr > 0.0)) throw ConfigError("learning rates must be > 0");
    if (trainer.wm_batch < 1) throw ConfigError("trainer.wm_batch must be >= 1");
    if (!(wall_budget_s > 0.0)) throw ConfigError("run.wall_budget_s must be > 0");
    if (eval_interval < 1) throw ConfigError("run.eval_interval_steps must be >= 1");
    if (eval_episodes_per_task < 1) throw ConfigError("run.eval_episodes_per_task must be >= 1");
    if (!(throughput_interval_s > 0.0)) throw ConfigError("run.throughput_interval_s must be > 0");
    if (!(pretrain_noise >= 0.0 && pretrain_noise <= 1.0)) throw ConfigError("run.pretrain_noise must lie in [0, 1]");
    if (sync_episodes_per_worker < 1 || sync_updates_per_round < 1) {
        throw ConfigError("run.sync_episodes_per_worker and run.sync_updates_per_round must be >= 1");
    }
    if (mode == RunMode::sync_baseline && world_model) {
        throw ConfigError("run.world_model is not supported with run.mode = sync_baseline");
    }
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string fmt_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    const std::string s = trim(text);
    T v{};
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw ConfigError(key + ": cannot parse '" + text + "' as a number");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    std::string s = trim(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "off" || s == "no") return false;
    throw ConfigError(key + ": cannot parse '" + text + "' as a boolean");
}

struct Field {
    std::string key;
    std::string doc;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class T, class F>
Field num(std::string key, std::string doc, F ref) {
    Field f{key, std::move(doc), {}, {}};
    f.get = [ref](const ExperimentConfig& c) {
        const T v = ref(const_cast<ExperimentConfig&>(c));
        if constexpr (std::is_floating_point_v<T>) {
            return fmt_double(v);
        } else {
            return std::to_string(v);
        }
    };
    f.set = [ref, key](ExperimentConfig& c, const std::string& s) {
        if constexpr (std::is_unsigned_v<T>) {
            if (trim(s).starts_with("-")) throw ConfigError(key + ": must be non-negative");
        }
        ref(c) = parse_number<T>(key, s);
    };
    return f;
}

template <class F>
Field flag(std::string key, std::string doc, F ref) {
    Field f{key, std::move(doc), {}, {}};
    f.get = [ref](const ExperimentConfig& c) {
        return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
    };
    f.set = [ref, key](ExperimentConfig& c, const std::string& s) { ref(c) = parse_bool(key, s); };
    return f;
}

template <class F>
Field millis(std::string key, std::string doc, F ref) {
    Field f{key, std::move(doc), {}, {}};
    f.get = [ref](const ExperimentConfig& c) { return fmt_double(to_ms(ref(const_cast<ExperimentConfig&>(c)))); };
    f.set = [ref, key](ExperimentConfig& c, const std::string& s) {
        const double ms = parse_number<double>(key, s);
        if (!(ms >= 0.0)) throw ConfigError(key + ": must be >= 0");
        ref(c) = from_ms(ms);
    };
    return f;
}

const std::vector<Field>& schema() {
    static const std::vector<Field> fields = [] {
        using C = ExperimentConfig;
        std::vector<Field> v;
        Field mode{"run.mode", "async | sync_baseline", {}, {}};
        mode.get = [](const C& c) { return to_string(c.mode); };
        mode.set = [](C& c, const std::string& s) { c.mode = parse_run_mode(trim(s)); };
        v.push_back(mode);
        v.push_back(num<std::uint64_t>("run.seed", "master seed", [](C& c) -> auto& { return c.seed; }));
        v.push_back(flag("run.virtual_clock", "deterministic simulated clock instead of wall time",
                         [](C& c) -> auto& { return c.virtual_clock; }));
        v.push_back(num<std::size_t>("run.env_step_budget", "stop after this many real environment steps",
                                     [](C& c) -> auto& { return c.env_step_budget; }));
        v.push_back(num<double>("run.wall_budget_s", "stop after this much runtime-clock time",
                                [](C& c) -> auto& { return c.wall_budget_s; }));
        v.push_back(num<std::size_t>("run.eval_interval_steps", "environment steps between evaluation checkpoints",
                                     [](C& c) -> auto& { return c.eval_interval; }));
        v.push_back(num<std::size_t>("run.eval_episodes_per_task", "greedy episodes per task at each checkpoint",
                                     [](C& c) -> auto& { return c.eval_episodes_per_task; }));
        v.push_back(num<double>("run.stop_at_return", "stop once an evaluation reaches this return (0 disables)",
                                [](C& c) -> auto& { return c.stop_at_return; }));
        v.push_back(num<double>("run.throughput_interval_s", "sampling period of the throughput series",
                                [](C& c) -> auto& { return c.throughput_interval_s; }));
        Field out{"run.out_dir", "output directory (empty: no files)", {}, {}};
        out.get = [](const C& c) { return c.out_dir; };
        out.set = [](C& c, const std::string& s) { c.out_dir = trim(s); };
        v.push_back(out);
        v.push_back(flag("run.world_model", "train the policy on imagined episodes",
                         [](C& c) -> auto& { return c.world_model; }));
        v.push_back(num<std::size_t>("run.pretrain_trajectories", "scripted episodes for world-model pretraining",
                                     [](C& c) -> auto& { return c.pretrain_trajectories; }));
        v.push_back(num<std::size_t>("run.pretrain_steps", "world-model pretraining steps per model",
                                     [](C& c) -> auto& { return c.pretrain_steps; }));
        v.push_back(num<double>("run.pretrain_noise", "probability of a random chunk in scripted episodes",
                                [](C& c) -> auto& { return c.pretrain_noise; }));
        v.push_back(flag("run.pretrain_counts_toward_budget", "count scripted environment steps toward the budget",
                         [](C& c) -> auto& { return c.pretrain_counts_toward_budget; }));
        v.push_back(num<std::size_t>("run.sync_episodes_per_worker", "lock-step baseline: episodes per worker per round",
                                     [](C& c) -> auto& { return c.sync_episodes_per_worker; }));
        v.push_back(num<std::size_t>("run.sync_updates_per_round", "lock-step baseline: optimizer steps per round",
                                     [](C& c) -> auto& { return c.sync_updates_per_round; }));

        v.push_back(num<int>("env.grid_size", "grid side length", [](C& c) -> auto& { return c.suite.grid_size; }));
        v.push_back(num<int>("env.num_tasks", "number of tasks", [](C& c) -> auto& { return c.suite.num_tasks; }));
        v.push_back(num<int>("env.horizon", "chunk steps per episode", [](C& c) -> auto& { return c.suite.horizon; }));
        v.push_back(num<int>("env.chunk_len", "tokens per action chunk", [](C& c) -> auto& { return c.suite.chunk_len; }));
        v.push_back(num<int>("env.object_spread", "object placement radius around its anchor",
                             [](C& c) -> auto& { return c.suite.object_spread; }));

        Field kind{"latency.kind", "constant | lognormal | bimodal", {}, {}};
        kind.get = [](const C& c) { return to_string(c.suite.latency.kind); };
        kind.set = [](C& c, const std::string& s) { c.suite.latency.kind = parse_latency_kind(trim(s)); };
        v.push_back(kind);
        v.push_back(num<double>("latency.constant_ms", "constant step latency",
                                [](C& c) -> auto& { return c.suite.latency.constant_ms; }));
        v.push_back(num<double>("latency.lognormal_mu", "log of the median latency in ms",
                                [](C& c) -> auto& { return c.suite.latency.lognormal_mu; }));
        v.push_back(num<double>("latency.lognormal_sigma", "log-space spread",
                                [](C& c) -> auto& { return c.suite.latency.lognormal_sigma; }));
        v.push_back(num<double>("latency.fast_ms", "bimodal fast mode", [](C& c) -> auto& { return c.suite.latency.fast_ms; }));
        v.push_back(num<double>("latency.slow_ms", "bimodal straggler mode",
                                [](C& c) -> auto& { return c.suite.latency.slow_ms; }));
        v.push_back(num<double>("latency.p_straggler", "bimodal straggler probability",
                                [](C& c) -> auto& { return c.suite.latency.p_straggler; }));
        Field scales{"latency.worker_scales", "comma-separated per-worker latency multipliers (missing: 1)", {}, {}};
        scales.get = [](const C& c) {
            std::string s;
            for (std::size_t i = 0; i < c.worker_latency_scales.size(); ++i) {
                if (i) s += ",";
                s += fmt_double(c.worker_latency_scales[i]);
            }
            return s;
        };
        scales.set = [](C& c, const std::string& s) {
            c.worker_latency_scales.clear();
            std::stringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (trim(item).empty()) continue;
                c.worker_latency_scales.push_back(parse_number<double>("latency.worker_scales", item));
            }
        };
        v.push_back(scales);

        v.push_back(num<int>("model.trunk_width", "observation encoder width", [](C& c) -> auto& { return c.model.trunk_width; }));
        v.push_back(num<int>("model.slot_width", "per-token hidden width", [](C& c) -> auto& { return c.model.slot_width; }));
        v.push_back(num<int>("model.value_hidden", "value head hidden width", [](C& c) -> auto& { return c.model.value_hidden; }));
        v.push_back(num<int>("model.vocab_size", "rows of the unslimmed output head",
                             [](C& c) -> auto& { return c.model.vocab_size; }));
        v.push_back(num<int>("model.obs_model_hidden", "observation model hidden width",
                             [](C& c) -> auto& { return c.model.obs_model_hidden; }));
        v.push_back(num<int>("model.reward_hidden", "reward model hidden width",
                             [](C& c) -> auto& { return c.model.reward_hidden; }));
        v.push_back(num<double>("model.head_init_scale", "output head initialization scale",
                                [](C& c) -> auto& { return c.model.head_init_scale; }));
        v.push_back(flag("model.snap_predicted_obs", "decode predicted frames to one cell per channel",
                         [](C& c) -> auto& { return c.snap_predicted_obs; }));

        const char* kinds[] = {"policy", "observation", "reward"};
        for (int k = 0; k < kNumModelKinds; ++k) {
            const std::string p = std::string("inference.") + kinds[k];
            v.push_back(num<std::size_t>(p + "_batch_size", "batch size trigger",
                                         [k](C& c) -> auto& { return c.inference.window[k].batch_size; }));
            v.push_back(millis(p + "_max_wait_ms", "oldest-request wait trigger",
                               [k](C& c) -> auto& { return c.inference.window[k].max_wait; }));
        }
        v.push_back(millis("inference.cost_per_batch_ms", "simulated cost of one batch",
                           [](C& c) -> auto& { return c.inference.cost.per_batch; }));
        v.push_back(millis("inference.cost_per_item_ms", "simulated cost per request",
                           [](C& c) -> auto& { return c.inference.cost.per_item; }));

        v.push_back(num<std::size_t>("rollout.num_workers", "rollout workers", [](C& c) -> auto& { return c.rollout.num_workers; }));
        v.push_back(num<std::size_t>("rollout.n_imagined_per_real", "imagined episodes after each real one",
                                     [](C& c) -> auto& { return c.rollout.n_imagined_per_real; }));
        v.push_back(num<std::size_t>("rollout.h_dwr", "task-selection window", [](C& c) -> auto& { return c.rollout.h_dwr; }));
        v.push_back(num<std::size_t>("rollout.h_img", "imagination horizon", [](C& c) -> auto& { return c.rollout.h_img; }));
        v.push_back(num<double>("rollout.dwr_epsilon", "task-selection smoothing",
                                [](C& c) -> auto& { return c.rollout.dwr_epsilon; }));
        v.push_back(num<double>("rollout.success_threshold", "imagined success probability that ends an episode",
                                [](C& c) -> auto& { return c.rollout.success_threshold; }));
        v.push_back(millis("rollout.episode_deadline_ms", "per-episode inference deadline",
                           [](C& c) -> auto& { return c.rollout.episode_deadline; }));
        v.push_back(num<std::size_t>("rollout.episode_buffer_capacity", "start frames kept per worker",
                                     [](C& c) -> auto& { return c.rollout.episode_buffer_capacity; }));

        v.push_back(num<std::size_t>("buffers.main_capacity", "real trajectory buffer", [](C& c) -> auto& { return c.main_capacity; }));
        v.push_back(num<std::size_t>("buffers.wm_capacity", "world-model buffer", [](C& c) -> auto& { return c.wm_capacity; }));
        v.push_back(num<std::size_t>("buffers.img_capacity", "imagined trajectory buffer",
                                     [](C& c) -> auto& { return c.img_capacity; }));
        v.push_back(num<std::size_t>("buffers.prefetch_cache_size", "super-batches built ahead of the trainer",
                                     [](C& c) -> auto& { return c.prefetch.cache_capacity; }));
        v.push_back(num<std::size_t>("buffers.batch_trajectories", "trajectories per super-batch",
                                     [](C& c) -> auto& { return c.prefetch.trajectories_per_batch; }));
        v.push_back(num<std::size_t>("buffers.min_trajectories", "buffer fill before the first batch",
                                     [](C& c) -> auto& { return c.prefetch.min_trajectories; }));
        v.push_back(millis("buffers.build_cost_ms", "simulated cost of building one super-batch",
                           [](C& c) -> auto& { return c.prefetch.build_cost; }));

        Field algo{"trainer.algorithm", "gipo | ppo", {}, {}};
        algo.get = [](const C& c) { return to_string(c.trainer.loss.algorithm); };
        algo.set = [](C& c, const std::string& s) { c.trainer.loss.algorithm = parse_algorithm(trim(s)); };
        v.push_back(algo);
        v.push_back(flag("trainer.revalue", "recompute values with the latest critic",
                         [](C& c) -> auto& { return c.prefetch.batch.revalue; }));
        v.push_back(num<double>("trainer.gamma", "discount", [](C& c) -> auto& { return c.prefetch.batch.gae.gamma; }));
        v.push_back(num<double>("trainer.lambda", "GAE lambda", [](C& c) -> auto& { return c.prefetch.batch.gae.lambda; }));
        v.push_back(num<std::size_t>("trainer.shards", "normalization shards", [](C& c) -> auto& { return c.prefetch.batch.shards; }));
        v.push_back(num<double>("trainer.norm_eps", "normalization epsilon", [](C& c) -> auto& { return c.prefetch.batch.norm_eps; }));
        v.push_back(num<double>("trainer.sigma", "trust width", [](C& c) -> auto& { return c.trainer.loss.sigma; }));
        v.push_back(num<double>("trainer.value_coef", "value loss weight", [](C& c) -> auto& { return c.trainer.loss.value_coef; }));
        v.push_back(num<double>("trainer.entropy_coef", "entropy bonus weight",
                                [](C& c) -> auto& { return c.trainer.loss.entropy_coef; }));
        v.push_back(num<double>("trainer.clip", "PPO clip range", [](C& c) -> auto& { return c.trainer.loss.clip; }));
        v.push_back(num<double>("trainer.lr", "policy learning rate", [](C& c) -> auto& { return c.trainer.adam.lr; }));
        v.push_back(num<double>("trainer.max_grad_norm", "gradient clipping norm (0 disables)",
                                [](C& c) -> auto& { return c.trainer.max_grad_norm; }));
        v.push_back(num<std::size_t>("trainer.t_obs", "observation-model period", [](C& c) -> auto& { return c.trainer.schedule.t_obs; }));
        v.push_back(num<std::size_t>("trainer.t_reward", "reward-model period",
                                     [](C& c) -> auto& { return c.trainer.schedule.t_reward; }));
        v.push_back(num<double>("trainer.wm_lr", "world-model learning rate", [](C& c) -> auto& { return c.trainer.wm_adam.lr; }));
        v.push_back(num<std::size_t>("trainer.wm_batch", "world-model batch size", [](C& c) -> auto& { return c.trainer.wm_batch; }));
        v.push_back(num<std::size_t>("trainer.wm_min_trajectories", "world-model buffer fill before training",
                                     [](C& c) -> auto& { return c.trainer.wm_min_trajectories; }));
        v.push_back(millis("trainer.step_cost_ms", "simulated cost of one policy step",
                           [](C& c) -> auto& { return c.trainer.step_cost; }));
        v.push_back(millis("trainer.wm_step_cost_ms", "simulated cost of one world-model step",
                           [](C& c) -> auto& { return c.trainer.wm_step_cost; }));
        return v;
    }();
    return fields;
}

const Field& field(const std::string& key) {
    for (const auto& f : schema()) {
        if (f.key == key) return f;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex16(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string dump_except(const ExperimentConfig& cfg, const std::vector<std::string>& skip) {
    std::string out, section;
    for (const auto& f : schema()) {
        if (std::find(skip.begin(), skip.end(), f.key) != skip.end()) continue;
        const auto dot = f.key.find('.');
        if (f.key.compare(0, dot, section) != 0 || section.size() != dot) {
            section = f.key.substr(0, dot);
            out += (out.empty() ? "[" : "\n[") + section + "]\n";
        }
        out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : schema()) keys.push_back(f.key);
    return keys;
}

std::string config_key_doc(const std::string& key) { return field(key).doc; }

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    field(key).set(cfg, value);
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) { return field(key).get(cfg); }

ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    std::vector<std::string> unknown;
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            unknown.push_back(section);
            continue;
        }
        for (const auto& [key, node] : body) {
            const std::string full = section + "." + key;
            const auto keys = config_keys();
            if (std::find(keys.begin(), keys.end(), full) == keys.end()) {
                unknown.push_back(full);
            } else {
                entries.emplace_back(full, node.data());
            }
        }
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config key(s):";
        for (const auto& k : unknown) msg += " " + k;
        throw ConfigError(msg);
    }
    for (const auto& [k, v] : entries) set_config_value(base, k, v);
    return base;
}

ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), std::move(base));
}

std::string dump_config(const ExperimentConfig& cfg) { return dump_except(cfg, {}); }

std::string config_hash(const ExperimentConfig& cfg) { return hex16(fnv1a(dump_config(cfg))); }

std::string algorithm_hash(const ExperimentConfig& cfg) {
    return hex16(fnv1a(dump_except(cfg, {"run.mode", "run.out_dir", "run.virtual_clock"})));
}

}  // namespace arl
