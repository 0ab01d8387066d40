#include "arl/harness.hpp"

#include <algorithm>
#include <cmath>

#include "arl/error.hpp"

namespace arl {

namespace {

double seconds(Duration d) { return static_cast<double>(d.count()) * 1e-9; }

Duration from_seconds(double s) { return Duration(static_cast<Duration::rep>(s * 1e9)); }

// Lock-step baseline coordination, guarded by the runtime lock.
//  step barrier     every worker still inside its episode finishes step t
//                   before any starts step t + 1
//  episode barrier  no worker starts a new episode until all have finished
//  cluster barrier  after the quota, workers wait for one update and the
//                   weight sync
struct LockStep {
    Runtime& rt;
    std::size_t workers;
    const bool& stopping;

    std::size_t active = 0;
    std::size_t arrived = 0;
    std::uint64_t step_gen = 0;
    std::size_t episode_done = 0;
    std::uint64_t episode_gen = 0;
    std::size_t round_done = 0;
    std::uint64_t round_gen = 0;
    std::size_t step_barriers = 0;
    std::size_t episode_barriers = 0;
    std::size_t global_barriers = 0;
    Duration barrier_wait{0};

    LockStep(Runtime& r, std::size_t n, const bool& stop) : rt(r), workers(n), stopping(stop), active(n) {}

    void release_step() {
        arrived = 0;
        ++step_gen;
        ++step_barriers;
        rt.notify();
    }

    void wait_change(Lock& lk, const std::uint64_t& gen_ref) {
        const std::uint64_t g = gen_ref;
        const Duration t0 = rt.now();
        rt.wait_until(lk, [&] { return gen_ref != g || stopping; });
        barrier_wait += rt.now() - t0;
    }

    void arrive_step(Lock& lk) {
        if (stopping) return;
        if (++arrived >= active) {
            release_step();
            return;
        }
        wait_change(lk, step_gen);
    }

    void end_episode(Lock& lk) {
        --active;
        if (active > 0 && arrived >= active) release_step();
        if (stopping) return;
        if (++episode_done == workers) {
            episode_done = 0;
            active = workers;
            arrived = 0;
            ++episode_gen;
            ++episode_barriers;
            rt.notify();
            return;
        }
        wait_change(lk, episode_gen);
    }

    void end_round(Lock& lk) {
        if (stopping) return;
        ++round_done;
        rt.notify();
        wait_change(lk, round_gen);
    }
};

struct RunState {
    bool stopping = false;
    bool early_stopped = false;
    bool failed = false;
    Duration start{0};
    Duration stop_time{0};
};

TrainPoint train_point(const TrainStepRecord& rec, std::size_t env_steps) {
    TrainPoint p;
    p.step = rec.step;
    p.wall_s = seconds(rec.time);
    p.env_steps = env_steps;
    p.version = rec.version;
    p.critic_version = rec.critic_version;
    p.staleness = rec.staleness;
    p.policy_loss = rec.diag.policy_loss;
    p.value_loss = rec.diag.value_loss;
    p.entropy = rec.diag.entropy;
    p.mean_ratio = rec.diag.mean_ratio;
    p.max_ratio = rec.diag.max_ratio;
    p.clip_fraction = rec.diag.clip_fraction;
    p.mean_trust_weight = rec.diag.mean_trust_weight;
    p.grad_norm = rec.grad_norm;
    return p;
}

ActionChunk random_chunk(int k, Rng& rng) {
    ActionChunk c;
    for (int i = 0; i < k; ++i) c.tokens.push_back(static_cast<int>(uniform_index(rng, kNumPrimitiveActions)));
    return c;
}

}  // namespace

EvalPoint evaluate_policy(const ParamSet& policy, const ExperimentConfig& cfg, std::uint64_t eval_seed) {
    SuiteConfig suite = cfg.suite;
    suite.latency = LatencyModel{};
    GridEnv env(suite);
    EvalPoint e;
    e.policy_version = policy.version();
    double total = 0.0;
    std::size_t successes = 0, episodes = 0;
    for (int task = 0; task < suite.num_tasks; ++task) {
        double task_total = 0.0;
        for (std::size_t i = 0; i < cfg.eval_episodes_per_task; ++i) {
            Observation o = env.reset(task, substream_seed(eval_seed, static_cast<std::uint64_t>(task) * 1000003ULL + i));
            for (;;) {
                const PolicyAct act = policy_act(policy, cfg.model, o.pixels, o.step, nullptr);
                const StepResult r = env.step(act.chunk);
                task_total += r.reward;
                o = r.obs;
                if (r.done) {
                    successes += r.success;
                    break;
                }
            }
            ++episodes;
        }
        e.task_returns.push_back(task_total / static_cast<double>(cfg.eval_episodes_per_task));
        total += task_total;
    }
    e.mean_return = total / static_cast<double>(episodes);
    e.success_rate = static_cast<double>(successes) / static_cast<double>(episodes);
    return e;
}

std::vector<TrajectoryPtr> scripted_trajectories(const ExperimentConfig& cfg, std::size_t n, Rng& rng) {
    const SuiteConfig& suite = cfg.suite;
    const int k = suite.chunk_len;
    GridEnv env(suite);
    std::vector<TrajectoryPtr> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto t = std::make_shared<Trajectory>();
        t->task = static_cast<int>(i % static_cast<std::size_t>(suite.num_tasks));
        Observation o = env.reset(t->task, rng());
        t->observations.push_back(o);
        for (;;) {
            ActionChunk c;
            if (uniform01(rng) < cfg.pretrain_noise) {
                c = random_chunk(k, rng);
            } else {
                const EnvState& s = env.state();
                auto sol = shortest_solution(suite, s.layout, s.holding, k * suite.horizon);
                if (!sol) {
                    c = random_chunk(k, rng);
                } else {
                    for (int j = 0; j < k; ++j) {
                        c.tokens.push_back(j < static_cast<int>(sol->size()) ? (*sol)[static_cast<std::size_t>(j)] : kNoop);
                    }
                }
            }
            const StepResult r = env.step(c);
            t->actions.push_back(std::move(c));
            t->behavior_logits.push_back(std::vector<Vec>(static_cast<std::size_t>(k), Vec(kNumPrimitiveActions, 0.0)));
            t->values.push_back(0.0);
            t->step_versions.push_back(0);
            t->rewards.push_back(r.reward);
            t->observations.push_back(r.obs);
            if (r.done) {
                t->done = true;
                t->success = r.success;
                break;
            }
        }
        t->validate();
        out.push_back(std::move(t));
    }
    return out;
}

MetricsReport run_experiment(ExperimentConfig cfg) {
    cfg.finalize();
    MetricsReport report;
    report.config_hash = config_hash(cfg);
    report.seed = cfg.seed;
    if (cfg.env_step_budget == 0) {
        for (const char* k : {"env_steps", "real_episodes", "train_steps", "live_loops_after_shutdown", "failed"}) {
            report.summary[k] = 0.0;
        }
        if (!cfg.out_dir.empty()) write_report(report, cfg.out_dir);
        return report;
    }

    auto rt = make_runtime(cfg.virtual_clock);
    Rng init_rng = make_rng(cfg.seed, 1);
    ParamSet policy = make_policy_params(cfg.model, init_rng);
    ParamSet obs_model = make_obs_model_params(cfg.model, init_rng);
    ParamSet reward_model = make_reward_model_params(cfg.model, init_rng);
    Trainer trainer(cfg.model, cfg.trainer, std::move(policy), std::move(obs_model), std::move(reward_model));
    Rng trainer_rng = make_rng(cfg.seed, 2);
    const std::uint64_t eval_seed = substream_seed(cfg.seed, 3);

    InferenceService service(*rt, cfg.model, cfg.inference);
    ReplayBuffer main_buf(*rt, BufferKind::main, cfg.main_capacity);
    ReplayBuffer wm_buf(*rt, BufferKind::world_model, cfg.wm_capacity);
    ReplayBuffer img_buf(*rt, BufferKind::imagined, cfg.img_capacity);
    TaskStats stats(cfg.suite.num_tasks, cfg.rollout.h_dwr, cfg.rollout.dwr_epsilon);
    RolloutCounters counters;
    counters.worker_episodes.assign(cfg.rollout.num_workers, 0);
    RunState st;
    LockStep lockstep(*rt, cfg.rollout.num_workers, st.stopping);
    std::size_t update_rounds = 0;
    std::size_t pretrain_steps = 0;

    if (cfg.world_model) {
        Rng script_rng = make_rng(cfg.seed, 4);
        const auto scripted = scripted_trajectories(cfg, cfg.pretrain_trajectories, script_rng);
        for (const auto& t : scripted) {
            wm_buf.push(t);
            pretrain_steps += t->length();
        }
        if (cfg.pretrain_counts_toward_budget) counters.env_steps += pretrain_steps;
        if (!scripted.empty()) {
            for (std::size_t s = 0; s < cfg.pretrain_steps; ++s) {
                trainer.train_obs_model_step(sample_transitions(scripted, cfg.trainer.wm_batch, trainer_rng));
                trainer.train_reward_model_step(sample_labeled_frames(scripted, cfg.trainer.wm_batch, trainer_rng));
            }
        }
    }
    trainer.set_publisher([&service](ModelKind k, VersionedWeights w) { service.update_weights(k, std::move(w)); });
    trainer.publish_all();

    const bool async = cfg.mode == RunMode::async;
    RolloutContext ctx{*rt,
                       service,
                       cfg.world_model ? nullptr : &main_buf,
                       cfg.world_model ? &wm_buf : nullptr,
                       cfg.world_model ? &img_buf : nullptr,
                       stats,
                       counters,
                       cfg.suite,
                       cfg.rollout,
                       {},
                       {}};
    if (async) {
        ctx.stop = [&] { return st.stopping || counters.env_steps >= cfg.env_step_budget; };
    } else {
        ctx.stop = [&] { return st.stopping; };
        ctx.after_step = [&] {
            Lock lk = rt->lock();
            lockstep.arrive_step(lk);
        };
    }

    PrefetchConfig pcfg = cfg.prefetch;
    Prefetcher prefetcher(*rt, cfg.world_model ? img_buf : main_buf,
                          [&service] { return service.current(ModelKind::policy); }, cfg.model, pcfg,
                          substream_seed(cfg.seed, 5));

    // Any process failure stops the whole run.
    auto guarded = [&](std::function<void()> body) {
        return [&, body = std::move(body)] {
            try {
                body();
            } catch (...) {
                Lock lk = rt->lock();
                st.stopping = true;
                st.failed = true;
                rt->notify();
                throw;
            }
        };
    };

    std::vector<std::unique_ptr<Worker>> workers;
    for (std::size_t i = 0; i < cfg.rollout.num_workers; ++i) {
        workers.push_back(std::make_unique<Worker>(ctx, i, substream_seed(cfg.seed, 100 + i)));
    }

    service.start();
    st.start = rt->now();
    const Duration wall_deadline = st.start + from_seconds(cfg.wall_budget_s);

    if (async) {
        prefetcher.start();
        for (auto& w : workers) {
            Worker* wp = w.get();
            rt->spawn("worker." + std::to_string(wp->index()), guarded([wp] { wp->run(); }));
        }
        rt->spawn("trainer", guarded([&] {
                      for (;;) {
                          auto batch = prefetcher.pop();
                          if (!batch) return;
                          rt->charge(cfg.trainer.step_cost);
                          auto rec = trainer.train_step(*batch, rt->now());
                          const int sub = trainer.world_model_substeps(wm_buf, trainer_rng);
                          if (sub > 0) rt->charge(cfg.trainer.wm_step_cost * sub);
                          Lock lk = rt->lock();
                          if (rec) report.train.push_back(train_point(*rec, counters.env_steps));
                          if (st.stopping) return;
                      }
                  }));
    } else {
        for (auto& w : workers) {
            Worker* wp = w.get();
            rt->spawn("worker." + std::to_string(wp->index()), guarded([&, wp] {
                          for (;;) {
                              for (std::size_t q = 0; q < cfg.sync_episodes_per_worker; ++q) {
                                  {
                                      Lock lk = rt->lock();
                                      if (st.stopping) return;
                                  }
                                  try {
                                      wp->collect_real_episode();
                                  } catch (const ShutdownError&) {
                                      return;
                                  }
                                  Lock lk = rt->lock();
                                  lockstep.end_episode(lk);
                              }
                              Lock lk = rt->lock();
                              lockstep.end_round(lk);
                          }
                      }));
        }
        rt->spawn("trainer", guarded([&] {
                      std::size_t consumed = 0;
                      for (;;) {
                          Lock lk = rt->lock();
                          rt->wait_until(lk, [&] { return st.stopping || lockstep.round_done == lockstep.workers; });
                          if (st.stopping) return;
                          lk.unlock();
                          const auto all = main_buf.contents();
                          const std::size_t pushed = main_buf.counters().pushed;
                          const std::size_t fresh = std::min(pushed - consumed, all.size());
                          consumed = pushed;
                          const std::vector<TrajectoryPtr> round(all.end() - static_cast<std::ptrdiff_t>(fresh), all.end());
                          if (!round.empty()) {
                              rt->charge(cfg.prefetch.build_cost);
                              std::optional<SuperBatch> batch;
                              try {
                                  batch = build_super_batch(round, service.current(ModelKind::policy), cfg.model,
                                                            cfg.prefetch.batch);
                              } catch (const NonFiniteError&) {
                                  batch.reset();
                              }
                              for (std::size_t u = 0; batch && u < cfg.sync_updates_per_round; ++u) {
                                  rt->charge(cfg.trainer.step_cost);
                                  auto rec = trainer.train_step(*batch, rt->now());
                                  Lock lk2 = rt->lock();
                                  if (rec) report.train.push_back(train_point(*rec, counters.env_steps));
                              }
                          }
                          lk.lock();
                          ++update_rounds;
                          lockstep.round_done = 0;
                          ++lockstep.round_gen;
                          ++lockstep.global_barriers;
                          if (counters.env_steps >= cfg.env_step_budget) st.stopping = true;
                          rt->notify();
                      }
                  }));
    }

    rt->spawn("evaluator", guarded([&] {
                  std::size_t next = 0;
                  for (;;) {
                      Lock lk = rt->lock();
                      rt->wait_until(lk, [&] { return st.stopping || counters.env_steps >= next; });
                      if (st.stopping) return;
                      const std::size_t steps = counters.env_steps;
                      lk.unlock();
                      const VersionedWeights w = service.current(ModelKind::policy);
                      EvalPoint e = evaluate_policy(*w.params, cfg, eval_seed);
                      e.env_steps = steps;
                      e.policy_version = w.version;
                      lk.lock();
                      e.wall_s = seconds(rt->now() - st.start);
                      report.evals.push_back(std::move(e));
                      if (cfg.stop_at_return > 0.0 && report.evals.back().mean_return >= cfg.stop_at_return) {
                          st.stopping = true;
                          st.early_stopped = true;
                      }
                      rt->notify();
                      next = (steps / cfg.eval_interval + 1) * cfg.eval_interval;
                  }
              }));

    rt->spawn("monitor", guarded([&] {
                  const Duration period = from_seconds(cfg.throughput_interval_s);
                  Duration tick = st.start + period;
                  std::size_t prev_steps = counters.env_steps, prev_eps = 0;
                  Duration prev_blocked{0};
                  Duration prev_t = st.start;
                  Lock lk = rt->lock();
                  for (;;) {
                      rt->wait_until(lk, [&] { return st.stopping; }, tick);
                      if (st.stopping) return;
                      const Duration now = rt->now();
                      const Duration blocked = counters.inference_wait + lockstep.barrier_wait;
                      const double dt = seconds(now - prev_t);
                      ThroughputPoint p;
                      p.wall_s = seconds(now - st.start);
                      p.env_steps = counters.env_steps;
                      p.episodes = counters.real_episodes;
                      p.episodes_per_s = static_cast<double>(p.episodes - prev_eps) / dt;
                      p.steps_per_s = static_cast<double>(p.env_steps - prev_steps) / dt;
                      p.worker_utilization = std::clamp(
                          1.0 - seconds(blocked - prev_blocked) / (dt * static_cast<double>(cfg.rollout.num_workers)), 0.0,
                          1.0);
                      report.throughput.push_back(p);
                      prev_steps = p.env_steps;
                      prev_eps = p.episodes;
                      prev_blocked = blocked;
                      prev_t = now;
                      tick += period;
                  }
              }));

    {
        Lock lk = rt->lock();
        rt->wait_until(lk, [&] { return st.stopping || counters.env_steps >= cfg.env_step_budget; }, wall_deadline);
        st.stopping = true;
        st.stop_time = rt->now();
        rt->notify();
    }
    prefetcher.shutdown();
    service.shutdown();

    std::exception_ptr failure;
    try {
        rt->join_all();
    } catch (...) {
        failure = std::current_exception();
    }

    // Final checkpoint on the trainer's latest weights.
    if (!failure && (report.evals.empty() || report.evals.back().env_steps != counters.env_steps)) {
        EvalPoint e = evaluate_policy(trainer.policy(), cfg, eval_seed);
        e.env_steps = counters.env_steps;
        e.wall_s = seconds(st.stop_time - st.start);
        report.evals.push_back(std::move(e));
    }

    const double wall = std::max(seconds(st.stop_time - st.start), 1e-9);
    const PrefetchStats ps = prefetcher.stats();
    const KindMetrics pm = service.metrics(ModelKind::policy);
    auto& s = report.summary;
    s["env_steps"] = static_cast<double>(counters.env_steps);
    s["pretrain_env_steps"] = static_cast<double>(pretrain_steps);
    s["real_episodes"] = static_cast<double>(counters.real_episodes);
    s["successes"] = static_cast<double>(counters.successes);
    s["wall_s"] = wall;
    s["episodes_per_s"] = static_cast<double>(counters.real_episodes) / wall;
    s["steps_per_s"] = static_cast<double>(counters.env_steps - (cfg.pretrain_counts_toward_budget ? pretrain_steps : 0)) / wall;
    s["worker_utilization"] = std::clamp(
        1.0 - seconds(counters.inference_wait + lockstep.barrier_wait) / (wall * static_cast<double>(cfg.rollout.num_workers)),
        0.0, 1.0);
    s["train_steps"] = static_cast<double>(report.train.size());
    s["dropped_batches"] = static_cast<double>(trainer.dropped_batches() + ps.dropped);
    s["final_policy_version"] = static_cast<double>(trainer.policy().version());
    double stale_sum = 0.0, stale_max = 0.0;
    for (const auto& t : report.train) {
        stale_sum += static_cast<double>(t.staleness);
        stale_max = std::max(stale_max, static_cast<double>(t.staleness));
    }
    s["mean_staleness"] = report.train.empty() ? 0.0 : stale_sum / static_cast<double>(report.train.size());
    s["max_staleness"] = stale_max;
    double best = 0.0;
    for (const auto& e : report.evals) best = std::max(best, e.mean_return);
    s["final_return"] = report.evals.empty() ? 0.0 : report.evals.back().mean_return;
    s["best_return"] = best;
    auto reach = [&](double threshold) {
        const auto r = steps_to_reach(report.evals, threshold);
        return r ? static_cast<double>(*r) : -1.0;  // -1: never reached
    };
    s["steps_to_0.8"] = reach(0.8);
    s["steps_to_0.9"] = reach(0.9);
    s["early_stopped"] = st.early_stopped ? 1.0 : 0.0;
    s["imagined_episodes"] = static_cast<double>(counters.imagined_episodes);
    s["imagined_successes"] = static_cast<double>(counters.imagined_successes);
    s["imagined_steps"] = static_cast<double>(counters.imagined_steps);
    s["discarded_imagined"] = static_cast<double>(counters.discarded_imagined);
    s["aborted_episodes"] = static_cast<double>(counters.aborted_episodes);
    s["max_telescoping_error"] = counters.max_telescoping_error;
    s["prefetch_built"] = static_cast<double>(ps.built);
    s["trainer_wait_s"] = seconds(ps.consumer_wait);
    s["policy_batches"] = static_cast<double>(pm.batches);
    s["policy_mean_batch"] = pm.batches ? static_cast<double>(pm.requests) / static_cast<double>(pm.batches) : 0.0;
    s["obs_model_updates"] = static_cast<double>(trainer.obs_updates());
    s["reward_model_updates"] = static_cast<double>(trainer.reward_updates());
    s["single_class_reward_batches"] = static_cast<double>(trainer.single_class_reward_batches());
    s["update_rounds"] = static_cast<double>(update_rounds);
    s["global_barriers"] = static_cast<double>(lockstep.global_barriers);
    s["step_barriers"] = static_cast<double>(lockstep.step_barriers);
    s["episode_barriers"] = static_cast<double>(lockstep.episode_barriers);
    s["barrier_wait_s"] = seconds(lockstep.barrier_wait);
    s["live_loops_after_shutdown"] = static_cast<double>(rt->live_count());
    s["failed"] = failure ? 1.0 : 0.0;

    if (!cfg.out_dir.empty()) write_report(report, cfg.out_dir);
    if (failure) std::rethrow_exception(failure);
    return report;
}

namespace presets {

ExperimentConfig learning() {
    ExperimentConfig c;
    return c;
}

ExperimentConfig revalue_ablation(bool revalue) {
    ExperimentConfig c = learning();
    c.prefetch.cache_capacity = 4;
    c.prefetch.batch.revalue = revalue;
    return c;
}

ExperimentConfig algorithm_ablation(Algorithm algorithm) {
    ExperimentConfig c = revalue_ablation(true);
    c.trainer.loss.algorithm = algorithm;
    return c;
}

ExperimentConfig worker_scaling(std::size_t workers, RunMode mode) {
    ExperimentConfig c = learning();
    c.mode = mode;
    c.virtual_clock = false;
    c.rollout.num_workers = workers;
    c.suite.latency.kind = LatencyKind::bimodal;
    c.suite.latency.fast_ms = 2.0;
    c.suite.latency.slow_ms = 200.0;
    c.suite.latency.p_straggler = 0.1;
    c.inference.window[static_cast<int>(ModelKind::policy)].batch_size = workers;
    c.env_step_budget = 100000000;
    c.wall_budget_s = 20.0;
    c.eval_interval = 100000000;
    return c;
}

ExperimentConfig tail_free(RunMode mode) {
    ExperimentConfig c = worker_scaling(1, mode);
    c.suite.latency.kind = LatencyKind::constant;
    c.suite.latency.constant_ms = 10.0;
    return c;
}

ExperimentConfig world_model_efficiency(bool world_model) {
    ExperimentConfig c = learning();
    c.world_model = world_model;
    if (world_model) {
        c.rollout.n_imagined_per_real = 10;
        c.img_capacity = 128;
    }
    return c;
}

}  // namespace presets

}  // namespace arl
