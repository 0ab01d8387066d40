#include "arl/trainer.hpp"

#include <cmath>

#include "arl/error.hpp"

namespace arl {

namespace {
constexpr double kSingleClassL2 = 1e-4;
}

double obs_model_loss(const ParamSet& p, const ModelConfig& mcfg, const std::vector<Transition>& batch,
                      ParamSet* grads) {
    if (batch.empty()) throw DomainError("obs_model_loss: empty batch");
    const std::size_t D = static_cast<std::size_t>(mcfg.obs_dim);
    const double n = static_cast<double>(batch.size());
    double loss = 0.0;
    Vec d(D);
    for (const auto& tr : batch) {
        if (tr.next_obs.size() != D) throw DimensionError("obs_model_loss: next observation width mismatch");
        const ObsTrace fwd = obs_model_trace(p, mcfg, tr.obs, tr.chunk);
        double l = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
            const double e = fwd.output[i] - tr.next_obs[i];
            l += e * e;
            d[i] = 2.0 * e / (static_cast<double>(D) * n);
        }
        loss += l / static_cast<double>(D);
        if (grads) obs_model_backward(p, fwd, d, *grads);
    }
    return loss / n;
}

double reward_model_loss(const ParamSet& p, const std::vector<LabeledFrame>& batch, ParamSet* grads) {
    if (batch.empty()) throw DomainError("reward_model_loss: empty batch");
    const double n = static_cast<double>(batch.size());
    double loss = 0.0;
    for (const auto& f : batch) {
        const MlpResult fwd = mlp_forward(p, "wm.rew.", f.obs);
        const double z = fwd.output[0];
        // softplus(z) - y z, evaluated without overflow
        const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        loss += softplus - f.label * z;
        if (grads) {
            const double dz = (sigmoid(z) - f.label) / n;
            mlp_backward(p, "wm.rew.", f.obs, fwd, std::span<const double>(&dz, 1), *grads);
        }
    }
    return loss / n;
}

std::vector<Transition> sample_transitions(const std::vector<TrajectoryPtr>& trajs, std::size_t n, Rng& rng) {
    std::vector<Transition> out;
    if (trajs.empty()) return out;
    out.reserve(n);
    while (out.size() < n) {
        const Trajectory& t = *trajs[uniform_index(rng, trajs.size())];
        if (t.length() == 0) continue;
        const std::size_t s = uniform_index(rng, t.length());
        out.push_back(Transition{t.observations[s].pixels, t.actions[s], t.observations[s + 1].pixels});
    }
    return out;
}

std::vector<LabeledFrame> sample_labeled_frames(const std::vector<TrajectoryPtr>& trajs, std::size_t n, Rng& rng) {
    std::vector<const Vec*> pos, neg;
    for (const auto& tp : trajs) {
        const Trajectory& t = *tp;
        for (std::size_t i = 0; i < t.observations.size(); ++i) {
            const bool goal = t.success && i + 1 == t.observations.size();
            (goal ? pos : neg).push_back(&t.observations[i].pixels);
        }
    }
    std::vector<LabeledFrame> out;
    if (pos.empty() && neg.empty()) return out;
    out.reserve(n);
    const std::size_t n_pos = pos.empty() ? 0 : neg.empty() ? n : n / 2;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_pos) {
            out.push_back(LabeledFrame{*pos[uniform_index(rng, pos.size())], 1.0});
        } else {
            out.push_back(LabeledFrame{*neg[uniform_index(rng, neg.size())], 0.0});
        }
    }
    return out;
}

void WmSchedule::validate() const {
    if (t_obs < 1 || t_reward < 1) throw ConfigError("trainer.t_obs and trainer.t_reward must be >= 1");
}

Trainer::Trainer(ModelConfig mcfg, TrainerConfig cfg, ParamSet policy, ParamSet obs_model, ParamSet reward_model)
    : mcfg_(std::move(mcfg)),
      cfg_(std::move(cfg)),
      policy_(std::move(policy)),
      obs_model_(std::move(obs_model)),
      reward_model_(std::move(reward_model)),
      policy_opt_(AdamState::for_params(policy_, cfg_.adam)),
      obs_opt_(AdamState::for_params(obs_model_, cfg_.wm_adam)),
      reward_opt_(AdamState::for_params(reward_model_, cfg_.wm_adam)) {
    cfg_.loss.validate();
    cfg_.schedule.validate();
}

VersionedWeights Trainer::snapshot(ModelKind kind) const {
    const ParamSet& p = kind == ModelKind::policy ? policy_ : kind == ModelKind::observation ? obs_model_ : reward_model_;
    VersionedWeights w;
    w.params = std::make_shared<const ParamSet>(p);
    w.version = p.version();
    return w;
}

void Trainer::publish(ModelKind kind) {
    if (publish_) publish_(kind, snapshot(kind));
}

void Trainer::publish_all() {
    publish(ModelKind::policy);
    publish(ModelKind::observation);
    publish(ModelKind::reward);
}

std::optional<TrainStepRecord> Trainer::train_step(const SuperBatch& batch, Duration now) {
    ++cycle_;
    TrainStepRecord rec;
    rec.critic_version = batch.critic_version;
    rec.staleness = policy_.version() >= batch.min_behavior_version ? policy_.version() - batch.min_behavior_version : 0;
    try {
        LossResult res = compute_loss(policy_, mcfg_, batch, cfg_.loss);
        rec.grad_norm = cfg_.max_grad_norm > 0.0 ? clip_grad_norm(res.grads, cfg_.max_grad_norm) : 0.0;
        adam_step(policy_, res.grads, policy_opt_);
        rec.diag = res.diag;
    } catch (const BatchDropped&) {
        ++dropped_;
        return std::nullopt;
    } catch (const NonFiniteError&) {
        ++dropped_;
        return std::nullopt;
    }
    rec.step = ++steps_;
    rec.time = now;
    rec.version = policy_.version();
    publish(ModelKind::policy);
    return rec;
}

double Trainer::train_obs_model_step(const std::vector<Transition>& batch) {
    ParamSet g = obs_model_.zeros_like();
    const double loss = obs_model_loss(obs_model_, mcfg_, batch, &g);
    if (cfg_.max_grad_norm > 0.0) clip_grad_norm(g, cfg_.max_grad_norm);
    adam_step(obs_model_, g, obs_opt_);
    ++obs_updates_;
    publish(ModelKind::observation);
    return loss;
}

double Trainer::train_reward_model_step(const std::vector<LabeledFrame>& batch) {
    ParamSet g = reward_model_.zeros_like();
    double loss = reward_model_loss(reward_model_, batch, &g);
    bool has_pos = false, has_neg = false;
    for (const auto& f : batch) (f.label > 0.5 ? has_pos : has_neg) = true;
    if (!(has_pos && has_neg)) {
        ++single_class_;
        for (std::size_t i = 0; i < g.num_scalars(); ++i) {
            const double w = reward_model_.flat(i);
            g.flat(i) += kSingleClassL2 * w;
            loss += 0.5 * kSingleClassL2 * w * w;
        }
    }
    if (cfg_.max_grad_norm > 0.0) clip_grad_norm(g, cfg_.max_grad_norm);
    adam_step(reward_model_, g, reward_opt_);
    ++reward_updates_;
    publish(ModelKind::reward);
    return loss;
}

int Trainer::world_model_substeps(ReplayBuffer& wm, Rng& rng) {
    if (!cfg_.world_model) return 0;
    int ran = 0;
    if (cfg_.schedule.obs_due(cycle_)) {
        if (auto trajs = wm.sample(cfg_.wm_min_trajectories, rng)) {
            auto more = wm.sample(cfg_.wm_batch, rng);
            train_obs_model_step(sample_transitions(more ? *more : *trajs, cfg_.wm_batch, rng));
            ++ran;
        }
    }
    if (cfg_.schedule.reward_due(cycle_)) {
        if (auto trajs = wm.sample(std::max(cfg_.wm_min_trajectories, cfg_.wm_batch), rng)) {
            train_reward_model_step(sample_labeled_frames(*trajs, cfg_.wm_batch, rng));
            ++ran;
        }
    }
    return ran;
}

}  // namespace arl
