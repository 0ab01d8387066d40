#pragma once

// The four networks of the stack, all over ParamSet:
//
//  policy  : obs -> tanh trunk -> K action slots (the action-related hidden
//            states) -> per-token autoregressive decoder over the slimmed
//            action head. Parameters under "pi.".
//  value   : attention pooling over the detached slot states plus a step
//            embedding, then a small MLP. Parameters under "v.". Stored in
//            the same ParamSet as the policy and versioned with it.
//  obs     : residual one-primitive step x + W_a tanh(W x + b) + b_a with a
//            shared hidden layer and one output head per action token;
//            applied once per token and regressed on the frame after the
//            whole chunk. Parameters under "wm.obs.".
//  reward  : logistic success classifier on an observation. "wm.rew.".

#include <cstdint>
#include <span>
#include <vector>

#include "arl/env.hpp"
#include "arl/numerics.hpp"

namespace arl {

struct ModelConfig {
    int obs_dim = 192;
    int n_actions = kNumPrimitiveActions;
    int chunk_len = 4;
    int max_step = 13;        // rows of the step-embedding table
    int trunk_width = 64;
    int slot_width = 16;      // D
    int value_hidden = 32;
    int vocab_size = 32;      // rows of the unslimmed head
    int obs_model_hidden = 128;
    int reward_hidden = 32;
    double head_init_scale = 0.1;
    int snap_channels = 0;    // >0: decode predicted frames to one occupied cell per channel

    int action_start() const { return vocab_size - n_actions; }
    void validate() const;
};

/// Builds a full vocab_size-row head, slims it to the action range and stores
/// the result. Also initializes the value head.
ParamSet make_policy_params(const ModelConfig& cfg, Rng& rng);
ParamSet make_obs_model_params(const ModelConfig& cfg, Rng& rng);
ParamSet make_reward_model_params(const ModelConfig& cfg, Rng& rng);

// ---- policy ----------------------------------------------------------------

struct PolicyTrace {
    Vec h;                    // trunk activations
    Vec slots;                // K * D slot activations (flat)
    std::vector<Vec> u;       // per-token decoder states
    std::vector<Vec> logits;  // per-token raw logits over the action head
    std::vector<Vec> logp;    // per-token log-softmax
    std::vector<int> tokens;
};

/// Runs the policy with the given tokens as decoder inputs (teacher forcing).
PolicyTrace policy_trace(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs,
                         std::span<const int> tokens);

/// Backward pass for per-token logit gradients `d_logits` (K x N).
void policy_backward(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs, const PolicyTrace& tr,
                     const std::vector<Vec>& d_logits, ParamSet& grads);

struct PolicyAct {
    ActionChunk chunk;
    std::vector<Vec> logits;  // behaviour logits per token
    double value = 0.0;
};

/// Samples a chunk autoregressively (token k conditioned on tokens < k).
/// With rng == nullptr decoding is greedy.
PolicyAct policy_act(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs, int step, Rng* rng);

/// Trunk + slots only.
Vec policy_slots(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs);

// ---- value head ------------------------------------------------------------

struct ValueTrace {
    Vec scores;   // e_i
    Vec alpha;    // softmax(e)
    Vec pooled;   // z_pool
    Vec input;    // z_pool + e_step[t]
    MlpResult mlp;
    int step = 0;
    double value = 0.0;
};

/// Pools `n` hidden states of width D stored row-major in `hidden`.
ValueTrace value_head_trace(const ParamSet& p, std::span<const double> hidden, std::size_t n, int step);

/// Accumulates value-head parameter gradients for dL/dV = d_value. The hidden
/// states are treated as constants.
void value_head_backward(const ParamSet& p, std::span<const double> hidden, std::size_t n, const ValueTrace& tr,
                         double d_value, ParamSet& grads);

double value_head_forward(const ParamSet& p, const std::vector<Vec>& hidden, int step);

/// Value of an observation under the critic (policy trunk + value head).
double critic_value(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs, int step);

// ---- world model -----------------------------------------------------------

struct ObsTrace {
    std::vector<int> tokens;
    std::vector<Vec> inputs;  // frame before each token
    std::vector<Vec> hidden;  // shared tanh layer per token
    Vec output;               // unsnapped frame after the last token

    std::size_t steps() const { return tokens.size(); }
};

ObsTrace obs_model_trace(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs,
                         const ActionChunk& chunk);
/// Accumulates parameter gradients for dL/d(output) = d_output.
void obs_model_backward(const ParamSet& p, const ObsTrace& tr, std::span<const double> d_output, ParamSet& grads);
/// Keeps the largest entry of each equal-width channel, rounded to 0.5 or 1,
/// and zeroes the rest.
void snap_observation(Vec& obs, std::size_t channels);
/// Residual prediction; snapped when cfg.snap_channels > 0 and every entry
/// is finite.
Vec predict_next_obs(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs, const ActionChunk& chunk);
double predict_success(const ParamSet& p, std::span<const double> obs);

}  // namespace arl
