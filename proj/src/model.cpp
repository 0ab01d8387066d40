#include "arl/model.hpp"

#include <algorithm>
#include <cmath>

#include "arl/error.hpp"
#include "arl/vocab.hpp"

namespace arl {

void ModelConfig::validate() const {
    if (obs_dim < 1 || n_actions < 1 || chunk_len < 1 || max_step < 1 || trunk_width < 1 || slot_width < 1 ||
        value_hidden < 1 || obs_model_hidden < 1 || reward_hidden < 1) {
        throw ConfigError("model: all widths must be positive");
    }
    if (vocab_size < n_actions) throw ConfigError("model.vocab_size must be >= the number of action tokens");
    if (snap_channels < 0 || (snap_channels > 0 && obs_dim % snap_channels != 0)) {
        throw ConfigError("model.snap_channels must divide the observation width");
    }
}

namespace {

std::string obs_head(int token) { return "wm.obs.a" + std::to_string(token); }

void fill_normal(Tensor& t, Rng& rng, double scale) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& v : t.data) v = nd(rng) * scale;
}

inline std::size_t sz(int v) { return static_cast<std::size_t>(v); }

}  // namespace

ParamSet make_policy_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t K = sz(cfg.chunk_len), D = sz(cfg.slot_width), T = sz(cfg.trunk_width);
    const std::size_t N = sz(cfg.n_actions), O = sz(cfg.obs_dim);
    ParamSet p;
    fill_normal(p.add("pi.trunk.w", T, O), rng, 1.0 / std::sqrt(static_cast<double>(O) * 0.05));
    p.add("pi.trunk.b", T, 1);
    fill_normal(p.add("pi.slots.w", K * D, T), rng, 1.0 / std::sqrt(static_cast<double>(T)));
    p.add("pi.slots.b", K * D, 1);
    fill_normal(p.add("pi.embed", N + 1, D), rng, 0.5);

    Tensor full(sz(cfg.vocab_size), D);
    fill_normal(full, rng, cfg.head_init_scale / std::sqrt(static_cast<double>(D)));
    p.add("pi.head.w", N, D) = slim_vocabulary(full, cfg.action_start(), cfg.vocab_size);
    p.add("pi.head.b", N, 1);

    fill_normal(p.add("v.attn.w", 1, D), rng, 1.0 / std::sqrt(static_cast<double>(D)));
    p.add("v.attn.b", 1, 1);
    fill_normal(p.add("v.step", sz(cfg.max_step), D), rng, 0.1);
    init_mlp(p, MlpLayout{"v.mlp.", {D, sz(cfg.value_hidden), 1}}, rng, 0.1);
    return p;
}

ParamSet make_obs_model_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamSet p;
    init_mlp(p, MlpLayout{"wm.obs.", {sz(cfg.obs_dim), sz(cfg.obs_model_hidden)}}, rng);
    const double scale = 0.1 / std::sqrt(static_cast<double>(cfg.obs_model_hidden));
    for (int a = 0; a < cfg.n_actions; ++a) {
        fill_normal(p.add(obs_head(a) + ".w", sz(cfg.obs_dim), sz(cfg.obs_model_hidden)), rng, scale);
        p.add(obs_head(a) + ".b", sz(cfg.obs_dim), 1);
    }
    return p;
}

ParamSet make_reward_model_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamSet p;
    init_mlp(p, MlpLayout{"wm.rew.", {sz(cfg.obs_dim), sz(cfg.reward_hidden), 1}}, rng, 0.1);
    return p;
}

Vec policy_slots(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs) {
    const Tensor& wt = p.at("pi.trunk.w");
    Vec h(wt.rows);
    affine(wt, p.at("pi.trunk.b"), obs, h, "pi.trunk");
    for (double& v : h) v = std::tanh(v);
    const Tensor& ws = p.at("pi.slots.w");
    Vec s(ws.rows);
    affine(ws, p.at("pi.slots.b"), h, s, "pi.slots");
    for (double& v : s) v = std::tanh(v);
    (void)cfg;
    return s;
}

namespace {

// u = tanh(slot + embed[prev]); logits = head u + bias.
void decode_token(const ParamSet& p, std::span<const double> slot, int prev, Vec& u, Vec& logits) {
    const Tensor& emb = p.at("pi.embed");
    const Tensor& hw = p.at("pi.head.w");
    const std::size_t D = slot.size();
    u.resize(D);
    auto e = emb.row(static_cast<std::size_t>(prev));
    for (std::size_t i = 0; i < D; ++i) u[i] = std::tanh(slot[i] + e[i]);
    logits.resize(hw.rows);
    affine(hw, p.at("pi.head.b"), u, logits, "pi.head");
}

int sample_categorical(std::span<const double> probs, Rng& rng) {
    const double x = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (x < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace

PolicyTrace policy_trace(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs,
                         std::span<const int> tokens) {
    PolicyTrace tr;
    const Tensor& wt = p.at("pi.trunk.w");
    tr.h.resize(wt.rows);
    affine(wt, p.at("pi.trunk.b"), obs, tr.h, "pi.trunk");
    for (double& v : tr.h) v = std::tanh(v);
    const Tensor& ws = p.at("pi.slots.w");
    tr.slots.resize(ws.rows);
    affine(ws, p.at("pi.slots.b"), tr.h, tr.slots, "pi.slots");
    for (double& v : tr.slots) v = std::tanh(v);

    const std::size_t D = sz(cfg.slot_width);
    const std::size_t K = tokens.size();
    if (K > sz(cfg.chunk_len)) throw DimensionError("policy_trace: chunk longer than configured chunk_len");
    tr.tokens.assign(tokens.begin(), tokens.end());
    tr.u.resize(K);
    tr.logits.resize(K);
    tr.logp.resize(K);
    int prev = cfg.n_actions;
    for (std::size_t k = 0; k < K; ++k) {
        decode_token(p, std::span<const double>(tr.slots).subspan(k * D, D), prev, tr.u[k], tr.logits[k]);
        tr.logp[k] = log_softmax(tr.logits[k]);
        prev = tokens[k];
    }
    return tr;
}

void policy_backward(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs, const PolicyTrace& tr,
                     const std::vector<Vec>& d_logits, ParamSet& grads) {
    const std::size_t D = sz(cfg.slot_width);
    const Tensor& hw = p.at("pi.head.w");
    Tensor& g_hw = grads.at("pi.head.w");
    Tensor& g_hb = grads.at("pi.head.b");
    Tensor& g_emb = grads.at("pi.embed");
    Vec d_slots(tr.slots.size(), 0.0);
    Vec du(D);
    int prev = cfg.n_actions;
    for (std::size_t k = 0; k < tr.tokens.size(); ++k) {
        affine_backward(hw, tr.u[k], d_logits[k], g_hw, g_hb, du);
        auto ge = g_emb.row(static_cast<std::size_t>(prev));
        for (std::size_t i = 0; i < D; ++i) {
            const double d = du[i] * (1.0 - tr.u[k][i] * tr.u[k][i]);
            ge[i] += d;
            d_slots[k * D + i] += d;
        }
        prev = tr.tokens[k];
    }
    for (std::size_t i = 0; i < d_slots.size(); ++i) d_slots[i] *= 1.0 - tr.slots[i] * tr.slots[i];
    Vec dh(tr.h.size());
    affine_backward(p.at("pi.slots.w"), tr.h, d_slots, grads.at("pi.slots.w"), grads.at("pi.slots.b"), dh);
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= 1.0 - tr.h[i] * tr.h[i];
    affine_backward(p.at("pi.trunk.w"), obs, dh, grads.at("pi.trunk.w"), grads.at("pi.trunk.b"), {});
}

PolicyAct policy_act(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs, int step, Rng* rng) {
    PolicyAct out;
    const Vec slots = policy_slots(p, cfg, obs);
    const std::size_t D = sz(cfg.slot_width);
    const std::size_t K = sz(cfg.chunk_len);
    out.chunk.tokens.reserve(K);
    out.logits.resize(K);
    Vec u;
    int prev = cfg.n_actions;
    for (std::size_t k = 0; k < K; ++k) {
        decode_token(p, std::span<const double>(slots).subspan(k * D, D), prev, u, out.logits[k]);
        int tok = 0;
        if (rng != nullptr) {
            tok = sample_categorical(softmax(out.logits[k]), *rng);
        } else {
            tok = static_cast<int>(std::max_element(out.logits[k].begin(), out.logits[k].end()) - out.logits[k].begin());
        }
        out.chunk.tokens.push_back(tok);
        prev = tok;
    }
    out.value = value_head_trace(p, slots, K, step).value;
    return out;
}

ValueTrace value_head_trace(const ParamSet& p, std::span<const double> hidden, std::size_t n, int step) {
    if (n == 0) throw DimensionError("value head needs at least one hidden state");
    const Tensor& w = p.at("v.attn.w");
    const std::size_t D = w.cols;
    if (hidden.size() != n * D) throw DimensionError("value head: hidden width does not match attention vector");
    const Tensor& table = p.at("v.step");
    if (step < 0 || static_cast<std::size_t>(step) >= table.rows) {
        throw DomainError("value head: step " + std::to_string(step) + " outside embedding table of " +
                          std::to_string(table.rows) + " rows");
    }
    ValueTrace tr;
    tr.step = step;
    tr.scores.resize(n);
    const double b = p.at("v.attn.b").data[0];
    for (std::size_t i = 0; i < n; ++i) tr.scores[i] = dot(w.data, hidden.subspan(i * D, D)) + b;
    tr.alpha = softmax(tr.scores);
    tr.pooled.assign(D, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < D; ++j) tr.pooled[j] += tr.alpha[i] * hidden[i * D + j];
    }
    tr.input = tr.pooled;
    auto e = table.row(static_cast<std::size_t>(step));
    for (std::size_t j = 0; j < D; ++j) tr.input[j] += e[j];
    tr.mlp = mlp_forward(p, "v.mlp.", tr.input);
    tr.value = tr.mlp.output[0];
    return tr;
}

void value_head_backward(const ParamSet& p, std::span<const double> hidden, std::size_t n, const ValueTrace& tr,
                         double d_value, ParamSet& grads) {
    const double dv[1] = {d_value};
    const Vec d_in = mlp_backward(p, "v.mlp.", tr.input, tr.mlp, dv, grads);
    const std::size_t D = d_in.size();
    auto ge = grads.at("v.step").row(static_cast<std::size_t>(tr.step));
    for (std::size_t j = 0; j < D; ++j) ge[j] += d_in[j];
    Vec d_alpha(n);
    for (std::size_t i = 0; i < n; ++i) d_alpha[i] = dot(d_in, hidden.subspan(i * D, D));
    double mix = 0.0;
    for (std::size_t i = 0; i < n; ++i) mix += tr.alpha[i] * d_alpha[i];
    Tensor& gw = grads.at("v.attn.w");
    double& gb = grads.at("v.attn.b").data[0];
    for (std::size_t i = 0; i < n; ++i) {
        const double de = tr.alpha[i] * (d_alpha[i] - mix);
        gb += de;
        for (std::size_t j = 0; j < D; ++j) gw.data[j] += de * hidden[i * D + j];
    }
}

double value_head_forward(const ParamSet& p, const std::vector<Vec>& hidden, int step) {
    if (hidden.empty()) throw DimensionError("value head needs at least one hidden state");
    Vec flat;
    for (const Vec& h : hidden) flat.insert(flat.end(), h.begin(), h.end());
    return value_head_trace(p, flat, hidden.size(), step).value;
}

double critic_value(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs, int step) {
    const Vec slots = policy_slots(p, cfg, obs);
    return value_head_trace(p, slots, sz(cfg.chunk_len), step).value;
}

ObsTrace obs_model_trace(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs,
                         const ActionChunk& chunk) {
    if (obs.size() != sz(cfg.obs_dim)) throw DimensionError("observation model: observation width mismatch");
    const Tensor& w0 = p.at("wm.obs.l0.w");
    const Tensor& b0 = p.at("wm.obs.l0.b");
    ObsTrace tr;
    Vec x(obs.begin(), obs.end());
    Vec dx(x.size());
    for (int token : chunk.tokens) {
        if (token < 0 || token >= cfg.n_actions) throw DomainError("observation model: token outside vocabulary");
        Vec h(w0.rows);
        affine(w0, b0, x, h, "wm.obs.l0.w");
        for (double& v : h) v = std::tanh(v);
        const std::string head = obs_head(token);
        affine(p.at(head + ".w"), p.at(head + ".b"), h, dx, head);
        tr.tokens.push_back(token);
        tr.inputs.push_back(x);
        tr.hidden.push_back(std::move(h));
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += dx[i];
    }
    tr.output = std::move(x);
    return tr;
}

void obs_model_backward(const ParamSet& p, const ObsTrace& tr, std::span<const double> d_output, ParamSet& grads) {
    const Tensor& w0 = p.at("wm.obs.l0.w");
    Vec d(d_output.begin(), d_output.end());
    Vec dh(w0.rows), dx(w0.cols);
    for (std::size_t k = tr.steps(); k-- > 0;) {
        const std::string head = obs_head(tr.tokens[k]);
        affine_backward(p.at(head + ".w"), tr.hidden[k], d, grads.at(head + ".w"), grads.at(head + ".b"), dh);
        for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= 1.0 - tr.hidden[k][i] * tr.hidden[k][i];
        affine_backward(w0, tr.inputs[k], dh, grads.at("wm.obs.l0.w"), grads.at("wm.obs.l0.b"), dx);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dx[i];
    }
}

void snap_observation(Vec& obs, std::size_t channels) {
    if (channels == 0 || obs.size() % channels != 0) throw DimensionError("snap_observation: width not divisible by channels");
    const std::size_t cells = obs.size() / channels;
    for (std::size_t ch = 0; ch < channels; ++ch) {
        auto first = obs.begin() + static_cast<std::ptrdiff_t>(ch * cells);
        auto last = first + static_cast<std::ptrdiff_t>(cells);
        auto peak = std::max_element(first, last);
        const double v = *peak < 0.75 ? 0.5 : 1.0;
        std::fill(first, last, 0.0);
        *peak = v;
    }
}

Vec predict_next_obs(const ParamSet& p, const ModelConfig& cfg, std::span<const double> obs, const ActionChunk& chunk) {
    Vec out = obs_model_trace(p, cfg, obs, chunk).output;
    const bool finite = std::all_of(out.begin(), out.end(), [](double v) { return std::isfinite(v); });
    if (cfg.snap_channels > 0 && finite) snap_observation(out, sz(cfg.snap_channels));
    return out;
}

double predict_success(const ParamSet& p, std::span<const double> obs) {
    return sigmoid(mlp_forward(p, "wm.rew.", obs).output[0]);
}

}  // namespace arl
