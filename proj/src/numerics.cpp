#include "arl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace arl {

namespace {

std::string shape_str(std::size_t r, std::size_t c) {
    return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

std::string layer_name(std::string_view prefix, std::size_t l, std::string_view suffix) {
    std::string out(prefix);
    out += "l";
    out += std::to_string(l);
    out += suffix;
    return out;
}

}  // namespace

Tensor& ParamSet::add(std::string name, std::size_t rows, std::size_t cols, double fill) {
    if (index_.contains(name)) {
        throw Error("duplicate parameter '" + name + "'");
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), Tensor(rows, cols, fill));
    return entries_.back().second;
}

Tensor& ParamSet::at(std::string_view name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw Error("unknown parameter '" + std::string(name) + "'");
    }
    return entries_[it->second].second;
}

const Tensor& ParamSet::at(std::string_view name) const {
    return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamSet::num_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (const auto& [n, t] : entries_) out.add(n, t.rows, t.cols);
    return out;
}

bool ParamSet::all_finite() const {
    for (const auto& e : entries_) {
        for (double x : e.second.data) {
            if (!std::isfinite(x)) return false;
        }
    }
    return true;
}

bool ParamSet::same_shape(const ParamSet& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].first != o.entries_[i].first) return false;
        if (!entries_[i].second.same_shape(o.entries_[i].second)) return false;
    }
    return true;
}

void ParamSet::fill(double value) {
    for (auto& e : entries_) std::fill(e.second.data.begin(), e.second.data.end(), value);
}

double& ParamSet::flat(std::size_t i) {
    for (auto& e : entries_) {
        if (i < e.second.size()) return e.second.data[i];
        i -= e.second.size();
    }
    throw DimensionError("flat index out of range");
}

double ParamSet::flat(std::size_t i) const { return const_cast<ParamSet*>(this)->flat(i); }

void ParamSet::merge_from(const ParamSet& other) {
    for (std::size_t i = 0; i < other.size(); ++i) {
        if (!contains(other.name(i))) continue;
        Tensor& dst = at(other.name(i));
        if (!dst.same_shape(other.tensor(i))) {
            throw DimensionError("merge shape mismatch for '" + other.name(i) + "'");
        }
        dst = other.tensor(i);
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void affine(const Tensor& w, const Tensor& b, std::span<const double> x, std::span<double> y,
            std::string_view name) {
    if (w.cols != x.size() || w.rows != y.size() || b.size() != w.rows) {
        throw DimensionError("layer '" + std::string(name) + "': weight " + shape_str(w.rows, w.cols) +
                             ", bias " + shape_str(b.rows, b.cols) + ", input " + std::to_string(x.size()));
    }
    // Zero inputs contribute exact zeros, so skipping them leaves every sum
    // bitwise unchanged; observation grids are mostly zero.
    thread_local std::vector<std::size_t> nz;
    nz.clear();
    for (std::size_t c = 0; c < x.size(); ++c) {
        if (x[c] != 0.0) nz.push_back(c);
    }
    if (nz.size() * 4 < x.size()) {
        for (std::size_t r = 0; r < w.rows; ++r) {
            const double* wr = w.data.data() + r * w.cols;
            double s = 0.0;
            for (std::size_t c : nz) s += wr[c] * x[c];
            y[r] = b.data[r] + s;
        }
        return;
    }
    for (std::size_t r = 0; r < w.rows; ++r) {
        y[r] = b.data[r] + dot(w.row(r), x);
    }
}

void affine_backward(const Tensor& w, std::span<const double> x, std::span<const double> dy, Tensor& dw,
                     Tensor& db, std::span<double> dx) {
    thread_local std::vector<std::size_t> nz;
    nz.clear();
    for (std::size_t c = 0; c < x.size(); ++c) {
        if (x[c] != 0.0) nz.push_back(c);
    }
    const bool sparse = nz.size() * 4 < x.size();
    for (std::size_t r = 0; r < w.rows; ++r) {
        const double g = dy[r];
        db.data[r] += g;
        if (g == 0.0) continue;
        double* dwr = dw.data.data() + r * w.cols;
        if (sparse) {
            for (std::size_t c : nz) dwr[c] += g * x[c];
        } else {
            for (std::size_t c = 0; c < w.cols; ++c) dwr[c] += g * x[c];
        }
    }
    if (!dx.empty()) {
        std::fill(dx.begin(), dx.end(), 0.0);
        for (std::size_t r = 0; r < w.rows; ++r) {
            const double g = dy[r];
            if (g == 0.0) continue;
            const double* wr = w.data.data() + r * w.cols;
            for (std::size_t c = 0; c < w.cols; ++c) dx[c] += wr[c] * g;
        }
    }
}

void init_mlp(ParamSet& params, const MlpLayout& layout, Rng& rng, double out_scale) {
    if (layout.widths.size() < 2) throw DimensionError("mlp '" + layout.prefix + "' needs at least 2 widths");
    std::normal_distribution<double> nd(0.0, 1.0);
    const std::size_t layers = layout.widths.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = layout.widths[l];
        const std::size_t out = layout.widths[l + 1];
        Tensor& w = params.add(layer_name(layout.prefix, l, ".w"), out, in);
        params.add(layer_name(layout.prefix, l, ".b"), out, 1);
        double scale = 1.0 / std::sqrt(static_cast<double>(in));
        if (l + 1 == layers) scale *= out_scale;
        for (double& v : w.data) v = nd(rng) * scale;
    }
}

std::size_t mlp_depth(const ParamSet& params, std::string_view prefix) {
    std::size_t l = 0;
    while (params.contains(layer_name(prefix, l, ".w"))) ++l;
    return l;
}

MlpResult mlp_forward(const ParamSet& params, std::string_view prefix, std::span<const double> input) {
    const std::size_t depth = mlp_depth(params, prefix);
    if (depth == 0) throw DimensionError("no layers under prefix '" + std::string(prefix) + "'");
    MlpResult res;
    res.hidden.reserve(depth - 1);
    std::span<const double> x = input;
    Vec buf;
    for (std::size_t l = 0; l < depth; ++l) {
        const std::string wn = layer_name(prefix, l, ".w");
        const Tensor& w = params.at(wn);
        const Tensor& b = params.at(layer_name(prefix, l, ".b"));
        Vec y(w.rows);
        affine(w, b, x, y, wn);
        if (l + 1 < depth) {
            for (double& v : y) v = std::tanh(v);
            res.hidden.push_back(std::move(y));
            x = res.hidden.back();
        } else {
            res.output = std::move(y);
        }
    }
    return res;
}

Vec mlp_backward(const ParamSet& params, std::string_view prefix, std::span<const double> input,
                 const MlpResult& fwd, std::span<const double> d_output, ParamSet& grads) {
    const std::size_t depth = mlp_depth(params, prefix);
    Vec dy(d_output.begin(), d_output.end());
    for (std::size_t li = depth; li-- > 0;) {
        const std::string wn = layer_name(prefix, li, ".w");
        const std::string bn = layer_name(prefix, li, ".b");
        const Tensor& w = params.at(wn);
        std::span<const double> x = li == 0 ? input : std::span<const double>(fwd.hidden[li - 1]);
        Vec dx(w.cols);
        affine_backward(w, x, dy, grads.at(wn), grads.at(bn), dx);
        if (li > 0) {
            const Vec& h = fwd.hidden[li - 1];
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - h[i] * h[i];
        }
        dy = std::move(dx);
    }
    return dy;
}

Vec softmax(std::span<const double> logits) {
    if (logits.empty()) throw DomainError("softmax of empty vector");
    const double m = *std::max_element(logits.begin(), logits.end());
    Vec out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

Vec log_softmax(std::span<const double> logits) {
    if (logits.empty()) throw DomainError("log_softmax of empty vector");
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    const double lz = m + std::log(z);
    Vec out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
    return out;
}

Vec log_softmax_backward(std::span<const double> log_probs, std::span<const double> g) {
    double gs = 0.0;
    for (double v : g) gs += v;
    Vec dz(log_probs.size());
    for (std::size_t i = 0; i < log_probs.size(); ++i) dz[i] = g[i] - std::exp(log_probs[i]) * gs;
    return dz;
}

AdamState AdamState::for_params(const ParamSet& params, AdamConfig cfg) {
    AdamState s;
    s.config = cfg;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    return s;
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state) {
    if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v)) {
        throw DimensionError("adam_step: gradient/moment shapes do not match parameters");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        for (double g : grads.tensor(i).data) {
            if (!std::isfinite(g)) throw NonFiniteError("adam_step: non-finite gradient in '" + grads.name(i) + "'");
        }
    }
    const AdamConfig& c = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.tensor(i).data;
        const auto& g = grads.tensor(i).data;
        auto& m = state.m.tensor(i).data;
        auto& v = state.v.tensor(i).data;
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
    params.set_version(params.version() + 1);
}

double clip_grad_norm(ParamSet& grads, double max_norm) {
    double sq = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        for (double g : grads.tensor(i).data) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (std::size_t i = 0; i < grads.size(); ++i) {
            for (double& g : grads.tensor(i).data) g *= s;
        }
    }
    return norm;
}

double finite_diff_check(const LossFn& loss_fn, const ParamSet& params, const ParamSet& analytic, double step) {
    if (!(step > 0.0)) throw DomainError("finite_diff_check: step must be positive");
    if (!params.same_shape(analytic)) throw DimensionError("finite_diff_check: gradient shape mismatch");
    const double base_a = loss_fn(params);
    const double base_b = loss_fn(params);
    if (base_a != base_b) throw DomainError("finite_diff_check: loss function is not deterministic");

    ParamSet probe = params;
    double worst = 0.0;
    const std::size_t n = params.num_scalars();
    for (std::size_t i = 0; i < n; ++i) {
        const double orig = probe.flat(i);
        probe.flat(i) = orig + step;
        const double up = loss_fn(probe);
        probe.flat(i) = orig - step;
        const double down = loss_fn(probe);
        probe.flat(i) = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic.flat(i);
        worst = std::max(worst, std::abs(numeric - a) / (std::abs(a) + 1e-8));
    }
    return worst;
}

}  // namespace arl
