#pragma once

// Small dense-network kernel: named parameter tensors, tanh MLPs with
// hand-written backward passes, softmax helpers, Adam and a central
// finite-difference gradient checker.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "arl/error.hpp"
#include "arl/rng.hpp"

namespace arl {

using Vec = std::vector<double>;

/// Row-major matrix of doubles. A column vector is a tensor with cols == 1.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    std::size_t size() const { return data.size(); }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Tensor&) const = default;
};

/// Ordered collection of named tensors plus a version counter. Gradients are
/// represented by a ParamSet of the same shape.
class ParamSet {
public:
    Tensor& add(std::string name, std::size_t rows, std::size_t cols, double fill = 0.0);

    Tensor& at(std::string_view name);
    const Tensor& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t size() const { return entries_.size(); }
    std::size_t num_scalars() const;
    const std::string& name(std::size_t i) const { return entries_[i].first; }
    Tensor& tensor(std::size_t i) { return entries_[i].second; }
    const Tensor& tensor(std::size_t i) const { return entries_[i].second; }

    std::uint64_t version() const { return version_; }
    void set_version(std::uint64_t v) { version_ = v; }

    ParamSet zeros_like() const;
    bool all_finite() const;
    bool same_shape(const ParamSet& o) const;
    void fill(double value);

    /// Flat coordinate access across all tensors in insertion order.
    double& flat(std::size_t i);
    double flat(std::size_t i) const;

    /// Copies every tensor of `other` whose name is present here.
    void merge_from(const ParamSet& other);

    bool operator==(const ParamSet& o) const { return entries_ == o.entries_ && version_ == o.version_; }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
    std::uint64_t version_ = 0;
};

// ---- dense kernels ---------------------------------------------------------

/// y = W x + b. `name` is used in the dimension error message.
void affine(const Tensor& w, const Tensor& b, std::span<const double> x, std::span<double> y,
            std::string_view name);

/// Accumulates dW += dy x^T and db += dy; writes dx = W^T dy when dx is non-empty.
void affine_backward(const Tensor& w, std::span<const double> x, std::span<const double> dy, Tensor& dw,
                     Tensor& db, std::span<double> dx);

double dot(std::span<const double> a, std::span<const double> b);

// ---- MLP -------------------------------------------------------------------

/// Layer l of an MLP under prefix P is stored as "P" "l<l>.w" (out x in) and
/// "P" "l<l>.b" (out x 1). Hidden layers use tanh; the last layer is linear.
struct MlpLayout {
    std::string prefix;
    std::vector<std::size_t> widths;  // input width first, output width last
};

void init_mlp(ParamSet& params, const MlpLayout& layout, Rng& rng, double out_scale = 1.0);
std::size_t mlp_depth(const ParamSet& params, std::string_view prefix);

struct MlpResult {
    Vec output;               // final pre-activation
    std::vector<Vec> hidden;  // tanh activations of each hidden layer
};

MlpResult mlp_forward(const ParamSet& params, std::string_view prefix, std::span<const double> input);
inline MlpResult mlp_forward(const ParamSet& params, std::span<const double> input) {
    return mlp_forward(params, "", input);
}

/// Backpropagates `d_output` through a forward pass recorded in `fwd`,
/// accumulating into `grads`. Returns the gradient with respect to the input.
Vec mlp_backward(const ParamSet& params, std::string_view prefix, std::span<const double> input,
                 const MlpResult& fwd, std::span<const double> d_output, ParamSet& grads);

// ---- probability helpers ---------------------------------------------------

Vec softmax(std::span<const double> logits);
Vec log_softmax(std::span<const double> logits);

/// Gradient of sum_i g_i * log_softmax(z)_i with respect to z.
Vec log_softmax_backward(std::span<const double> log_probs, std::span<const double> g);

inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// ---- optimizer -------------------------------------------------------------

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    ParamSet m;
    ParamSet v;
    std::uint64_t step = 0;

    static AdamState for_params(const ParamSet& params, AdamConfig cfg = {});
};

/// Applies one Adam update in place and increments the parameter version.
/// Throws NonFiniteError (leaving params and state untouched) when any
/// gradient is NaN/Inf, DimensionError when shapes disagree.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state);

/// Rescales grads so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(ParamSet& grads, double max_norm);

// ---- gradient oracle -------------------------------------------------------

using LossFn = std::function<double(const ParamSet&)>;

/// max_i |central_diff_i - analytic_i| / (|analytic_i| + 1e-8).
/// Throws DomainError for step <= 0 or when loss_fn is not deterministic.
double finite_diff_check(const LossFn& loss_fn, const ParamSet& params, const ParamSet& analytic, double step);

}  // namespace arl
