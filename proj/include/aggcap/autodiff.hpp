#pragma once

#include "aggcap/aggregators.hpp"
#include "aggcap/matrix.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aggcap::nn {

/// Trainable tensor living outside any tape. Gradients accumulate across
/// backward passes until zero_grad().
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}
    void zero_grad() { grad = Matrix(value.rows, value.cols); }
};

/// Handle to a node recorded on a Tape.
struct Var {
    std::size_t id = 0;
};

class Tape;
using BackwardFn = std::function<void(Tape& tape, const Matrix& grad_out)>;

/// Records one forward pass in topological order; backward() walks it in
/// exact reverse. Not thread-safe: one tape per thread.
class Tape {
public:
    Var constant(Matrix value);
    /// Differentiable leaf owned by the tape.
    Var leaf(Matrix value);
    /// Leaf bound to a parameter, read in place; backward() adds into
    /// parameter.grad. The parameter must not change while the tape is live.
    Var parameter(Parameter& p);
    /// Non-differentiable view of a parameter's value (no copy).
    Var constant_view(const Parameter& p);

    const Matrix& value(Var v) const {
        const auto& n = nodes_[v.id];
        return n.param ? n.param->value : n.value;
    }
    /// Gradient of the last backward root w.r.t. v; zeros if v was unreached.
    Matrix grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }
    std::string_view tag(Var v) const { return nodes_[v.id].tag; }

    /// root must be 1 x 1. Leaf gradients accumulate across repeated calls.
    void backward(Var root);

    /// Adds g into the gradient slot of v (used by backward closures).
    void accumulate(Var v, const Matrix& g);
    /// Mutable gradient slot of v, allocated as zeros on first use.
    Matrix& grad_slot(Var v);

    /// Records an op output. Throws if the value holds NaN or infinity.
    Var record(Matrix value, std::vector<Var> parents, const char* tag, BackwardFn backward);

    /// Hash of the piecewise regimes (ReLU signs, kernel segments) visited by
    /// the forward pass; finite-difference checks skip points whose
    /// perturbations change it.
    std::uint64_t regime() const { return regime_; }
    void mix_regime(std::uint64_t value);
    bool tracks_regime() const { return track_regime_; }
    void set_track_regime(bool on) { track_regime_ = on; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::vector<Var> parents;
        const char* tag = "";
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    std::uint64_t regime_ = 0xcbf29ce484222325ULL;
    bool track_regime_ = false;
};

/// Differentiable operations. All record on the tape of their inputs.
Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
/// a (r x c) plus a 1 x c row broadcast to every row.
Var add_row(Tape& t, Var a, Var row);
/// x (r x in) times weight^T (weight is out x in) plus bias (1 x out).
Var linear(Tape& t, Var x, Var weight, Var bias);
Var scale(Tape& t, Var a, double s);
Var tanh(Tape& t, Var a);
/// Subgradient 0 at the kink.
Var relu(Tape& t, Var a);
/// out[k] = a[rows[k]].
Var row_select(Tape& t, Var a, std::vector<std::size_t> rows);
/// out (n x c) with out[rows[k]] += a[k]; repeated indices add.
Var scatter_add_rows(Tape& t, Var a, std::vector<std::size_t> rows, std::size_t n);
/// Element-wise kappa(u) for u >= 0 (uniform kernel has zero gradient).
Var kernel_eval(Tape& t, Var u, KernelKind kind, double width);
/// axis 0 sums over rows (-> 1 x c), axis 1 over columns (-> r x 1).
Var reduce_sum(Tape& t, Var a, int axis);
Var sum_all(Tape& t, Var a);
/// Column statistics over rows: row 0 holds means, row 1 population variances.
Var mean_var(Tape& t, Var a);
/// Column whitening x_hat = x/sigma - mean(x/sigma) with sigma = max(sd, eps),
/// with gradients flowing through the statistics.
Var whiten_columns(Tape& t, Var a, double eps);
/// a is (blocks * rows_per_block) x c; output is blocks x (c * b) where entry
/// (k, c*b + l) = sum over rows r of block k of kappa(|a[r][c] - p_l|).
Var block_histogram(Tape& t, Var a, std::size_t blocks, const HistogramSpec& spec);
/// Per-block column sums: blocks x c.
Var block_sum(Tape& t, Var a, std::size_t blocks);
/// logits is 1 x C; returns -log softmax(logits)[label] as 1 x 1.
Var softmax_cross_entropy(Tape& t, Var logits, std::size_t label);

/// Builds a scalar loss from the given leaves on a fresh tape.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> leaves)>;

struct GradCheckReport {
    std::vector<double> max_rel_error; // per leaf
    std::size_t compared = 0;
    std::size_t skipped = 0; // coordinates whose perturbation crossed a kink
    double worst() const;
    bool passed(double tol) const { return worst() <= tol; }
};

struct GradCheckOptions {
    double h = 1e-4;
    /// 2: (f(x+h) - f(x-h)) / 2h. 4: the fourth-order five-point central stencil.
    int stencil = 4;
    /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    double floor = 1e-5;
    /// Compare at most this many randomly chosen coordinates per leaf (0 = all).
    std::size_t max_coords_per_leaf = 0;
    std::uint64_t seed = 1;
};

/// Central differences against backward(). Coordinates whose +/-h
/// perturbation changes the tape's piecewise regime are skipped.
GradCheckReport grad_check(const LossBuilder& f, const std::vector<Matrix>& leaves,
                           const GradCheckOptions& options = {});

struct AdamState {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
void adam_step(std::span<Parameter* const> params, AdamState& state);

/// Length-prefixed binary checkpoint plus a "<path>.manifest" text listing.
void save_checkpoint(const std::string& path, std::span<const Parameter* const> params);
std::vector<Parameter> load_checkpoint(const std::string& path);
/// Copies values into params by name; throws on missing names or shapes.
void restore_checkpoint(std::span<Parameter* const> params, const std::vector<Parameter>& loaded);

} // namespace aggcap::nn
