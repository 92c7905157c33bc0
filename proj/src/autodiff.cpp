#include "aggcap/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace aggcap::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

MapMat map(Matrix& m) { return MapMat(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)); }
ConstMapMat map(const Matrix& m) {
    return ConstMapMat(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}

std::string shape(const Matrix& m) { return std::to_string(m.rows) + "x" + std::to_string(m.cols); }

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// 1 - 2/(e^{2|x|} + 1) is within a few ulps of tanh for |x| >= 1/32 and
// about 3x cheaper than libm's tanh.
double fast_tanh(double x) {
    const double a = std::abs(x);
    if (a < 0.03125) return std::tanh(x);
    const double y = 1.0 - 2.0 / (std::exp(2.0 * a) + 1.0);
    return std::copysign(y, x);
}

} // namespace

// --- tape ---------------------------------------------------------------------

Var Tape::constant(Matrix value) { return record(std::move(value), {}, "constant", nullptr); }

Var Tape::leaf(Matrix value) {
    Var v = record(std::move(value), {}, "leaf", nullptr);
    nodes_[v.id].requires_grad = true;
    return v;
}

Var Tape::parameter(Parameter& p) {
    Var v = record(Matrix(), {}, "parameter", nullptr);
    for (double x : p.value.data)
        if (!std::isfinite(x)) throw std::runtime_error("non-finite value in parameter " + p.name);
    nodes_[v.id].requires_grad = true;
    nodes_[v.id].param = &p;
    return v;
}

Var Tape::constant_view(const Parameter& p) {
    Var v = record(Matrix(), {}, "constant", nullptr);
    nodes_[v.id].param = const_cast<Parameter*>(&p);
    return v;
}

Matrix Tape::grad(Var v) const {
    const auto& n = nodes_[v.id];
    const Matrix& val = value(v);
    if (!n.grad.same_shape(val) || n.grad.data.size() != val.data.size()) return Matrix(val.rows, val.cols);
    return n.grad;
}

Matrix& Tape::grad_slot(Var v) {
    auto& n = nodes_[v.id];
    const Matrix& val = value(v);
    if (n.grad.data.size() != val.data.size() || !n.grad.same_shape(val)) n.grad = Matrix(val.rows, val.cols);
    return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
    if (!nodes_[v.id].requires_grad) return;
    auto& slot = grad_slot(v);
    if (!slot.same_shape(g)) shape_error("accumulate", slot, g);
    for (std::size_t i = 0; i < g.data.size(); ++i) slot.data[i] += g.data[i];
}

void Tape::mix_regime(std::uint64_t value) { regime_ = splitmix(regime_ ^ value); }

Var Tape::record(Matrix value, std::vector<Var> parents, const char* tag, BackwardFn backward) {
    // All exponent bits set means NaN or infinity.
    constexpr std::uint64_t exp_mask = 0x7ff0000000000000ULL;
    bool bad = false;
    for (double x : value.data) bad |= (std::bit_cast<std::uint64_t>(x) & exp_mask) == exp_mask;
    if (bad) throw std::runtime_error(std::string("non-finite value produced by op '") + tag + "'");
    Node node;
    node.value = std::move(value);
    node.tag = tag;
    for (Var p : parents) node.requires_grad = node.requires_grad || nodes_[p.id].requires_grad;
    node.parents = std::move(parents);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

void Tape::backward(Var root) {
    auto& r = nodes_.at(root.id);
    if (value(root).rows != 1 || value(root).cols != 1)
        throw std::invalid_argument("backward: root must be a scalar, got " + shape(value(root)));

    // Interior and parameter-node gradients are per-pass; plain leaves keep
    // accumulating. Parameters accumulate in Parameter::grad instead.
    for (auto& n : nodes_) {
        if (!n.parents.empty() || n.param) n.grad = Matrix();
    }
    if (!r.requires_grad) return;
    grad_slot(root).data[0] += 1.0;

    for (std::size_t i = root.id + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (!n.requires_grad || !n.backward || n.grad.data.empty()) continue;
        // Closures only touch parent slots, and nodes_ does not grow here.
        n.backward(*this, n.grad);
    }

    for (auto& n : nodes_) {
        if (!n.param || n.grad.data.empty()) continue;
        if (!n.param->grad.same_shape(n.param->value)) n.param->grad = Matrix(n.param->value.rows, n.param->value.cols);
        for (std::size_t k = 0; k < n.grad.data.size(); ++k) n.param->grad.data[k] += n.grad.data[k];
    }
}

// --- ops ------------------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    if (A.cols != B.rows) shape_error("matmul", A, B);
    Matrix out(A.rows, B.cols);
    map(out).noalias() = map(A) * map(B);
    return t.record(std::move(out), {a, b}, "matmul", [a, b](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(a)) {
            auto& ga = tp.grad_slot(a);
            map(ga).noalias() += map(g) * map(tp.value(b)).transpose();
        }
        if (tp.requires_grad(b)) {
            auto& gb = tp.grad_slot(b);
            map(gb).noalias() += map(tp.value(a)).transpose() * map(g);
        }
    });
}

Var add(Tape& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    if (!A.same_shape(B)) shape_error("add", A, B);
    Matrix out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
    return t.record(std::move(out), {a, b}, "add", [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

Var sub(Tape& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    if (!A.same_shape(B)) shape_error("sub", A, B);
    Matrix out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= B.data[i];
    return t.record(std::move(out), {a, b}, "sub", [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        if (tp.requires_grad(b)) {
            auto& gb = tp.grad_slot(b);
            for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
        }
    });
}

Var add_row(Tape& t, Var a, Var row) {
    const auto& A = t.value(a);
    const auto& R = t.value(row);
    if (R.rows != 1 || R.cols != A.cols) shape_error("add_row", A, R);
    Matrix out = A;
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += R.data[c];
    return t.record(std::move(out), {a, row}, "add_row", [a, row](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        if (tp.requires_grad(row)) {
            auto& gr = tp.grad_slot(row);
            for (std::size_t r = 0; r < g.rows; ++r)
                for (std::size_t c = 0; c < g.cols; ++c) gr.data[c] += g(r, c);
        }
    });
}

Var linear(Tape& t, Var x, Var weight, Var bias) {
    const auto& X = t.value(x);
    const auto& W = t.value(weight);
    const auto& B = t.value(bias);
    if (X.cols != W.cols) shape_error("linear", X, W);
    if (B.rows != 1 || B.cols != W.rows) shape_error("linear bias", W, B);
    Matrix out(X.rows, W.rows);
    map(out).noalias() = map(X) * map(W).transpose();
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += B.data[c];
    return t.record(std::move(out), {x, weight, bias}, "linear", [x, weight, bias](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(x)) map(tp.grad_slot(x)).noalias() += map(g) * map(tp.value(weight));
        if (tp.requires_grad(weight)) map(tp.grad_slot(weight)).noalias() += map(g).transpose() * map(tp.value(x));
        if (tp.requires_grad(bias)) {
            auto& gb = tp.grad_slot(bias);
            for (std::size_t r = 0; r < g.rows; ++r)
                for (std::size_t c = 0; c < g.cols; ++c) gb.data[c] += g(r, c);
        }
    });
}

Var scale(Tape& t, Var a, double s) {
    Matrix out = t.value(a);
    for (double& x : out.data) x *= s;
    return t.record(std::move(out), {a}, "scale", [a, s](Tape& tp, const Matrix& g) {
        auto& ga = tp.grad_slot(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += s * g.data[i];
    });
}

Var tanh(Tape& t, Var a) {
    Matrix out = t.value(a);
    for (double& x : out.data) x = fast_tanh(x);
    const Var v{t.size()};
    return t.record(std::move(out), {a}, "tanh", [a, v](Tape& tp, const Matrix& g) {
        const auto& y = tp.value(v);
        auto& ga = tp.grad_slot(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    });
}

Var relu(Tape& t, Var a) {
    Matrix out = t.value(a);
    if (t.tracks_regime()) {
        std::uint64_t h = 0;
        for (std::size_t i = 0; i < out.data.size(); ++i) h = h * 3 + (out.data[i] > 0.0 ? 1 : out.data[i] < 0.0 ? 2 : 0);
        t.mix_regime(h);
    }
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return t.record(std::move(out), {a}, "relu", [a](Tape& tp, const Matrix& g) {
        const auto& x = tp.value(a);
        auto& ga = tp.grad_slot(a);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            if (x.data[i] > 0.0) ga.data[i] += g.data[i];
    });
}

Var row_select(Tape& t, Var a, std::vector<std::size_t> rows) {
    const auto& A = t.value(a);
    Matrix out(rows.size(), A.cols);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= A.rows) throw std::out_of_range("row_select: row index out of range");
        std::copy(A.row(rows[k]).begin(), A.row(rows[k]).end(), out.row(k).begin());
    }
    return t.record(std::move(out), {a}, "row_select", [a, rows = std::move(rows)](Tape& tp, const Matrix& g) {
        auto& ga = tp.grad_slot(a);
        for (std::size_t k = 0; k < rows.size(); ++k) {
            auto dst = ga.row(rows[k]);
            auto src = g.row(k);
            for (std::size_t c = 0; c < g.cols; ++c) dst[c] += src[c];
        }
    });
}

Var scatter_add_rows(Tape& t, Var a, std::vector<std::size_t> rows, std::size_t n) {
    const auto& A = t.value(a);
    if (rows.size() != A.rows) throw std::invalid_argument("scatter_add_rows: one target row per input row required");
    Matrix out(n, A.cols);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= n) throw std::out_of_range("scatter_add_rows: row index out of range");
        auto dst = out.row(rows[k]);
        auto src = A.row(k);
        for (std::size_t c = 0; c < A.cols; ++c) dst[c] += src[c];
    }
    return t.record(std::move(out), {a}, "scatter_add_rows", [a, rows = std::move(rows)](Tape& tp, const Matrix& g) {
        auto& ga = tp.grad_slot(a);
        for (std::size_t k = 0; k < rows.size(); ++k) {
            auto dst = ga.row(k);
            auto src = g.row(rows[k]);
            for (std::size_t c = 0; c < g.cols; ++c) dst[c] += src[c];
        }
    });
}

Var kernel_eval(Tape& t, Var u, KernelKind kind, double width) {
    Matrix out = t.value(u);
    if (t.tracks_regime()) {
        std::uint64_t h = 0;
        for (double x : out.data) h = h * 3 + (x < width ? (x > 0.0 ? 1 : 2) : 0);
        t.mix_regime(h);
    }
    for (double& x : out.data) {
        if (x < 0.0) throw std::invalid_argument("kernel_eval: argument must be nonnegative");
        x = kernel_value(kind, x, width);
    }
    return t.record(std::move(out), {u}, "kernel_eval", [u, kind, width](Tape& tp, const Matrix& g) {
        const auto& x = tp.value(u);
        auto& gu = tp.grad_slot(u);
        for (std::size_t i = 0; i < g.data.size(); ++i) gu.data[i] += g.data[i] * kernel_derivative(kind, x.data[i], width);
    });
}

Var reduce_sum(Tape& t, Var a, int axis) {
    const auto& A = t.value(a);
    if (axis != 0 && axis != 1) throw std::invalid_argument("reduce_sum: axis must be 0 or 1");
    Matrix out = axis == 0 ? Matrix(1, A.cols) : Matrix(A.rows, 1);
    for (std::size_t r = 0; r < A.rows; ++r)
        for (std::size_t c = 0; c < A.cols; ++c) out.data[axis == 0 ? c : r] += A(r, c);
    return t.record(std::move(out), {a}, "reduce_sum", [a, axis](Tape& tp, const Matrix& g) {
        auto& ga = tp.grad_slot(a);
        for (std::size_t r = 0; r < ga.rows; ++r)
            for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += g.data[axis == 0 ? c : r];
    });
}

Var sum_all(Tape& t, Var a) { return reduce_sum(t, reduce_sum(t, a, 0), 1); }

Var mean_var(Tape& t, Var a) {
    const auto& A = t.value(a);
    if (A.rows == 0) throw std::invalid_argument("mean_var: no rows");
    const double n = static_cast<double>(A.rows);
    Matrix out(2, A.cols);
    for (std::size_t c = 0; c < A.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < A.rows; ++r) mean += A(r, c);
        mean /= n;
        double var = 0.0;
        for (std::size_t r = 0; r < A.rows; ++r) var += (A(r, c) - mean) * (A(r, c) - mean);
        out(0, c) = mean;
        out(1, c) = var / n;
    }
    const Var v{t.size()};
    return t.record(std::move(out), {a}, "mean_var", [a, v, n](Tape& tp, const Matrix& g) {
        const auto& x = tp.value(a);
        const auto& stats = tp.value(v);
        auto& ga = tp.grad_slot(a);
        for (std::size_t r = 0; r < x.rows; ++r)
            for (std::size_t c = 0; c < x.cols; ++c)
                ga(r, c) += g(0, c) / n + g(1, c) * 2.0 * (x(r, c) - stats(0, c)) / n;
    });
}

Var whiten_columns(Tape& t, Var a, double eps) {
    const auto& A = t.value(a);
    if (A.rows == 0) throw std::invalid_argument("whiten_columns: no rows");
    const double n = static_cast<double>(A.rows);
    Matrix out(A.rows, A.cols);
    Matrix inv_sigma(1, A.cols);
    std::vector<char> floored(A.cols, 0);
    std::uint64_t regime = 0;
    for (std::size_t c = 0; c < A.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < A.rows; ++r) mean += A(r, c);
        mean /= n;
        double var = 0.0;
        for (std::size_t r = 0; r < A.rows; ++r) var += (A(r, c) - mean) * (A(r, c) - mean);
        var /= n;
        const double sd = std::sqrt(var);
        floored[c] = !(sd > eps);
        regime = regime * 3 + static_cast<std::uint64_t>(floored[c]);
        const double s = 1.0 / (floored[c] ? eps : sd);
        inv_sigma.data[c] = s;
        for (std::size_t r = 0; r < A.rows; ++r) out(r, c) = (A(r, c) - mean) * s;
    }
    if (t.tracks_regime()) t.mix_regime(regime);
    const Var v{t.size()};
    return t.record(std::move(out), {a}, "whiten_columns",
                    [a, v, n, inv_sigma = std::move(inv_sigma), floored = std::move(floored)](Tape& tp, const Matrix& g) {
                        const auto& y = tp.value(v);
                        auto& ga = tp.grad_slot(a);
                        std::vector<double> col(y.rows);
                        for (std::size_t c = 0; c < y.cols; ++c) {
                            double g_mean = 0.0, gy_mean = 0.0;
                            for (std::size_t r = 0; r < y.rows; ++r) {
                                g_mean += g(r, c);
                                gy_mean += g(r, c) * y(r, c);
                            }
                            g_mean /= n;
                            gy_mean /= n;
                            if (floored[c]) gy_mean = 0.0; // sigma is the constant eps
                            const double s = inv_sigma.data[c];
                            // The exact column gradient sums to zero; removing the
                            // rounding residue keeps 1/eps from amplifying it.
                            double residue = 0.0;
                            for (std::size_t r = 0; r < y.rows; ++r) {
                                col[r] = g(r, c) - g_mean - y(r, c) * gy_mean;
                                residue += col[r];
                            }
                            residue /= n;
                            for (std::size_t r = 0; r < y.rows; ++r) ga(r, c) += s * (col[r] - residue);
                        }
                    });
}

Var block_histogram(Tape& t, Var a, std::size_t blocks, const HistogramSpec& spec) {
    const auto& A = t.value(a);
    if (blocks == 0 || A.rows % blocks != 0)
        throw std::invalid_argument("block_histogram: rows (" + std::to_string(A.rows) + ") not divisible into " +
                                    std::to_string(blocks) + " blocks");
    const std::size_t per_block = A.rows / blocks;
    const std::size_t b = spec.bins;
    Matrix out(blocks, A.cols * b);
    std::vector<double> resp(b);
    std::uint64_t h = 0;
    for (std::size_t k = 0; k < blocks; ++k) {
        auto dst = out.row(k);
        for (std::size_t r = k * per_block; r < (k + 1) * per_block; ++r) {
            for (std::size_t c = 0; c < A.cols; ++c) {
                const double x = A(r, c);
                if (spec.kernel == KernelKind::Uniform) {
                    spec.responses(x, resp);
                    for (std::size_t l = 0; l < b; ++l) dst[c * b + l] += resp[l];
                } else if (spec.kernel == KernelKind::Triangular) {
                    const auto [lo, hi] = spec.active_bins(x);
                    for (std::size_t l = lo; l < hi; ++l) {
                        const double u = std::abs(x - spec.centers[l]);
                        if (u < spec.width) dst[c * b + l] += 1.0 - u / spec.width;
                    }
                } else {
                    const auto [lo, hi] = spec.active_bins(x);
                    for (std::size_t l = lo; l < hi; ++l)
                        dst[c * b + l] += kernel_value(spec.kernel, std::abs(x - spec.centers[l]), spec.width);
                }
                if (t.tracks_regime() && spec.kernel == KernelKind::Triangular) {
                    for (std::size_t l = 0; l < b; ++l) {
                        const double u = std::abs(x - spec.centers[l]);
                        h = h * 5 + (u >= spec.width ? 0 : x > spec.centers[l] ? 1 : x < spec.centers[l] ? 2 : 3);
                    }
                }
            }
        }
    }
    if (t.tracks_regime()) t.mix_regime(h);
    return t.record(std::move(out), {a}, "block_histogram", [a, per_block, spec](Tape& tp, const Matrix& g) {
        const auto& x = tp.value(a);
        auto& ga = tp.grad_slot(a);
        const std::size_t bins = spec.bins;
        if (spec.kernel == KernelKind::Uniform) return;
        for (std::size_t r = 0; r < x.rows; ++r) {
            const auto grow = g.row(r / per_block);
            for (std::size_t c = 0; c < x.cols; ++c) {
                const double v = x(r, c);
                double acc = 0.0;
                const auto [lo, hi] = spec.active_bins(v);
                for (std::size_t l = lo; l < hi; ++l) {
                    const double diff = v - spec.centers[l];
                    if (diff == 0.0) continue;
                    const double u = std::abs(diff);
                    if (u >= spec.width) continue;
                    acc += grow[c * bins + l] * kernel_derivative(spec.kernel, u, spec.width) * (diff > 0.0 ? 1.0 : -1.0);
                }
                ga(r, c) += acc;
            }
        }
    });
}

Var block_sum(Tape& t, Var a, std::size_t blocks) {
    const auto& A = t.value(a);
    if (blocks == 0 || A.rows % blocks != 0) throw std::invalid_argument("block_sum: rows not divisible into blocks");
    const std::size_t per_block = A.rows / blocks;
    Matrix out(blocks, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r) {
        auto dst = out.row(r / per_block);
        for (std::size_t c = 0; c < A.cols; ++c) dst[c] += A(r, c);
    }
    return t.record(std::move(out), {a}, "block_sum", [a, per_block](Tape& tp, const Matrix& g) {
        auto& ga = tp.grad_slot(a);
        for (std::size_t r = 0; r < ga.rows; ++r) {
            const auto src = g.row(r / per_block);
            for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += src[c];
        }
    });
}

Var softmax_cross_entropy(Tape& t, Var logits, std::size_t label) {
    const auto& z = t.value(logits);
    if (z.rows != 1 || z.cols == 0) throw std::invalid_argument("softmax_cross_entropy: logits must be 1 x C");
    if (label >= z.cols) throw std::out_of_range("softmax_cross_entropy: label out of range");
    const double zmax = *std::max_element(z.data.begin(), z.data.end());
    double total = 0.0;
    for (double v : z.data) total += std::exp(v - zmax);
    const double lse = zmax + std::log(total);
    Matrix out(1, 1, -(z.data[label] - lse));
    return t.record(std::move(out), {logits}, "softmax_cross_entropy", [logits, label, lse](Tape& tp, const Matrix& g) {
        const auto& zz = tp.value(logits);
        auto& gz = tp.grad_slot(logits);
        for (std::size_t c = 0; c < zz.cols; ++c)
            gz.data[c] += g.data[0] * (std::exp(zz.data[c] - lse) - (c == label ? 1.0 : 0.0));
    });
}

// --- gradient check -----------------------------------------------------------------

double GradCheckReport::worst() const {
    double w = 0.0;
    for (double e : max_rel_error) w = std::max(w, e);
    return w;
}

GradCheckReport grad_check(const LossBuilder& f, const std::vector<Matrix>& leaves, const GradCheckOptions& options) {
    auto evaluate = [&](const std::vector<Matrix>& values, std::uint64_t& regime) {
        Tape tape;
        tape.set_track_regime(true);
        std::vector<Var> vars;
        for (const auto& v : values) vars.push_back(tape.leaf(v));
        Var root = f(tape, vars);
        regime = tape.regime();
        return tape.value(root).data.at(0);
    };

    Tape tape;
    tape.set_track_regime(true);
    std::vector<Var> vars;
    for (const auto& v : leaves) vars.push_back(tape.leaf(v));
    Var root = f(tape, vars);
    const std::uint64_t base_regime = tape.regime();
    tape.backward(root);

    GradCheckReport report;
    std::mt19937_64 rng(options.seed);
    auto values = leaves;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const Matrix analytic = tape.grad(vars[li]);
        std::vector<std::size_t> coords(leaves[li].size());
        std::iota(coords.begin(), coords.end(), 0);
        if (options.max_coords_per_leaf && coords.size() > options.max_coords_per_leaf) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords_per_leaf);
        }
        double worst = 0.0;
        for (std::size_t k : coords) {
            const double orig = values[li].data[k];
            auto at = [&](double offset, bool& same) {
                std::uint64_t regime = 0;
                values[li].data[k] = orig + offset;
                const double f = evaluate(values, regime);
                same = same && regime == base_regime;
                return f;
            };
            bool same = true;
            double numeric = 0.0;
            const double h = options.h;
            if (options.stencil == 4) {
                numeric = (at(-2 * h, same) - 8.0 * at(-h, same) + 8.0 * at(h, same) - at(2 * h, same)) / (12.0 * h);
            } else {
                numeric = (at(h, same) - at(-h, same)) / (2.0 * h);
            }
            values[li].data[k] = orig;
            if (!same) {
                ++report.skipped;
                continue;
            }
            const double a = analytic.data[k];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
            worst = std::max(worst, std::abs(a - numeric) / denom);
            ++report.compared;
        }
        report.max_rel_error.push_back(worst);
    }
    return report;
}

} // namespace aggcap::nn
