#include "aggcap/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace aggcap {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

MapMat map(Matrix& m) { return MapMat(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)); }
ConstMapMat map(const Matrix& m) {
    return ConstMapMat(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}

// Chebyshev basis [T_0 X | T_1 X | ... | T_K X], (blocks*n) x ((K+1)*q).
Matrix chebyshev_basis(const SpectralOperator& op, const Matrix& x, std::size_t order) {
    const std::size_t q = x.cols, rows = x.rows, ld = (order + 1) * q;
    Matrix basis(rows, ld);
    double* base = basis.data.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data.data() + r * q, q, base + r * ld);
    if (order >= 1) op.apply_add(base, ld, base + q, ld, rows, q, 1.0);
    for (std::size_t k = 2; k <= order; ++k) {
        double* tk = base + k * q;
        const double* tk2 = base + (k - 2) * q;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < q; ++c) tk[r * ld + c] = -tk2[r * ld + c];
        op.apply_add(base + (k - 1) * q, ld, tk, ld, rows, q, 2.0);
    }
    return basis;
}

Matrix apply_layer(const SpectralOperator& op, const Matrix& x, const ConvLayerParams& p) {
    const Matrix basis = chebyshev_basis(op, x, p.order);
    Matrix out(x.rows, p.out_channels);
    map(out).noalias() = map(basis) * map(p.theta);
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += p.bias.data[c];
    if (p.activation == Activation::Relu)
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

} // namespace

void Graph::validate() const {
    for (const auto& e : edges) {
        if (e.i >= n || e.j >= n)
            throw std::invalid_argument("edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) +
                                        ") out of range for n = " + std::to_string(n));
        if (e.i == e.j) throw std::invalid_argument("self-loop at node " + std::to_string(e.i));
        if (!(e.weight > 0.0) || !std::isfinite(e.weight)) throw std::invalid_argument("edge weights must be positive");
    }
}

Graph Graph::relabeled(std::span<const std::size_t> perm) const {
    if (perm.size() != n) throw std::invalid_argument("relabeled: permutation size mismatch");
    Graph g{n, {}, directed};
    g.edges.reserve(edges.size());
    for (const auto& e : edges) g.edges.push_back({perm[e.i], perm[e.j], e.weight});
    return g;
}

Graph random_graph(std::size_t n, double p, std::uint64_t seed, bool connect_isolated) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(p);
    Graph g{n, {}, false};
    std::vector<std::size_t> degree(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (coin(rng)) {
                g.edges.push_back({i, j, 1.0});
                ++degree[i];
                ++degree[j];
            }
    if (connect_isolated && n > 1) {
        std::uniform_int_distribution<std::size_t> pick(0, n - 2);
        for (std::size_t i = 0; i < n; ++i) {
            if (degree[i] != 0) continue;
            std::size_t j = pick(rng);
            if (j >= i) ++j;
            g.edges.push_back({std::min(i, j), std::max(i, j), 1.0});
            ++degree[i];
            ++degree[j];
        }
    }
    return g;
}

SpectralOperator normalized_laplacian(const Graph& g) {
    if (g.n == 0) throw std::invalid_argument("normalized_laplacian: empty graph");
    g.validate();
    std::map<std::pair<std::size_t, std::size_t>, double> w;
    const double share = g.directed ? 0.5 : 1.0;
    for (const auto& e : g.edges) {
        w[{e.i, e.j}] += share * e.weight;
        w[{e.j, e.i}] += share * e.weight;
    }
    std::vector<double> degree(g.n, 0.0);
    for (const auto& [key, value] : w) degree[key.first] += value;

    SpectralOperator op;
    op.n_ = g.n;
    op.row_start_.assign(g.n + 1, 0);
    for (const auto& [key, value] : w) ++op.row_start_[key.first + 1];
    for (std::size_t i = 0; i < g.n; ++i) op.row_start_[i + 1] += op.row_start_[i];
    op.col_.reserve(w.size());
    op.values_.reserve(w.size());
    // std::map iterates rows then columns in order, matching CSR layout.
    for (const auto& [key, value] : w) {
        op.col_.push_back(key.second);
        op.values_.push_back(-value / std::sqrt(degree[key.first] * degree[key.second]));
    }
    return op;
}

void SpectralOperator::apply(const Matrix& x, Matrix& out) const {
    if (out.rows != x.rows || out.cols != x.cols) out = Matrix(x.rows, x.cols);
    std::fill(out.data.begin(), out.data.end(), 0.0);
    apply_add(x, 1.0, out);
}

void SpectralOperator::apply_add(const Matrix& x, double scale, Matrix& out) const {
    if (!out.same_shape(x)) throw std::invalid_argument("SpectralOperator: output shape mismatch");
    apply_add(x.data.data(), x.cols, out.data.data(), out.cols, x.rows, x.cols, scale);
}

void SpectralOperator::apply_add(const double* x, std::size_t ldx, double* out, std::size_t ldo, std::size_t rows,
                                 std::size_t q, double scale) const {
    if (n_ == 0 || rows % n_ != 0) throw std::invalid_argument("SpectralOperator: row count is not a multiple of n");
    for (std::size_t base = 0; base < rows; base += n_) {
        for (std::size_t i = 0; i < n_; ++i) {
            double* dst = out + (base + i) * ldo;
            for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) {
                const double a = scale * values_[k];
                const double* src = x + (base + col_[k]) * ldx;
                for (std::size_t c = 0; c < q; ++c) dst[c] += a * src[c];
            }
        }
    }
}

Matrix SpectralOperator::dense_rescaled() const {
    Matrix m(n_, n_);
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) m(i, col_[k]) = values_[k];
    return m;
}

Matrix SpectralOperator::dense_laplacian() const {
    Matrix m = dense_rescaled();
    for (std::size_t i = 0; i < n_; ++i) m(i, i) += 1.0;
    return m;
}

ConvLayerParams::ConvLayerParams(std::size_t k, std::size_t in, std::size_t out)
    : order(k), in_channels(in), out_channels(out), theta((k + 1) * in, out), bias(1, out) {}

void ConvLayerParams::validate() const {
    if (theta.rows != (order + 1) * in_channels || theta.cols != out_channels)
        throw std::invalid_argument("ConvLayerParams: theta must be " + std::to_string((order + 1) * in_channels) + "x" +
                                    std::to_string(out_channels));
    if (bias.rows != 1 || bias.cols != out_channels) throw std::invalid_argument("ConvLayerParams: bias must be 1 x out");
    for (double v : theta.data)
        if (!std::isfinite(v)) throw std::invalid_argument("ConvLayerParams: non-finite coefficient");
    for (double v : bias.data)
        if (!std::isfinite(v)) throw std::invalid_argument("ConvLayerParams: non-finite bias");
}

Matrix cheb_conv(const SpectralOperator& op, const Matrix& x, const ConvLayerParams& params) {
    params.validate();
    if (x.rows != op.n()) throw std::invalid_argument("cheb_conv: input has " + std::to_string(x.rows) + " rows, graph has " + std::to_string(op.n()));
    if (x.cols != params.in_channels)
        throw std::invalid_argument("cheb_conv: input has " + std::to_string(x.cols) + " channels, layer expects " +
                                    std::to_string(params.in_channels));
    ConvLayerParams linear = params;
    linear.activation = Activation::None;
    return apply_layer(op, x, linear);
}

Matrix impulse_stack(std::size_t n, std::span<const std::size_t> nodes) {
    Matrix x(nodes.size() * n, 1);
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (nodes[k] >= n) throw std::out_of_range("node index " + std::to_string(nodes[k]) + " out of range for n = " + std::to_string(n));
        x(k * n + nodes[k], 0) = 1.0;
    }
    return x;
}

std::vector<Matrix> impulse_responses(const SpectralOperator& op, std::span<const std::size_t> nodes,
                                      std::span<const ConvLayerParams> layers) {
    if (layers.empty()) throw std::invalid_argument("impulse_responses: empty layer stack");
    if (layers.front().in_channels != 1) throw std::invalid_argument("impulse_responses: first layer must take 1 channel");
    const std::size_t n = op.n();
    Matrix x = impulse_stack(n, nodes);
    for (const auto& layer : layers) {
        layer.validate();
        if (x.cols != layer.in_channels) throw std::invalid_argument("impulse_responses: channel mismatch between layers");
        x = apply_layer(op, x, layer);
    }
    std::vector<Matrix> out;
    out.reserve(nodes.size());
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        Matrix r(n, x.cols);
        std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(k * n * x.cols),
                  x.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * n * x.cols), r.data.begin());
        out.push_back(std::move(r));
    }
    return out;
}

namespace nn {

Var cheb_conv(Tape& t, const SpectralOperator& op, std::size_t order, Var x, Var theta, Var bias) {
    const Matrix& X = t.value(x);
    const Matrix& Th = t.value(theta);
    const Matrix& B = t.value(bias);
    const std::size_t q = X.cols;
    if (Th.rows != (order + 1) * q) throw std::invalid_argument("cheb_conv: theta rows do not match (K+1)*q");
    if (B.rows != 1 || B.cols != Th.cols) throw std::invalid_argument("cheb_conv: bias must be 1 x out");

    Matrix basis = chebyshev_basis(op, X, order);
    Matrix out(X.rows, Th.cols);
    map(out).noalias() = map(basis) * map(Th);
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += B.data[c];

    // The SpectralOperator must outlive the tape.
    const SpectralOperator* opp = &op;
    return t.record(std::move(out), {x, theta, bias}, "cheb_conv",
                    [opp, order, q, x, theta, bias, basis = std::move(basis)](Tape& tp, const Matrix& g) {
                        if (tp.requires_grad(theta)) map(tp.grad_slot(theta)).noalias() += map(basis).transpose() * map(g);
                        if (tp.requires_grad(bias)) {
                            auto& gb = tp.grad_slot(bias);
                            for (std::size_t r = 0; r < g.rows; ++r)
                                for (std::size_t c = 0; c < g.cols; ++c) gb.data[c] += g(r, c);
                        }
                        if (!tp.requires_grad(x)) return;
                        const std::size_t rows = basis.rows, ld = basis.cols;
                        Matrix gbasis(rows, ld);
                        map(gbasis).noalias() = map(g) * map(tp.value(theta)).transpose();
                        // Adjoint of the recurrence, in place on the column slices; L~ is symmetric.
                        double* gb = gbasis.data.data();
                        for (std::size_t k = order; k >= 2; --k) {
                            opp->apply_add(gb + k * q, ld, gb + (k - 1) * q, ld, rows, q, 2.0);
                            for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < q; ++c) gb[r * ld + (k - 2) * q + c] -= gb[r * ld + k * q + c];
                        }
                        if (order >= 1) opp->apply_add(gb + q, ld, gb, ld, rows, q, 1.0);
                        auto& gx = tp.grad_slot(x);
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < q; ++c) gx.data[r * q + c] += gb[r * ld + c];
                    });
}

} // namespace nn

} // namespace aggcap
