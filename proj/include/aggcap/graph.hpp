#pragma once

#include "aggcap/autodiff.hpp"
#include "aggcap/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace aggcap {

struct Edge {
    std::size_t i = 0;
    std::size_t j = 0;
    double weight = 1.0;
};

/// Weighted graph on nodes 0..n-1. Undirected edges are listed once.
struct Graph {
    std::size_t n = 0;
    std::vector<Edge> edges;
    bool directed = false;

    /// Throws std::invalid_argument on out-of-range endpoints, self-loops or
    /// non-positive weights.
    void validate() const;
    /// Same graph with node v renamed perm[v].
    Graph relabeled(std::span<const std::size_t> perm) const;
};

/// Rescaled normalized Laplacian L~ = L - I = -D^(-1/2) W D^(-1/2), stored
/// as CSR. The diagonal of L~ is zero; isolated nodes have zero rows.
class SpectralOperator {
public:
    SpectralOperator() = default;

    std::size_t n() const { return n_; }
    std::size_t nonzeros() const { return values_.size(); }

    /// out = L~ x for x (blocks*n) x q, L~ applied to each n-row block.
    void apply(const Matrix& x, Matrix& out) const;
    /// out += scale * L~ x, same layout as apply().
    void apply_add(const Matrix& x, double scale, Matrix& out) const;
    /// Strided form over q-column slices of row-major buffers with leading
    /// dimensions ldx and ldo; rows must be a multiple of n.
    void apply_add(const double* x, std::size_t ldx, double* out, std::size_t ldo, std::size_t rows, std::size_t q,
                   double scale) const;

    Matrix dense_rescaled() const;
    /// Unrescaled L = L~ + I.
    Matrix dense_laplacian() const;

private:
    friend SpectralOperator normalized_laplacian(const Graph& g);
    std::size_t n_ = 0;
    std::vector<std::size_t> row_start_;
    std::vector<std::size_t> col_;
    std::vector<double> values_;
};

/// G(n, p) with unit weights; every node gets at least one edge when n > 1
/// and connect_isolated is set.
Graph random_graph(std::size_t n, double p, std::uint64_t seed, bool connect_isolated = true);

/// Directed graphs are symmetrized as (W + W^T)/2 first. Throws on n = 0.
SpectralOperator normalized_laplacian(const Graph& g);

enum class Activation { None, Relu };

struct ConvLayerParams {
    std::size_t order = 0; // K
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    Matrix theta; // ((K+1)*in) x out, row k*in + i holds Theta_k[i, :]
    Matrix bias;  // 1 x out
    Activation activation = Activation::None;

    ConvLayerParams() = default;
    ConvLayerParams(std::size_t k, std::size_t in, std::size_t out);
    void validate() const;
};

/// Sum_k T_k(L~) X Theta_k + bias, for a single n x q input.
Matrix cheb_conv(const SpectralOperator& op, const Matrix& x, const ConvLayerParams& params);

/// Runs the layer stack on each one-hot impulse delta_j; returns one n x d
/// response per requested node.
std::vector<Matrix> impulse_responses(const SpectralOperator& op, std::span<const std::size_t> nodes,
                                      std::span<const ConvLayerParams> layers);

/// Stacked one-hot impulses: (nodes.size()*n) x 1 with a 1 at row k*n + nodes[k].
Matrix impulse_stack(std::size_t n, std::span<const std::size_t> nodes);

namespace nn {

/// Differentiable Chebyshev convolution of x ((blocks*n) x q) with
/// theta ((K+1)*q x out) and bias (1 x out); L~ acts on each n-row block.
Var cheb_conv(Tape& t, const SpectralOperator& op, std::size_t order, Var x, Var theta, Var bias);

} // namespace nn

} // namespace aggcap
