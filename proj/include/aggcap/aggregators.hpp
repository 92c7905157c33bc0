#pragma once

#include "aggcap/matrix.hpp"
#include "aggcap/multiset.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace aggcap {

enum class KernelKind { Uniform, Triangular, RaisedCosine };

/// kappa(u) for u = |value - center| >= 0. The uniform kernel here is the
/// closed indicator u <= w; bin membership for histograms is decided by
/// half-open edges instead (see HistogramSpec).
double kernel_value(KernelKind kind, double u, double width);
/// d kappa / d u, with subgradient 0 at the kinks (u = 0 and u = w).
double kernel_derivative(KernelKind kind, double u, double width);

/// p_l = (2l - 1)/b - 1 for l = 1..b.
std::vector<double> bin_centers(std::size_t bins);
/// e_l = 2l/b - 1 for l = 0..b. Uniform bin l (0-based) is [e_l, e_{l+1}),
/// the last bin closed on the right.
std::vector<double> bin_edges(std::size_t bins);

struct HistogramSpec {
    std::size_t bins = 0;
    KernelKind kernel = KernelKind::Triangular;
    double width = 0.0;
    std::vector<double> centers;
    std::vector<double> edges;

    HistogramSpec(std::size_t bins, KernelKind kernel, double width);
    /// Uniform kernel, w = 1/b: the certification setting.
    static HistogramSpec theory(std::size_t bins);
    /// Overlapping smooth kernel, w = 2/b: the training setting.
    static HistogramSpec training(std::size_t bins, KernelKind kernel = KernelKind::Triangular);

    /// Kernel responses of a scalar against every bin, written to out[0..b).
    void responses(double value, std::span<double> out) const;
    /// Bins [first, second) outside of which a compact kernel response to
    /// value is zero (a superset; not meaningful for the uniform kernel).
    std::pair<std::size_t, std::size_t> active_bins(double value) const {
        const double b = static_cast<double>(bins);
        const double pos = (value + 1.0) * b / 2.0 - 0.5; // p_l == value at l == pos
        const double reach = width * b / 2.0;
        auto clamp = [b](double v) { return static_cast<std::size_t>(v < 0.0 ? 0.0 : v > b ? b : v); };
        return {clamp(std::floor(pos - reach)), clamp(std::floor(pos + reach) + 2.0)};
    }
};

/// Point set inducing Voronoi cells. Grid tessellations carry their axis
/// structure and assign cells by half-open per-axis intervals, which agrees
/// with the nearest-point rule away from cell boundaries.
class VoronoiTessellation {
public:
    static VoronoiTessellation from_points(std::vector<std::vector<double>> points, Norm norm);
    /// l-infinity tessellation of a regular grid, optionally restricted to a domain.
    static VoronoiTessellation from_grid(AxisGrid grid, std::optional<DomainBox> domain = std::nullopt);
    /// The grid P^d of histogram bin centers, cells B_inf(p, 1/b) over [-1, 1]^d.
    static VoronoiTessellation histogram_grid(std::size_t dim, std::size_t bins);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return count_; }
    Norm norm() const { return norm_; }
    const std::optional<AxisGrid>& grid() const { return grid_; }
    /// (b, d) when this is the histogram grid P^d.
    std::optional<std::pair<std::size_t, std::size_t>> histogram_marker() const { return marker_; }
    const std::optional<DomainBox>& domain() const { return domain_; }

    std::vector<double> point(std::size_t i) const;
    /// Cell index of x; nearest point with ties to the lowest index for
    /// point-set tessellations.
    std::size_t cell_of(std::span<const double> x) const;
    bool in_domain(std::span<const double> x) const;

private:
    VoronoiTessellation() = default;

    std::size_t dim_ = 0;
    std::size_t count_ = 0;
    Norm norm_ = Norm::LInf;
    std::vector<double> points_; // flat, only for point-set tessellations
    std::optional<AxisGrid> grid_;
    std::optional<std::pair<std::size_t, std::size_t>> marker_;
    std::optional<DomainBox> domain_;
};

/// Element-wise preprocessing applied before aggregation.
class PhiFunction {
public:
    enum class Kind { Identity, CellIndicator, CellPermutation, Learned };
    using Fn = std::function<std::vector<double>(std::span<const double>)>;

    static PhiFunction identity(std::size_t dim);
    /// One output per selected cell: [phi(x)]_k = 1{x in cell cells[k]}.
    static PhiFunction cell_indicator(std::shared_ptr<const VoronoiTessellation> tess, std::vector<std::size_t> cells);
    /// Sends elements of source cell c to the center of target cell
    /// mapping[c]; elements of unmapped cells go to null_output.
    static PhiFunction cell_permutation(std::shared_ptr<const VoronoiTessellation> source,
                                        std::shared_ptr<const VoronoiTessellation> target,
                                        std::map<std::size_t, std::size_t> mapping, std::vector<double> null_output);
    static PhiFunction learned(std::size_t input_dim, std::size_t output_dim, Fn fn);

    Kind kind() const { return kind_; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t output_dim() const { return output_dim_; }

    /// Throws std::domain_error if phi is undefined at x.
    std::vector<double> operator()(std::span<const double> x) const;

    const std::vector<std::size_t>& cells() const { return cells_; }
    const std::map<std::size_t, std::size_t>& mapping() const { return mapping_; }

private:
    PhiFunction() = default;

    Kind kind_ = Kind::Identity;
    std::size_t input_dim_ = 0;
    std::size_t output_dim_ = 0;
    std::shared_ptr<const VoronoiTessellation> source_;
    std::shared_ptr<const VoronoiTessellation> target_;
    std::vector<std::size_t> cells_;
    std::map<std::size_t, std::size_t> slot_of_cell_;
    std::map<std::size_t, std::size_t> mapping_;
    std::vector<double> null_output_;
    Fn fn_;
};

/// sum_{x in X} phi(x), reduced in canonical element order.
std::vector<double> sum_aggregate(const Multiset& x, const PhiFunction& phi);

/// Projective histogram: entry (i, l) = sum_x kappa(|[phi(x)]_i - p_l|),
/// returned as a d x b matrix.
Matrix phist(const Multiset& x, const HistogramSpec& spec, const PhiFunction& phi);

/// Count of elements per Voronoi cell.
std::vector<std::int64_t> voronoi_sum(const Multiset& x, const VoronoiTessellation& tess);

/// 0/1 matrix A (b*d x b^d) with vec(phist(Y)) = A h(Y) for the uniform
/// kernel and the grid P^d. Row (i, l) sits at index i*b + l.
struct ProjectionMatrix {
    std::size_t dim = 0;
    std::size_t bins = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::vector<std::size_t>> row_columns;

    std::vector<std::int64_t> apply(std::span<const std::int64_t> h) const;
    Matrix dense() const;
};

inline constexpr std::size_t kDefaultProjectionColumnCap = std::size_t{1} << 22;

ProjectionMatrix build_projection_matrix(std::size_t dim, std::size_t bins,
                                         std::size_t column_cap = kDefaultProjectionColumnCap);

/// b*d grid cells (indices into the lexicographic enumeration of P^d) built
/// by the line-and-corner recurrence. Every column of A has one entry per
/// axis block, so rank A = b*d - d + 1 and these columns are independent
/// only for d = 1.
struct SupportSet {
    std::size_t dim = 0;
    std::size_t bins = 0;
    std::vector<std::size_t> indices; // sorted ascending
    /// Positions into indices: a maximal independent subset first (greedy in
    /// ascending order), then the rest.
    std::vector<std::size_t> order;
    std::size_t rank = 0;
};

SupportSet support_set(std::size_t dim, std::size_t bins);

/// Rank of the selected columns of A, computed exactly (modular elimination
/// over a 61-bit prime; a full rank there implies full rank over the rationals).
std::size_t projection_column_rank(const ProjectionMatrix& a, std::span<const std::size_t> columns);
/// Rank of a set of integer vectors, by the same modular elimination.
std::size_t exact_rank(const std::vector<std::vector<std::int64_t>>& vectors);

/// Lexicographic multi-index of a grid point (axis 0 most significant).
std::vector<std::size_t> grid_digits(std::size_t index, std::size_t dim, std::size_t bins);
std::size_t grid_index(std::span<const std::size_t> digits, std::size_t bins);

} // namespace aggcap
