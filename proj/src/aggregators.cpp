#include "aggcap/aggregators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace aggcap {

double kernel_value(KernelKind kind, double u, double width) {
    switch (kind) {
    case KernelKind::Uniform: return u <= width ? 1.0 : 0.0;
    case KernelKind::Triangular: return u < width ? 1.0 - u / width : 0.0;
    case KernelKind::RaisedCosine: return u < width ? 0.5 * (1.0 + std::cos(std::numbers::pi * u / width)) : 0.0;
    }
    return 0.0;
}

double kernel_derivative(KernelKind kind, double u, double width) {
    if (!(u < width)) return 0.0;
    switch (kind) {
    case KernelKind::Uniform: return 0.0;
    case KernelKind::Triangular: return -1.0 / width;
    case KernelKind::RaisedCosine: return -0.5 * std::numbers::pi / width * std::sin(std::numbers::pi * u / width);
    }
    return 0.0;
}

std::vector<double> bin_centers(std::size_t bins) {
    if (bins == 0) throw std::invalid_argument("bin_centers: bins must be >= 1");
    std::vector<double> c(bins);
    const double b = static_cast<double>(bins);
    for (std::size_t l = 1; l <= bins; ++l) c[l - 1] = (2.0 * static_cast<double>(l) - 1.0) / b - 1.0;
    return c;
}

std::vector<double> bin_edges(std::size_t bins) {
    if (bins == 0) throw std::invalid_argument("bin_edges: bins must be >= 1");
    std::vector<double> e(bins + 1);
    const double b = static_cast<double>(bins);
    for (std::size_t l = 0; l <= bins; ++l) e[l] = 2.0 * static_cast<double>(l) / b - 1.0;
    return e;
}

HistogramSpec::HistogramSpec(std::size_t b, KernelKind k, double w)
    : bins(b), kernel(k), width(w), centers(bin_centers(b)), edges(bin_edges(b)) {
    if (!(w > 0.0)) throw std::invalid_argument("HistogramSpec: width must be positive");
}

HistogramSpec HistogramSpec::theory(std::size_t bins) {
    return HistogramSpec(bins, KernelKind::Uniform, 1.0 / static_cast<double>(bins));
}

HistogramSpec HistogramSpec::training(std::size_t bins, KernelKind kernel) {
    if (kernel == KernelKind::Uniform) return theory(bins);
    return HistogramSpec(bins, kernel, 2.0 / static_cast<double>(bins));
}

void HistogramSpec::responses(double value, std::span<double> out) const {
    if (kernel == KernelKind::Uniform) {
        for (std::size_t l = 0; l < bins; ++l) {
            const bool inside = value >= edges[l] && (value < edges[l + 1] || (l + 1 == bins && value <= edges[l + 1]));
            out[l] = inside ? 1.0 : 0.0;
        }
        return;
    }
    for (std::size_t l = 0; l < bins; ++l) out[l] = kernel_value(kernel, std::abs(value - centers[l]), width);
}

// --- tessellations ---------------------------------------------------------

VoronoiTessellation VoronoiTessellation::from_points(std::vector<std::vector<double>> points, Norm norm) {
    if (points.empty()) throw std::invalid_argument("VoronoiTessellation: no points");
    VoronoiTessellation t;
    t.dim_ = points.front().size();
    t.count_ = points.size();
    t.norm_ = norm;
    for (const auto& p : points) {
        if (p.size() != t.dim_) throw std::invalid_argument("VoronoiTessellation: inconsistent point dimension");
        t.points_.insert(t.points_.end(), p.begin(), p.end());
    }
    std::set<std::vector<double>> seen(points.begin(), points.end());
    if (seen.size() != points.size()) throw std::invalid_argument("VoronoiTessellation: points must be distinct");
    return t;
}

VoronoiTessellation VoronoiTessellation::from_grid(AxisGrid grid, std::optional<DomainBox> domain) {
    if (grid.dim() == 0) throw std::invalid_argument("VoronoiTessellation: empty grid");
    VoronoiTessellation t;
    t.dim_ = grid.dim();
    t.count_ = grid.point_count();
    t.norm_ = Norm::LInf;
    if (domain && domain->dim() != t.dim_) throw std::invalid_argument("VoronoiTessellation: domain dimension mismatch");
    t.grid_ = std::move(grid);
    t.domain_ = std::move(domain);
    return t;
}

VoronoiTessellation VoronoiTessellation::histogram_grid(std::size_t dim, std::size_t bins) {
    if (dim == 0 || bins == 0) throw std::invalid_argument("histogram_grid: dim and bins must be positive");
    AxisGrid grid;
    const auto centers = bin_centers(bins);
    const auto edges = bin_edges(bins);
    const std::vector<double> interior(edges.begin() + 1, edges.end() - 1);
    for (std::size_t a = 0; a < dim; ++a) {
        grid.centers.push_back(centers);
        grid.boundaries.push_back(interior);
    }
    auto t = from_grid(std::move(grid), DomainBox::unit(dim));
    t.marker_ = std::make_pair(bins, dim);
    return t;
}

std::vector<double> VoronoiTessellation::point(std::size_t i) const {
    if (i >= count_) throw std::out_of_range("VoronoiTessellation::point: index out of range");
    if (grid_) return grid_->point(i);
    return {points_.begin() + static_cast<std::ptrdiff_t>(i * dim_),
            points_.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim_)};
}

std::size_t VoronoiTessellation::cell_of(std::span<const double> x) const {
    if (x.size() != dim_) throw std::invalid_argument("VoronoiTessellation::cell_of: dimension mismatch");
    if (grid_) return grid_->cell_of(x);
    std::size_t best = 0;
    double best_dist = distance(x, std::span<const double>(points_.data(), dim_), norm_);
    for (std::size_t i = 1; i < count_; ++i) {
        const double d = distance(x, std::span<const double>(points_.data() + i * dim_, dim_), norm_);
        if (d < best_dist) {
            best_dist = d;
            best = i;
        }
    }
    return best;
}

bool VoronoiTessellation::in_domain(std::span<const double> x) const {
    return !domain_ || domain_->contains(x);
}

// --- phi -------------------------------------------------------------------

PhiFunction PhiFunction::identity(std::size_t dim) {
    PhiFunction phi;
    phi.kind_ = Kind::Identity;
    phi.input_dim_ = phi.output_dim_ = dim;
    return phi;
}

PhiFunction PhiFunction::cell_indicator(std::shared_ptr<const VoronoiTessellation> tess, std::vector<std::size_t> cells) {
    if (!tess) throw std::invalid_argument("cell_indicator: null tessellation");
    PhiFunction phi;
    phi.kind_ = Kind::CellIndicator;
    phi.input_dim_ = tess->dim();
    phi.output_dim_ = cells.size();
    for (std::size_t k = 0; k < cells.size(); ++k) {
        if (cells[k] >= tess->size()) throw std::invalid_argument("cell_indicator: cell index out of range");
        if (!phi.slot_of_cell_.emplace(cells[k], k).second)
            throw std::invalid_argument("cell_indicator: duplicate cell index");
    }
    phi.cells_ = std::move(cells);
    phi.source_ = std::move(tess);
    return phi;
}

PhiFunction PhiFunction::cell_permutation(std::shared_ptr<const VoronoiTessellation> source,
                                          std::shared_ptr<const VoronoiTessellation> target,
                                          std::map<std::size_t, std::size_t> mapping, std::vector<double> null_output) {
    if (!source || !target) throw std::invalid_argument("cell_permutation: null tessellation");
    if (null_output.size() != target->dim()) throw std::invalid_argument("cell_permutation: null output dimension");
    std::set<std::size_t> images;
    for (auto [from, to] : mapping) {
        if (from >= source->size() || to >= target->size())
            throw std::invalid_argument("cell_permutation: cell index out of range");
        if (!images.insert(to).second) throw std::invalid_argument("cell_permutation: map is not injective");
    }
    PhiFunction phi;
    phi.kind_ = Kind::CellPermutation;
    phi.input_dim_ = source->dim();
    phi.output_dim_ = target->dim();
    phi.source_ = std::move(source);
    phi.target_ = std::move(target);
    phi.mapping_ = std::move(mapping);
    phi.null_output_ = std::move(null_output);
    return phi;
}

PhiFunction PhiFunction::learned(std::size_t input_dim, std::size_t output_dim, Fn fn) {
    if (!fn) throw std::invalid_argument("learned: empty function");
    PhiFunction phi;
    phi.kind_ = Kind::Learned;
    phi.input_dim_ = input_dim;
    phi.output_dim_ = output_dim;
    phi.fn_ = std::move(fn);
    return phi;
}

namespace {

std::string describe(std::span<const double> x) {
    std::ostringstream ss;
    ss << '[';
    for (std::size_t i = 0; i < x.size(); ++i) ss << (i ? ", " : "") << x[i];
    ss << ']';
    return ss.str();
}

} // namespace

std::vector<double> PhiFunction::operator()(std::span<const double> x) const {
    if (x.size() != input_dim_) throw std::invalid_argument("phi: input dimension mismatch");
    switch (kind_) {
    case Kind::Identity: return {x.begin(), x.end()};
    case Kind::CellIndicator: {
        if (!source_->in_domain(x)) throw std::domain_error("phi undefined outside the tessellation domain at " + describe(x));
        std::vector<double> out(output_dim_, 0.0);
        if (auto it = slot_of_cell_.find(source_->cell_of(x)); it != slot_of_cell_.end()) out[it->second] = 1.0;
        return out;
    }
    case Kind::CellPermutation: {
        if (!source_->in_domain(x)) throw std::domain_error("phi undefined outside the tessellation domain at " + describe(x));
        if (auto it = mapping_.find(source_->cell_of(x)); it != mapping_.end()) return target_->point(it->second);
        return null_output_;
    }
    case Kind::Learned: {
        auto out = fn_(x);
        if (out.size() != output_dim_) throw std::runtime_error("phi: learned function returned wrong dimension");
        return out;
    }
    }
    return {};
}

// --- aggregators -------------------------------------------------------------

std::vector<double> sum_aggregate(const Multiset& x, const PhiFunction& phi) {
    if (x.dim() != phi.input_dim()) throw std::invalid_argument("sum_aggregate: phi input dimension mismatch");
    std::vector<double> total(phi.output_dim(), 0.0);
    for (std::size_t idx : x.canonical_order()) {
        std::vector<double> y;
        try {
            y = phi(x[idx]);
        } catch (const std::domain_error& e) {
            throw std::domain_error("sum_aggregate: element #" + std::to_string(idx) + " " + describe(x[idx]) + ": " +
                                    e.what());
        }
        for (std::size_t k = 0; k < y.size(); ++k) total[k] += y[k];
    }
    return total;
}

Matrix phist(const Multiset& x, const HistogramSpec& spec, const PhiFunction& phi) {
    if (x.dim() != phi.input_dim())
        throw std::invalid_argument("phist: multiset dimension " + std::to_string(x.dim()) +
                                    " does not match phi input dimension " + std::to_string(phi.input_dim()));
    const std::size_t d = phi.output_dim();
    Matrix out(d, spec.bins);
    std::vector<double> resp(spec.bins);
    for (std::size_t idx : x.canonical_order()) {
        const auto y = phi(x[idx]);
        for (std::size_t i = 0; i < d; ++i) {
            spec.responses(y[i], resp);
            auto row = out.row(i);
            for (std::size_t l = 0; l < spec.bins; ++l) row[l] += resp[l];
        }
    }
    return out;
}

std::vector<std::int64_t> voronoi_sum(const Multiset& x, const VoronoiTessellation& tess) {
    if (x.dim() != tess.dim()) throw std::invalid_argument("voronoi_sum: dimension mismatch");
    std::vector<std::int64_t> counts(tess.size(), 0);
    for (std::size_t idx : x.canonical_order()) ++counts[tess.cell_of(x[idx])];
    return counts;
}

// --- projection matrix and support set -----------------------------------------

std::vector<std::size_t> grid_digits(std::size_t index, std::size_t dim, std::size_t bins) {
    std::vector<std::size_t> digits(dim);
    for (std::size_t a = dim; a-- > 0;) {
        digits[a] = index % bins;
        index /= bins;
    }
    return digits;
}

std::size_t grid_index(std::span<const std::size_t> digits, std::size_t bins) {
    std::size_t index = 0;
    for (std::size_t d : digits) index = index * bins + d;
    return index;
}

std::vector<std::int64_t> ProjectionMatrix::apply(std::span<const std::int64_t> h) const {
    if (h.size() != cols) throw std::invalid_argument("ProjectionMatrix::apply: length mismatch");
    std::vector<std::int64_t> out(rows, 0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c : row_columns[r]) out[r] += h[c];
    return out;
}

Matrix ProjectionMatrix::dense() const {
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c : row_columns[r]) m(r, c) = 1.0;
    return m;
}

ProjectionMatrix build_projection_matrix(std::size_t dim, std::size_t bins, std::size_t column_cap) {
    if (dim == 0 || bins == 0) throw std::invalid_argument("build_projection_matrix: d and b must be >= 1");
    std::size_t cols = 1;
    for (std::size_t a = 0; a < dim; ++a) {
        if (cols > column_cap / bins) {
            throw std::length_error("build_projection_matrix: b^d exceeds the column cap of " +
                                    std::to_string(column_cap));
        }
        cols *= bins;
    }
    ProjectionMatrix a;
    a.dim = dim;
    a.bins = bins;
    a.rows = bins * dim;
    a.cols = cols;
    a.row_columns.assign(a.rows, {});
    for (std::size_t j = 0; j < cols; ++j) {
        const auto digits = grid_digits(j, dim, bins);
        for (std::size_t i = 0; i < dim; ++i) a.row_columns[i * bins + digits[i]].push_back(j);
    }
    return a;
}

namespace {

constexpr std::uint64_t kPrime = (std::uint64_t{1} << 61) - 1;

std::uint64_t mulmod(std::uint64_t a, std::uint64_t b) {
    const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
    std::uint64_t lo = static_cast<std::uint64_t>(p & kPrime);
    std::uint64_t hi = static_cast<std::uint64_t>(p >> 61);
    std::uint64_t r = lo + hi;
    if (r >= kPrime) r -= kPrime;
    return r;
}

std::uint64_t powmod(std::uint64_t base, std::uint64_t exp) {
    std::uint64_t result = 1;
    while (exp) {
        if (exp & 1) result = mulmod(result, base);
        base = mulmod(base, base);
        exp >>= 1;
    }
    return result;
}

} // namespace

std::size_t exact_rank(const std::vector<std::vector<std::int64_t>>& vectors) {
    if (vectors.empty()) return 0;
    const std::size_t len = vectors.front().size();
    std::vector<std::vector<std::uint64_t>> m;
    for (const auto& v : vectors) {
        if (v.size() != len) throw std::invalid_argument("exact_rank: vectors differ in length");
        std::vector<std::uint64_t> row(len);
        for (std::size_t i = 0; i < len; ++i) {
            const std::int64_t r = v[i] % static_cast<std::int64_t>(kPrime);
            row[i] = static_cast<std::uint64_t>(r < 0 ? r + static_cast<std::int64_t>(kPrime) : r);
        }
        m.push_back(std::move(row));
    }
    std::size_t rank = 0;
    for (std::size_t col = 0; col < len && rank < m.size(); ++col) {
        std::size_t pivot = rank;
        while (pivot < m.size() && m[pivot][col] == 0) ++pivot;
        if (pivot == m.size()) continue;
        std::swap(m[pivot], m[rank]);
        const std::uint64_t inv = powmod(m[rank][col], kPrime - 2);
        for (std::size_t r = 0; r < m.size(); ++r) {
            if (r == rank || m[r][col] == 0) continue;
            const std::uint64_t factor = mulmod(m[r][col], inv);
            for (std::size_t c = col; c < len; ++c) {
                const std::uint64_t sub = mulmod(factor, m[rank][c]);
                m[r][c] = m[r][c] >= sub ? m[r][c] - sub : m[r][c] + kPrime - sub;
            }
        }
        ++rank;
    }
    return rank;
}

std::size_t projection_column_rank(const ProjectionMatrix& a, std::span<const std::size_t> columns) {
    // Column vectors of A; rank is transpose invariant.
    std::vector<std::vector<std::int64_t>> m(columns.size(), std::vector<std::int64_t>(a.rows, 0));
    std::map<std::size_t, std::vector<std::size_t>> slots;
    for (std::size_t k = 0; k < columns.size(); ++k) {
        if (columns[k] >= a.cols) throw std::out_of_range("projection_column_rank: column out of range");
        slots[columns[k]].push_back(k);
    }
    for (std::size_t r = 0; r < a.rows; ++r) {
        for (std::size_t c : a.row_columns[r]) {
            if (auto it = slots.find(c); it != slots.end())
                for (std::size_t k : it->second) m[k][r] = 1;
        }
    }
    return exact_rank(m);
}

SupportSet support_set(std::size_t dim, std::size_t bins) {
    if (dim == 0) throw std::invalid_argument("support_set: d must be >= 1");
    if (bins < 2) throw std::invalid_argument("support_set: b must be >= 2");
    const std::size_t top = bins - 1;
    std::set<std::size_t> chosen;

    // Line through the grid along `axis`, every other coordinate at the top index.
    auto add_line = [&](std::size_t axis) {
        std::vector<std::size_t> digits(dim, top);
        for (std::size_t v = 0; v < bins; ++v) {
            digits[axis] = v;
            chosen.insert(grid_index(digits, bins));
        }
    };

    add_line(0);
    for (std::size_t axis = 1; axis < dim; ++axis) {
        add_line(axis);
        std::vector<std::size_t> corner(dim, top);
        corner[axis] = 0;
        corner[axis - 1] = 0;
        chosen.insert(grid_index(corner, bins));
    }

    SupportSet s;
    s.dim = dim;
    s.bins = bins;
    s.indices.assign(chosen.begin(), chosen.end());
    if (s.indices.size() != bins * dim)
        throw std::logic_error("support_set: recurrence produced " + std::to_string(s.indices.size()) + " cells");
    const auto a = build_projection_matrix(dim, bins);
    std::vector<std::size_t> basis, rest;
    for (std::size_t k = 0; k < s.indices.size(); ++k) {
        basis.push_back(s.indices[k]);
        if (projection_column_rank(a, basis) == basis.size()) {
            s.order.push_back(k);
        } else {
            basis.pop_back();
            rest.push_back(k);
        }
    }
    s.rank = basis.size();
    s.order.insert(s.order.end(), rest.begin(), rest.end());
    return s;
}

} // namespace aggcap
