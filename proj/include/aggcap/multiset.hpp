#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace aggcap {

enum class Norm { L1, L2, LInf };

/// Distance between two equal-length vectors under the given norm.
double distance(std::span<const double> a, std::span<const double> b, Norm norm);

/// Finite multiset of d-dimensional real vectors. Multiplicity is encoded by
/// repetition; elements are stored row-major in one flat buffer.
class Multiset {
public:
    explicit Multiset(std::size_t dim);
    Multiset(std::size_t dim, const std::vector<std::vector<double>>& elements);

    /// Convenience for d = 1: one element per scalar.
    static Multiset scalars(std::initializer_list<double> values);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return data_.size() / dim_; }
    bool empty() const { return data_.empty(); }

    std::span<const double> operator[](std::size_t i) const {
        return {data_.data() + i * dim_, dim_};
    }
    const std::vector<double>& flat() const { return data_; }

    void push_back(std::span<const double> element);

    /// Marks the multiset as living in [-1, 1]^d. Throws if any coordinate
    /// falls outside.
    void set_normalized();
    bool normalized() const { return normalized_; }

    /// Element indices sorted lexicographically. Reductions that walk this
    /// order are bitwise independent of the input permutation.
    std::vector<std::size_t> canonical_order() const;
    Multiset canonical() const;

    /// Equality as multisets (order of elements ignored).
    friend bool operator==(const Multiset& a, const Multiset& b);

private:
    std::size_t dim_;
    std::vector<double> data_;
    bool normalized_ = false;
};

/// Axis-aligned box D; defaults to [-1, 1]^d.
struct DomainBox {
    std::vector<double> lower;
    std::vector<double> upper;

    static DomainBox unit(std::size_t dim);
    DomainBox(std::vector<double> lower, std::vector<double> upper);
    std::size_t dim() const { return lower.size(); }
    double volume() const;
    bool contains(std::span<const double> x) const;
};

struct MatchResult {
    bool matched = false;
    std::optional<std::vector<std::pair<std::size_t, std::size_t>>> pairing;
    std::optional<double> bottleneck;
};

/// True iff |x| == |y| and some bijection pairs every element of x with an
/// element of y within distance delta. Thresholds compare with <=, no slack.
MatchResult delta_equivalent(const Multiset& x, const Multiset& y, double delta, Norm norm);

/// Bottleneck matching distance; +infinity when the cardinalities differ.
double multiset_distance_lower(const Multiset& x, const Multiset& y, Norm norm);

/// Per-axis centers of a regular grid together with the half-open cell
/// boundaries between consecutive centers.
struct AxisGrid {
    std::vector<std::vector<double>> centers;
    std::vector<std::vector<double>> boundaries; // centers[a].size() - 1 entries per axis

    std::size_t dim() const { return centers.size(); }
    std::size_t point_count() const;
    /// Lexicographic enumeration, axis 0 most significant.
    std::vector<double> point(std::size_t index) const;
    std::vector<std::vector<double>> points() const;
    /// Index of the half-open cell containing x (values outside the grid
    /// clamp to the outermost cells).
    std::size_t cell_of(std::span<const double> x) const;
};

/// Regular grid whose l-infinity cells of radius <= delta cover the box.
AxisGrid grid_cover_axes(const DomainBox& box, double delta);
std::vector<std::vector<double>> grid_cover(const DomainBox& box, double delta);

/// Fixture text: first line "dim <d>", then one element per line.
/// Several multisets in one stream are separated by a line "---".
/// Lines starting with '#' are ignored.
Multiset read_multiset(std::istream& in);
std::vector<Multiset> read_multisets(std::istream& in);
void write_multiset(std::ostream& out, const Multiset& x);

} // namespace aggcap
