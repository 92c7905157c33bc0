#pragma once

#include "aggcap/aggregators.hpp"
#include "aggcap/multiset.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

namespace aggcap {

struct CapacityQuery {
    double delta = 0.0;
    std::size_t t = 2;
    std::size_t dim = 1;
    Norm norm = Norm::LInf;
    DomainBox domain = DomainBox::unit(1);

    /// Throws std::invalid_argument unless delta > 0, t >= 2 and the domain
    /// matches dim.
    void validate() const;
};

/// Volume of the unit ball of R^d under the given norm.
double unit_ball_volume(std::size_t dim, Norm norm);

/// Minimum output count (1/(2 delta))^d vol(D) / vol(B_p(1)) of any
/// delta-injective aggregation function. Returns +infinity when the value
/// overflows a double.
double injectivity_lower_bound(double delta, std::size_t dim, double vol_domain, double vol_unit_ball);

using Aggregator = std::function<std::vector<double>(const Multiset&)>;

struct Counterexample {
    Multiset first;
    Multiset second;
    std::vector<double> output_first;
    std::vector<double> output_second;
    double bottleneck = 0.0; // +infinity when the cardinalities differ
};

struct InjectivityReport {
    bool certified = false;
    std::size_t family_size = 0;
    std::optional<Counterexample> counterexample;
};

/// All multisets of cardinality 0..max_cardinality whose elements lie on the
/// grid lower + k*step inside the box, in canonical enumeration order
/// (by cardinality, then lexicographic in grid-point indices).
std::vector<Multiset> enumerate_grid_multisets(const DomainBox& box, double step, std::size_t max_cardinality,
                                               std::size_t family_cap);

inline constexpr std::size_t kDefaultFamilyCap = 500000;

/// Brute-force delta-injectivity test on the grid family. Reports the first
/// colliding pair (i < j, minimizing j then i) whose bottleneck distance
/// exceeds delta, or certifies the family.
InjectivityReport check_delta_injective(const Aggregator& agg, const CapacityQuery& query, double element_grid_step,
                                        std::size_t max_cardinality, std::size_t family_cap = kDefaultFamilyCap);

enum class AggregatorKind { Sum, Phist };

struct Certificate {
    PhiFunction phi;
    AggregatorKind aggregator;
    std::vector<std::vector<double>> outputs;
    bool distinct = false;

    std::shared_ptr<const VoronoiTessellation> tessellation; // cells the multisets were binned into
    std::vector<std::size_t> selected_cells;                 // S
    std::vector<std::size_t> support;                        // S*, independent columns first (phist only)
    std::size_t bins = 0;                                    // phist only
};

/// Greedy forward selection of coordinates that separate every pair of the
/// given (pairwise distinct) integer vectors. Returns at most t - 1 indices.
std::vector<std::size_t> distinguishing_subset(const std::vector<std::vector<std::int64_t>>& vectors);

/// Constructive phi with at most t outputs making sum aggregation separate
/// t pairwise non-delta-equivalent (l-infinity) multisets.
Certificate certify_sum(const std::vector<Multiset>& multisets, double delta);

/// b = ceil(2/delta) + 1 bins per coordinate, grid P^d.
std::size_t certificate_bins(double delta);

struct PhistCertifyOptions {
    /// injection[k] = position in S* receiving the k-th selected cell.
    /// Defaults to 0, 1, 2, ...
    std::optional<std::vector<std::size_t>> injection;
};

/// Constructive phi with d outputs making the uniform-kernel projective
/// histogram separate t <= b*d pairwise non-delta-equivalent multisets in
/// [-1, 1]^d.
Certificate certify_phist(const std::vector<Multiset>& multisets, double delta, const PhistCertifyOptions& options = {});

void write_certificate_report(std::ostream& out, const Certificate& cert);

} // namespace aggcap
