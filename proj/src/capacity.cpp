#include "aggcap/capacity.hpp"

#include "aggcap/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

namespace aggcap {

void CapacityQuery::validate() const {
    if (!(delta > 0.0)) throw std::invalid_argument("CapacityQuery: delta must be positive");
    if (t < 2) throw std::invalid_argument("CapacityQuery: t must be >= 2");
    if (domain.dim() != dim) throw std::invalid_argument("CapacityQuery: domain dimension mismatch");
}

double unit_ball_volume(std::size_t dim, Norm norm) {
    const double d = static_cast<double>(dim);
    switch (norm) {
    case Norm::LInf: return std::pow(2.0, d);
    case Norm::L1: return std::exp(d * std::log(2.0) - std::lgamma(d + 1.0));
    case Norm::L2: return std::exp(0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d + 1.0));
    }
    return 0.0;
}

double injectivity_lower_bound(double delta, std::size_t dim, double vol_domain, double vol_unit_ball) {
    if (!(delta > 0.0) || dim == 0 || !(vol_domain > 0.0) || !(vol_unit_ball > 0.0))
        throw std::invalid_argument("injectivity_lower_bound: all inputs must be positive");
    const double value = std::pow(1.0 / (2.0 * delta), static_cast<double>(dim)) * (vol_domain / vol_unit_ball);
    return std::isfinite(value) ? value : std::numeric_limits<double>::infinity();
}

namespace {

std::vector<std::vector<double>> grid_axis_values(const DomainBox& box, double step) {
    std::vector<std::vector<double>> axes;
    for (std::size_t a = 0; a < box.dim(); ++a) {
        const double span = box.upper[a] - box.lower[a];
        const auto count = static_cast<std::size_t>(std::floor(span / step * (1.0 + 1e-12))) + 1;
        std::vector<double> values(count);
        for (std::size_t k = 0; k < count; ++k) values[k] = box.lower[a] + static_cast<double>(k) * step;
        axes.push_back(std::move(values));
    }
    return axes;
}

} // namespace

std::vector<Multiset> enumerate_grid_multisets(const DomainBox& box, double step, std::size_t max_cardinality,
                                               std::size_t family_cap) {
    if (!(step > 0.0)) throw std::invalid_argument("enumerate_grid_multisets: step must be positive");
    const auto axes = grid_axis_values(box, step);
    AxisGrid grid;
    grid.centers = axes;
    grid.boundaries.assign(axes.size(), {});
    const auto points = grid.points();
    const std::size_t m = points.size();

    // Number of multisets of size k over m points is C(m + k - 1, k).
    double total = 0.0, term = 1.0;
    for (std::size_t k = 0; k <= max_cardinality; ++k) {
        if (k > 0) term *= static_cast<double>(m + k - 1) / static_cast<double>(k);
        total += term;
    }
    if (total > static_cast<double>(family_cap)) {
        throw std::length_error("enumerate_grid_multisets: family of " + std::to_string(static_cast<long long>(total)) +
                                " multisets exceeds the cap of " + std::to_string(family_cap));
    }

    std::vector<Multiset> family;
    family.reserve(static_cast<std::size_t>(total));
    family.emplace_back(box.dim());
    for (std::size_t k = 1; k <= max_cardinality; ++k) {
        std::vector<std::size_t> idx(k, 0);
        while (true) {
            Multiset x(box.dim());
            for (std::size_t i : idx) x.push_back(points[i]);
            family.push_back(std::move(x));
            // Next nondecreasing index tuple.
            std::size_t pos = k;
            while (pos > 0 && idx[pos - 1] == m - 1) --pos;
            if (pos == 0) break;
            const std::size_t v = idx[pos - 1] + 1;
            for (std::size_t i = pos - 1; i < k; ++i) idx[i] = v;
        }
    }
    return family;
}

InjectivityReport check_delta_injective(const Aggregator& agg, const CapacityQuery& query, double element_grid_step,
                                        std::size_t max_cardinality, std::size_t family_cap) {
    query.validate();
    const auto family = enumerate_grid_multisets(query.domain, element_grid_step, max_cardinality, family_cap);

    InjectivityReport report;
    report.family_size = family.size();
    std::vector<std::vector<double>> outputs;
    outputs.reserve(family.size());
    for (const auto& x : family) outputs.push_back(agg(x));

    std::map<std::vector<double>, std::vector<std::size_t>> groups;
    for (std::size_t j = 0; j < family.size(); ++j) {
        auto& members = groups[outputs[j]];
        for (std::size_t i : members) {
            if (!delta_equivalent(family[i], family[j], query.delta, query.norm).matched) {
                report.counterexample = Counterexample{family[i], family[j], outputs[i], outputs[j],
                                                       multiset_distance_lower(family[i], family[j], query.norm)};
                return report;
            }
        }
        members.push_back(j);
    }
    report.certified = true;
    return report;
}

std::vector<std::size_t> distinguishing_subset(const std::vector<std::vector<std::int64_t>>& vectors) {
    const std::size_t t = vectors.size();
    if (t == 0) return {};
    const std::size_t width = vectors.front().size();
    std::vector<std::pair<std::size_t, std::size_t>> colliding;
    for (std::size_t i = 0; i < t; ++i) {
        if (vectors[i].size() != width) throw std::invalid_argument("distinguishing_subset: ragged input");
        for (std::size_t j = i + 1; j < t; ++j) colliding.emplace_back(i, j);
    }

    std::vector<std::size_t> chosen;
    while (!colliding.empty()) {
        std::size_t best = width, best_count = 0;
        for (std::size_t c = 0; c < width; ++c) {
            std::size_t count = 0;
            for (auto [i, j] : colliding) count += vectors[i][c] != vectors[j][c];
            if (count > best_count) {
                best_count = count;
                best = c;
            }
        }
        if (best == width) throw DomainError("distinguishing_subset: two input vectors are identical");
        chosen.push_back(best);
        std::erase_if(colliding, [&](auto p) { return vectors[p.first][best] != vectors[p.second][best]; });
    }
    // Each pick splits at least one class of the induced partition, so t - 1
    // picks always suffice.
    if (t > 1 && chosen.size() > t - 1) throw std::logic_error("distinguishing_subset: exceeded t - 1 coordinates");
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

namespace {

void require_separated(const std::vector<Multiset>& multisets, double delta) {
    if (multisets.empty()) throw std::invalid_argument("certify: need at least one multiset");
    if (!(delta > 0.0)) throw std::invalid_argument("certify: delta must be positive");
    for (const auto& x : multisets) {
        if (x.dim() != multisets.front().dim()) throw std::invalid_argument("certify: multisets differ in dimension");
    }
    for (std::size_t i = 0; i < multisets.size(); ++i) {
        for (std::size_t j = i + 1; j < multisets.size(); ++j) {
            const auto match = delta_equivalent(multisets[i], multisets[j], delta, Norm::LInf);
            if (match.matched) {
                throw DomainError("certify: multisets #" + std::to_string(i) + " and #" + std::to_string(j) +
                                  " are delta-equivalent (bottleneck " + std::to_string(*match.bottleneck) +
                                  " <= delta " + std::to_string(delta) + ")");
            }
        }
    }
}

bool pairwise_distinct(const std::vector<std::vector<double>>& outputs) {
    for (std::size_t i = 0; i < outputs.size(); ++i)
        for (std::size_t j = i + 1; j < outputs.size(); ++j)
            if (outputs[i] == outputs[j]) return false;
    return true;
}

// Occupancy vectors restricted to the cells any multiset touches; returns the
// occupied cell list alongside.
std::pair<std::vector<std::size_t>, std::vector<std::vector<std::int64_t>>>
occupancy(const std::vector<Multiset>& multisets, const VoronoiTessellation& tess) {
    std::vector<std::map<std::size_t, std::int64_t>> counts(multisets.size());
    std::set<std::size_t> occupied;
    for (std::size_t k = 0; k < multisets.size(); ++k) {
        const auto& x = multisets[k];
        for (std::size_t e = 0; e < x.size(); ++e) {
            const auto cell = tess.cell_of(x[e]);
            ++counts[k][cell];
            occupied.insert(cell);
        }
    }
    std::vector<std::size_t> cells(occupied.begin(), occupied.end());
    std::vector<std::vector<std::int64_t>> vectors(multisets.size(), std::vector<std::int64_t>(cells.size(), 0));
    for (std::size_t k = 0; k < multisets.size(); ++k)
        for (std::size_t c = 0; c < cells.size(); ++c)
            if (auto it = counts[k].find(cells[c]); it != counts[k].end()) vectors[k][c] = it->second;
    return {cells, vectors};
}

std::vector<std::size_t> select_cells(const std::vector<Multiset>& multisets, const VoronoiTessellation& tess) {
    auto [cells, vectors] = occupancy(multisets, tess);
    std::vector<std::size_t> selected;
    for (std::size_t c : distinguishing_subset(vectors)) selected.push_back(cells[c]);
    return selected;
}

} // namespace

Certificate certify_sum(const std::vector<Multiset>& multisets, double delta) {
    require_separated(multisets, delta);
    const std::size_t d = multisets.front().dim();

    // Domain: [-1, 1]^d widened to hold every element.
    auto box = DomainBox::unit(d);
    for (const auto& x : multisets) {
        for (std::size_t e = 0; e < x.size(); ++e) {
            for (std::size_t a = 0; a < d; ++a) {
                box.lower[a] = std::min(box.lower[a], x[e][a]);
                box.upper[a] = std::max(box.upper[a], x[e][a]);
            }
        }
    }
    // Cover radius delta/2 keeps every half-open cell narrower than delta, so
    // equal cell counts would imply a matching within delta.
    auto tess = std::make_shared<const VoronoiTessellation>(
        VoronoiTessellation::from_grid(grid_cover_axes(box, delta / 2.0), box));

    Certificate cert{PhiFunction::identity(d), AggregatorKind::Sum, {}, false, tess, {}, {}, 0};
    cert.selected_cells = select_cells(multisets, *tess);
    cert.phi = PhiFunction::cell_indicator(tess, cert.selected_cells);
    for (const auto& x : multisets) cert.outputs.push_back(sum_aggregate(x, cert.phi));
    cert.distinct = pairwise_distinct(cert.outputs);
    return cert;
}

std::size_t certificate_bins(double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("certificate_bins: delta must be positive");
    return static_cast<std::size_t>(std::ceil(2.0 / delta * (1.0 - 1e-12))) + 1;
}

Certificate certify_phist(const std::vector<Multiset>& multisets, double delta, const PhistCertifyOptions& options) {
    require_separated(multisets, delta);
    const std::size_t d = multisets.front().dim();
    const std::size_t t = multisets.size();
    const std::size_t b = certificate_bins(delta);
    if (t > b * d) {
        throw DomainError("certify_phist: t = " + std::to_string(t) + " exceeds b*d = " + std::to_string(b * d) +
                          " (b = " + std::to_string(b) + ", d = " + std::to_string(d) + ")");
    }
    const auto unit = DomainBox::unit(d);
    for (std::size_t k = 0; k < t; ++k) {
        for (std::size_t e = 0; e < multisets[k].size(); ++e) {
            if (!unit.contains(multisets[k][e]))
                throw std::invalid_argument("certify_phist: multiset #" + std::to_string(k) + " leaves [-1, 1]^d");
        }
    }

    auto grid = std::make_shared<const VoronoiTessellation>(VoronoiTessellation::histogram_grid(d, b));
    Certificate cert{PhiFunction::identity(d), AggregatorKind::Phist, {}, false, grid, {}, {}, b};
    cert.selected_cells = select_cells(multisets, *grid);
    // Independent columns first, so the default injection of |S| <= rank A
    // cells keeps A h injective on the certified family.
    const auto support = support_set(d, b);
    for (std::size_t k : support.order) cert.support.push_back(support.indices[k]);

    std::vector<std::size_t> injection(cert.selected_cells.size());
    for (std::size_t k = 0; k < injection.size(); ++k) injection[k] = k;
    if (options.injection) {
        if (options.injection->size() < cert.selected_cells.size())
            throw std::invalid_argument("certify_phist: injection shorter than the selected cell set");
        injection.assign(options.injection->begin(), options.injection->begin() + static_cast<std::ptrdiff_t>(injection.size()));
    }
    std::map<std::size_t, std::size_t> mapping;
    for (std::size_t k = 0; k < cert.selected_cells.size(); ++k) {
        if (injection[k] >= cert.support.size()) throw std::invalid_argument("certify_phist: injection out of range");
        mapping[cert.selected_cells[k]] = cert.support[injection[k]];
    }
    // Unselected cells land outside [-1, 1]^d, where every uniform bin is zero.
    cert.phi = PhiFunction::cell_permutation(grid, grid, std::move(mapping), std::vector<double>(d, 2.0));

    const auto spec = HistogramSpec::theory(b);
    for (const auto& x : multisets) cert.outputs.push_back(phist(x, spec, cert.phi).data);
    cert.distinct = pairwise_distinct(cert.outputs);
    return cert;
}

void write_certificate_report(std::ostream& out, const Certificate& cert) {
    const bool is_sum = cert.aggregator == AggregatorKind::Sum;
    out << "aggregator: " << (is_sum ? "sum" : "phist") << '\n';
    out << "cells: " << cert.tessellation->size() << " (l-inf grid)\n";
    if (!is_sum) out << "bins: " << cert.bins << '\n';
    out << "phi outputs: " << cert.phi.output_dim() << '\n';
    out << "selected cells (S):";
    for (auto c : cert.selected_cells) out << ' ' << c;
    out << '\n';
    if (!is_sum) {
        out << "support set (S*):";
        for (auto c : cert.support) out << ' ' << c;
        out << '\n';
    }
    out << "phi table:\n";
    for (std::size_t k = 0; k < cert.selected_cells.size(); ++k) {
        const auto c = cert.selected_cells[k];
        out << "  cell " << c << " center";
        for (double v : cert.tessellation->point(c)) out << ' ' << v;
        if (is_sum) {
            out << " -> e_" << k << '\n';
        } else {
            const auto target = cert.phi.mapping().at(c);
            out << " -> cell " << target << " center";
            for (double v : cert.tessellation->point(target)) out << ' ' << v;
            out << '\n';
        }
    }
    out << "  other cells -> " << (is_sum ? "0" : "null (outside [-1,1]^d)") << '\n';
    out << "outputs:\n";
    for (std::size_t i = 0; i < cert.outputs.size(); ++i) {
        out << "  X" << i << ':';
        for (double v : cert.outputs[i]) out << ' ' << v;
        out << '\n';
    }
    out << "verdict: " << (cert.distinct ? "distinct" : "NOT distinct") << '\n';
}

} // namespace aggcap
