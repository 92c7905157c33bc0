#include "aggcap/multiset.hpp"

#include "aggcap/errors.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace aggcap {

double distance(std::span<const double> a, std::span<const double> b, Norm norm) {
    if (a.size() != b.size()) throw std::invalid_argument("distance: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = std::abs(a[i] - b[i]);
        switch (norm) {
        case Norm::L1: acc += diff; break;
        case Norm::L2: acc += diff * diff; break;
        case Norm::LInf: acc = std::max(acc, diff); break;
        }
    }
    return norm == Norm::L2 ? std::sqrt(acc) : acc;
}

Multiset::Multiset(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw std::invalid_argument("Multiset: dim must be positive");
}

Multiset::Multiset(std::size_t dim, const std::vector<std::vector<double>>& elements)
    : Multiset(dim) {
    data_.reserve(elements.size() * dim);
    for (const auto& e : elements) push_back(e);
}

Multiset Multiset::scalars(std::initializer_list<double> values) {
    Multiset m(1);
    for (double v : values) m.push_back(std::span<const double>(&v, 1));
    return m;
}

void Multiset::push_back(std::span<const double> element) {
    if (element.size() != dim_) {
        throw std::invalid_argument("Multiset: element has length " + std::to_string(element.size()) +
                                    ", expected " + std::to_string(dim_));
    }
    data_.insert(data_.end(), element.begin(), element.end());
    if (normalized_) {
        for (double v : element) {
            if (!(v >= -1.0 && v <= 1.0)) {
                normalized_ = false;
                break;
            }
        }
    }
}

void Multiset::set_normalized() {
    for (double v : data_) {
        if (!(v >= -1.0 && v <= 1.0))
            throw std::invalid_argument("Multiset: coordinate outside [-1, 1]");
    }
    normalized_ = true;
}

std::vector<std::size_t> Multiset::canonical_order() const {
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
        const auto x = (*this)[a];
        const auto y = (*this)[b];
        return std::lexicographical_compare(x.begin(), x.end(), y.begin(), y.end());
    });
    return order;
}

Multiset Multiset::canonical() const {
    Multiset out(dim_);
    out.data_.reserve(data_.size());
    for (std::size_t i : canonical_order()) out.push_back((*this)[i]);
    out.normalized_ = normalized_;
    return out;
}

bool operator==(const Multiset& a, const Multiset& b) {
    if (a.dim_ != b.dim_ || a.size() != b.size()) return false;
    return a.canonical().data_ == b.canonical().data_;
}

DomainBox::DomainBox(std::vector<double> lo, std::vector<double> hi)
    : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.empty() || lower.size() != upper.size())
        throw std::invalid_argument("DomainBox: bounds must be nonempty and of equal length");
    for (std::size_t i = 0; i < lower.size(); ++i) {
        if (!(lower[i] < upper[i])) throw std::invalid_argument("DomainBox: lower must be < upper");
    }
}

DomainBox DomainBox::unit(std::size_t dim) {
    return DomainBox(std::vector<double>(dim, -1.0), std::vector<double>(dim, 1.0));
}

double DomainBox::volume() const {
    double v = 1.0;
    for (std::size_t i = 0; i < dim(); ++i) v *= upper[i] - lower[i];
    return v;
}

bool DomainBox::contains(std::span<const double> x) const {
    for (std::size_t i = 0; i < dim(); ++i) {
        if (x[i] < lower[i] || x[i] > upper[i]) return false;
    }
    return true;
}

namespace {

// Kuhn's augmenting-path matching on the thresholded bipartite graph.
class ThresholdMatcher {
public:
    ThresholdMatcher(const Multiset& x, const Multiset& y, double delta, Norm norm)
        : adj_(x.size()), match_of_right_(y.size(), kNone) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            for (std::size_t j = 0; j < y.size(); ++j) {
                if (distance(x[i], y[j], norm) <= delta) adj_[i].push_back(j);
            }
        }
    }

    bool perfect() {
        for (std::size_t i = 0; i < adj_.size(); ++i) {
            visited_.assign(match_of_right_.size(), false);
            if (!augment(i)) return false;
        }
        return true;
    }

    std::vector<std::pair<std::size_t, std::size_t>> pairing() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t j = 0; j < match_of_right_.size(); ++j) out.emplace_back(match_of_right_[j], j);
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

    bool augment(std::size_t left) {
        for (std::size_t right : adj_[left]) {
            if (visited_[right]) continue;
            visited_[right] = true;
            if (match_of_right_[right] == kNone || augment(match_of_right_[right])) {
                match_of_right_[right] = left;
                return true;
            }
        }
        return false;
    }

    std::vector<std::vector<std::size_t>> adj_;
    std::vector<std::size_t> match_of_right_;
    std::vector<bool> visited_;
};

void require_same_dim(const Multiset& x, const Multiset& y, const char* who) {
    if (x.dim() != y.dim()) {
        throw std::invalid_argument(std::string(who) + ": dimension mismatch (" + std::to_string(x.dim()) +
                                    " vs " + std::to_string(y.dim()) + ")");
    }
}

} // namespace

MatchResult delta_equivalent(const Multiset& x, const Multiset& y, double delta, Norm norm) {
    require_same_dim(x, y, "delta_equivalent");
    if (delta < 0.0) throw std::invalid_argument("delta_equivalent: delta must be nonnegative");
    MatchResult result;
    if (x.size() != y.size()) return result;

    ThresholdMatcher matcher(x, y, delta, norm);
    if (!matcher.perfect()) return result;

    auto pairs = matcher.pairing();
    double worst = 0.0;
    for (auto [i, j] : pairs) worst = std::max(worst, distance(x[i], y[j], norm));
    result.matched = true;
    result.bottleneck = worst;
    result.pairing = std::move(pairs);
    return result;
}

double multiset_distance_lower(const Multiset& x, const Multiset& y, Norm norm) {
    require_same_dim(x, y, "multiset_distance_lower");
    if (x.size() != y.size()) return std::numeric_limits<double>::infinity();
    if (x.empty()) return 0.0;

    std::vector<double> candidates;
    candidates.reserve(x.size() * y.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) candidates.push_back(distance(x[i], y[j], norm));
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    // The largest candidate always admits a perfect matching.
    std::size_t lo = 0, hi = candidates.size() - 1;
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (delta_equivalent(x, y, candidates[mid], norm).matched)
            hi = mid;
        else
            lo = mid + 1;
    }
    return candidates[lo];
}

std::size_t AxisGrid::point_count() const {
    std::size_t n = 1;
    for (const auto& c : centers) n *= c.size();
    return n;
}

std::vector<double> AxisGrid::point(std::size_t index) const {
    std::vector<double> p(dim());
    for (std::size_t a = dim(); a-- > 0;) {
        const std::size_t k = centers[a].size();
        p[a] = centers[a][index % k];
        index /= k;
    }
    return p;
}

std::vector<std::vector<double>> AxisGrid::points() const {
    std::vector<std::vector<double>> out;
    const std::size_t n = point_count();
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(point(i));
    return out;
}

std::size_t AxisGrid::cell_of(std::span<const double> x) const {
    if (x.size() != dim()) throw std::invalid_argument("AxisGrid::cell_of: dimension mismatch");
    std::size_t index = 0;
    for (std::size_t a = 0; a < dim(); ++a) {
        const auto& bounds = boundaries[a];
        const auto cell = static_cast<std::size_t>(std::upper_bound(bounds.begin(), bounds.end(), x[a]) - bounds.begin());
        index = index * centers[a].size() + cell;
    }
    return index;
}

AxisGrid grid_cover_axes(const DomainBox& box, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("grid_cover: delta must be positive");
    AxisGrid grid;
    for (std::size_t a = 0; a < box.dim(); ++a) {
        const double span = box.upper[a] - box.lower[a];
        // Shave a relative ulp-scale margin so exact ratios (2 / (2 * 0.5)) do not round up.
        const double ratio = span / (2.0 * delta);
        const auto count = static_cast<std::size_t>(std::max(1.0, std::ceil(ratio * (1.0 - 1e-12))));
        const double step = span / static_cast<double>(count);
        std::vector<double> c(count), b;
        for (std::size_t i = 0; i < count; ++i) c[i] = box.lower[a] + (static_cast<double>(i) + 0.5) * step;
        for (std::size_t i = 1; i < count; ++i) b.push_back(box.lower[a] + static_cast<double>(i) * step);
        grid.centers.push_back(std::move(c));
        grid.boundaries.push_back(std::move(b));
    }
    return grid;
}

std::vector<std::vector<double>> grid_cover(const DomainBox& box, double delta) {
    return grid_cover_axes(box, delta).points();
}

namespace {

bool next_content_line(std::istream& in, std::string& line) {
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        line = line.substr(first);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
        return true;
    }
    return false;
}

std::size_t parse_header(const std::string& line) {
    std::istringstream ss(line);
    std::string key;
    long long d = 0;
    if (!(ss >> key >> d) || key != "dim" || d <= 0) throw ParseError("multiset fixture: expected 'dim <d>', got '" + line + "'");
    return static_cast<std::size_t>(d);
}

} // namespace

std::vector<Multiset> read_multisets(std::istream& in) {
    std::vector<Multiset> out;
    std::string line;
    if (!next_content_line(in, line)) throw ParseError("multiset fixture: empty input");
    std::size_t dim = parse_header(line);
    out.emplace_back(dim);
    while (next_content_line(in, line)) {
        if (line == "---") {
            out.emplace_back(dim);
            continue;
        }
        if (line.rfind("dim", 0) == 0) {
            if (!out.back().empty()) throw ParseError("multiset fixture: 'dim' must start a multiset");
            dim = parse_header(line);
            out.back() = Multiset(dim);
            continue;
        }
        std::istringstream ss(line);
        std::vector<double> element;
        double v;
        while (ss >> v) element.push_back(v);
        if (!ss.eof() || element.size() != dim) {
            throw ParseError("multiset fixture: bad element line '" + line + "' (expected " + std::to_string(dim) +
                             " numbers)");
        }
        out.back().push_back(element);
    }
    return out;
}

Multiset read_multiset(std::istream& in) {
    auto all = read_multisets(in);
    if (all.size() != 1) throw ParseError("multiset fixture: expected exactly one multiset");
    return std::move(all.front());
}

void write_multiset(std::ostream& out, const Multiset& x) {
    out << "dim " << x.dim() << '\n';
    const auto old_precision = out.precision(17);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto e = x[i];
        for (std::size_t k = 0; k < e.size(); ++k) out << (k ? " " : "") << e[k];
        out << '\n';
    }
    out.precision(old_precision);
}

} // namespace aggcap
