#include "aggcap/selftest.hpp"

#include "aggcap/capacity.hpp"
#include "aggcap/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>

namespace aggcap {

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
SuiteResult timed(const char* name, F&& body) {
    const auto start = Clock::now();
    SuiteResult r;
    r.name = name;
    try {
        body(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return r;
}

Multiset random_multiset(std::size_t dim, std::size_t card, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> coord(-1.0, 1.0);
    Multiset m(dim);
    std::vector<double> x(dim);
    for (std::size_t i = 0; i < card; ++i) {
        for (auto& c : x) c = coord(rng);
        m.push_back(x);
    }
    m.set_normalized();
    return m;
}

std::vector<std::int64_t> vec_of(const Matrix& m) {
    std::vector<std::int64_t> v;
    v.reserve(m.data.size());
    for (double x : m.data) v.push_back(std::llround(x));
    return v;
}

bool pairwise_distinct(const std::vector<std::vector<double>>& outs) {
    for (std::size_t i = 0; i < outs.size(); ++i)
        for (std::size_t j = i + 1; j < outs.size(); ++j)
            if (outs[i] == outs[j]) return false;
    return true;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (auto& x : m.data) x = n(rng);
    return m;
}

} // namespace

IntMatrix dense_projection(const ProjectionMatrix& a) {
    IntMatrix m(a.rows, std::vector<std::int64_t>(a.cols, 0));
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c : a.row_columns[r]) m[r][c] += 1;
    return m;
}

SuiteResult check_support_rank(std::size_t max_dim, std::size_t max_bins,
                               const std::function<void(IntMatrix&, std::size_t, std::size_t)>& mutate) {
    return timed("support-rank", [&](SuiteResult& r) {
        std::size_t cases = 0;
        for (std::size_t d = 1; d <= max_dim; ++d) {
            for (std::size_t b = 2; b <= max_bins; ++b) {
                const auto a = build_projection_matrix(d, b);
                auto dense = dense_projection(a);
                if (mutate) mutate(dense, d, b);
                const auto s = support_set(d, b);
                std::ostringstream where;
                where << "d=" << d << " b=" << b;
                if (s.indices.size() != b * d) {
                    r.detail = where.str() + ": |S*| = " + std::to_string(s.indices.size());
                    return;
                }
                std::vector<std::vector<std::int64_t>> columns;
                const auto spec = HistogramSpec::theory(b);
                const auto phi = PhiFunction::identity(d);
                const auto tess = VoronoiTessellation::histogram_grid(d, b);
                for (std::size_t c : s.indices) {
                    std::vector<std::int64_t> col(dense.size());
                    for (std::size_t row = 0; row < dense.size(); ++row) col[row] = dense[row][c];
                    const Multiset single(d, {tess.point(c)});
                    if (vec_of(phist(single, spec, phi)) != col) {
                        r.detail = where.str() + ": column " + std::to_string(c) + " differs from phist of its center";
                        return;
                    }
                    columns.push_back(std::move(col));
                }
                const std::size_t rank = exact_rank(columns);
                std::vector<std::vector<std::int64_t>> all(a.cols, std::vector<std::int64_t>(dense.size()));
                for (std::size_t row = 0; row < dense.size(); ++row)
                    for (std::size_t c = 0; c < a.cols; ++c) all[c][row] = dense[row][c];
                const std::size_t full = exact_rank(all);
                if (full != b * d - d + 1 || rank != full || s.rank != rank) {
                    r.detail = where.str() + ": rank A = " + std::to_string(full) + ", rank A[:, S*] = " +
                               std::to_string(rank) + ", expected b*d - d + 1 = " + std::to_string(b * d - d + 1);
                    return;
                }
                ++cases;
            }
        }
        r.passed = true;
        r.detail = std::to_string(cases) + " (d, b) cases, S* spans the column space of A";
    });
}

SuiteResult check_projection_identity(std::size_t trials, std::uint64_t seed) {
    return timed("projection-identity", [&](SuiteResult& r) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> dim_dist(1, 3), bin_dist(2, 6), card_dist(0, 12);
        for (std::size_t k = 0; k < trials; ++k) {
            const std::size_t d = dim_dist(rng), b = bin_dist(rng);
            const auto y = random_multiset(d, card_dist(rng), rng);
            const auto a = build_projection_matrix(d, b);
            const auto h = voronoi_sum(y, VoronoiTessellation::histogram_grid(d, b));
            const auto lhs = vec_of(phist(y, HistogramSpec::theory(b), PhiFunction::identity(d)));
            if (lhs != a.apply(h)) {
                r.detail = "trial " + std::to_string(k) + " (d=" + std::to_string(d) + ", b=" + std::to_string(b) +
                           "): vec(phist) != A h";
                return;
            }
        }
        r.passed = true;
        r.detail = std::to_string(trials) + " random multisets";
    });
}

SuiteResult check_voronoi_injectivity(std::size_t max_cardinality) {
    return timed("voronoi-injectivity", [&](SuiteResult& r) {
        const double delta = 0.25;
        std::size_t families = 0;
        for (std::size_t d = 1; d <= 2; ++d) {
            const std::size_t card = max_cardinality;
            CapacityQuery q;
            q.delta = delta;
            q.dim = d;
            q.domain = DomainBox::unit(d);
            auto tess = std::make_shared<const VoronoiTessellation>(
                VoronoiTessellation::from_grid(grid_cover_axes(q.domain, delta / 2.0), q.domain));
            std::vector<std::size_t> all(tess->size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            const auto phi = PhiFunction::cell_indicator(tess, all);
            const auto report =
                check_delta_injective([&](const Multiset& m) { return sum_aggregate(m, phi); }, q, 2.0 * delta, card);
            if (!report.certified) {
                r.detail = "voronoi sum not injective in d=" + std::to_string(d);
                return;
            }
            families += report.family_size;

            const auto ident = PhiFunction::identity(d);
            const auto control =
                check_delta_injective([&](const Multiset& m) { return sum_aggregate(m, ident); }, q, 2.0 * delta, card);
            if (control.certified) {
                r.detail = "negative control (identity sum) was certified in d=" + std::to_string(d);
                return;
            }
        }
        r.passed = true;
        r.detail = std::to_string(families) + " multisets checked, identity control rejected";
    });
}

std::vector<Multiset> random_separated_family(std::size_t t, std::size_t dim, std::size_t max_card, double delta,
                                              std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> card(1, max_card);
    std::vector<Multiset> out;
    std::size_t attempts = 0;
    while (out.size() < t) {
        if (++attempts > 100000) throw std::runtime_error("random_separated_family: could not separate the family");
        auto m = random_multiset(dim, card(rng), rng);
        bool ok = true;
        for (const auto& o : out)
            if (delta_equivalent(m, o, delta, Norm::LInf).matched) {
                ok = false;
                break;
            }
        if (ok) out.push_back(std::move(m));
    }
    return out;
}

SuiteResult check_certificates(std::size_t trials, std::uint64_t seed) {
    return timed("certificates", [&](SuiteResult& r) {
        const double delta = 0.3;
        for (std::size_t k = 0; k < trials; ++k) {
            const auto family = random_separated_family(5, 2, 3, delta, seed + k);
            const auto cs = certify_sum(family, delta);
            std::vector<std::vector<double>> outs;
            for (const auto& m : family) outs.push_back(sum_aggregate(m, cs.phi));
            if (!cs.distinct || !pairwise_distinct(outs) || cs.phi.output_dim() > family.size()) {
                r.detail = "sum certificate failed on trial " + std::to_string(k);
                return;
            }
            const auto cp = certify_phist(family, delta);
            const auto spec = HistogramSpec::theory(cp.bins);
            outs.clear();
            for (const auto& m : family) outs.push_back(phist(m, spec, cp.phi).data);
            if (!cp.distinct || !pairwise_distinct(outs) || cp.phi.output_dim() != 2) {
                r.detail = "phist certificate failed on trial " + std::to_string(k);
                return;
            }
        }
        r.passed = true;
        r.detail = std::to_string(trials) + " families of 5 in d=2";
    });
}

ModelConfig toy_config(SamplingMode mode) {
    ModelConfig c;
    c.order1 = 2;
    c.order2 = 2;
    c.channels1 = 3;
    c.channels2 = 4;
    c.bins = 4;
    c.samples = 6;
    c.realizations = 2;
    c.batch_size = 2;
    c.mode = mode;
    return c;
}

nn::LossBuilder model_loss(const Graph& g, std::size_t label, const ModelConfig& config, std::uint64_t seed) {
    auto op = std::make_shared<const SpectralOperator>(normalized_laplacian(g));
    return [op, label, config, seed](nn::Tape& tape, std::span<const nn::Var> leaves) {
        BoundParams bound;
        bound.vars.assign(leaves.begin(), leaves.end());
        return nn::softmax_cross_entropy(tape, forward(tape, *op, bound, config, seed), label);
    };
}

SuiteResult check_gradients(std::size_t trials, std::uint64_t seed) {
    return timed("grad-checks", [&](SuiteResult& r) {
        using namespace nn;
        std::mt19937_64 rng(seed);
        const double tol = 1e-4;
        double worst = 0.0;
        std::size_t compared = 0;
        auto run = [&](const char* what, const LossBuilder& f, const std::vector<Matrix>& leaves) {
            GradCheckOptions o;
            o.seed = seed;
            o.max_coords_per_leaf = 40;
            const auto rep = grad_check(f, leaves, o);
            compared += rep.compared;
            worst = std::max(worst, rep.worst());
            if (!rep.passed(tol)) {
                std::ostringstream s;
                s << what << ": relative error " << rep.worst();
                r.detail = s.str();
                return false;
            }
            return true;
        };

        const auto spec = HistogramSpec::training(5);
        for (std::size_t k = 0; k < trials; ++k) {
            Graph g = random_graph(7, 0.4, seed + k);
            auto op = std::make_shared<const SpectralOperator>(normalized_laplacian(g));
            const Matrix x = random_matrix(14, 3, rng), theta = random_matrix(9, 2, rng), bias = random_matrix(1, 2, rng);
            if (!run("cheb_conv",
                     [op](Tape& t, std::span<const Var> v) {
                         Var y = nn::cheb_conv(t, *op, 2, v[0], v[1], v[2]);
                         return sum_all(t, nn::tanh(t, y));
                     },
                     {x, theta, bias}))
                return;
            if (!run("matmul/linear/relu",
                     [](Tape& t, std::span<const Var> v) {
                         Var y = relu(t, linear(t, v[0], v[1], v[2]));
                         return sum_all(t, matmul(t, y, v[3]));
                     },
                     {random_matrix(4, 3, rng), random_matrix(5, 3, rng), random_matrix(1, 5, rng),
                      random_matrix(5, 2, rng)}))
                return;
            if (!run("whiten/histogram",
                     [spec](Tape& t, std::span<const Var> v) {
                         Var w = whiten_columns(t, v[0], 1e-6);
                         Var h = block_histogram(t, nn::tanh(t, w), 2, spec);
                         return sum_all(t, matmul(t, h, v[1]));
                     },
                     {random_matrix(6, 3, rng), random_matrix(15, 1, rng)}))
                return;
            if (!run("select/scatter/softmax",
                     [](Tape& t, std::span<const Var> v) {
                         Var s = row_select(t, v[0], {2, 0, 2, 1});
                         Var a = scatter_add_rows(t, s, {0, 3, 3, 1}, 5);
                         Var m = mean_var(t, add_row(t, a, v[1]));
                         Var p = block_sum(t, sub(t, scale(t, m, 0.5), m), 1);
                         return softmax_cross_entropy(t, p, 1);
                     },
                     {random_matrix(3, 3, rng), random_matrix(1, 3, rng)}))
                return;

            const auto config = toy_config(k % 2 ? SamplingMode::WithReplacement : SamplingMode::Deterministic);
            auto params = ModelParams::init(config, seed + k);
            std::vector<Matrix> leaves;
            for (const auto& p : params.tensors) leaves.push_back(p.value);
            if (!run("model loss", model_loss(g, k % 2, config, seed + 31 * k), leaves)) return;
        }
        r.passed = compared > 0;
        std::ostringstream s;
        s << compared << " coordinates, worst relative error " << worst;
        r.detail = s.str();
    });
}

std::vector<SuiteResult> run_selftest(const SelftestOptions& options) {
    std::vector<SuiteResult> out;
    out.push_back(check_projection_identity(options.quick ? 50 : 400, options.seed));
    std::function<void(IntMatrix&, std::size_t, std::size_t)> mutate;
    if (options.flip_projection_sign)
        mutate = [](IntMatrix& a, std::size_t, std::size_t) {
            for (auto& v : a[0])
                if (v != 0) {
                    v = -v;
                    break;
                }
        };
    out.push_back(check_support_rank(options.quick ? 2 : 3, options.quick ? 5 : 7, mutate));
    out.push_back(check_voronoi_injectivity(options.quick ? 2 : 3));
    out.push_back(check_certificates(options.quick ? 3 : 20, options.seed));
    out.push_back(check_gradients(options.quick ? 2 : 6, options.seed));
    return out;
}

} // namespace aggcap
