#include "aggcap/multiset.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace aggcap;

TEST_CASE("delta_equivalent on single pair at the threshold") {
    const auto r = delta_equivalent(Multiset::scalars({0.0}), Multiset::scalars({0.1}), 0.1, Norm::LInf);
    CHECK(r.matched);
    REQUIRE(r.bottleneck.has_value());
    CHECK(*r.bottleneck == doctest::Approx(0.1));
}

TEST_CASE("delta_equivalent rejects when every cross distance is too large") {
    const auto r = delta_equivalent(Multiset::scalars({0.0, 0.0}), Multiset::scalars({-0.5, 0.5}), 0.1, Norm::LInf);
    CHECK_FALSE(r.matched);
}

TEST_CASE("delta_equivalent agrees with exhaustive bijection search") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
        Multiset x(2), y(2);
        for (int i = 0; i < 6; ++i) {
            x.push_back(std::vector<double>{u(rng), u(rng)});
            y.push_back(std::vector<double>{u(rng), u(rng)});
        }
        const double exact = oracle::bottleneck_bruteforce(x, y);
        for (double delta : {0.1, 0.3, 0.5, 0.8, exact, std::nextafter(exact, 0.0)}) {
            const auto r = delta_equivalent(x, y, delta, Norm::LInf);
            CHECK(r.matched == (exact <= delta));
            if (r.matched) {
                REQUIRE(r.pairing.has_value());
                std::vector<bool> used(6, false);
                for (auto [i, j] : *r.pairing) {
                    CHECK_FALSE(used[j]);
                    used[j] = true;
                    CHECK(oracle::dist_inf(x[i], y[j]) <= delta);
                }
            }
        }
        CHECK(multiset_distance_lower(x, y, Norm::LInf) == doctest::Approx(exact).epsilon(1e-15));
    }
}

TEST_CASE("multiset_distance_lower examples") {
    const auto x = Multiset::scalars({0.0, 1.0});
    CHECK(multiset_distance_lower(x, x, Norm::LInf) == 0.0);
    CHECK(multiset_distance_lower(x, Multiset::scalars({0.2, 0.7}), Norm::LInf) == doctest::Approx(0.3));
    CHECK(std::isinf(multiset_distance_lower(x, Multiset::scalars({0.0}), Norm::LInf)));
}

TEST_CASE("delta_equivalent under l1 and l2") {
    const Multiset x(2, {{0.0, 0.0}});
    const Multiset y(2, {{0.3, 0.4}});
    CHECK(delta_equivalent(x, y, 0.5, Norm::L2).matched);
    CHECK_FALSE(delta_equivalent(x, y, 0.49, Norm::L2).matched);
    CHECK(delta_equivalent(x, y, 0.7, Norm::L1).matched);
    CHECK_FALSE(delta_equivalent(x, y, 0.69, Norm::L1).matched);
    CHECK(delta_equivalent(x, y, 0.4, Norm::LInf).matched);
}

TEST_CASE("empty multisets are equivalent; dimension mismatch throws") {
    CHECK(delta_equivalent(Multiset(3), Multiset(3), 0.0, Norm::LInf).matched);
    CHECK_THROWS(delta_equivalent(Multiset(2), Multiset(3), 0.1, Norm::LInf));
    CHECK_THROWS(delta_equivalent(Multiset(2), Multiset(2), -0.1, Norm::LInf));
}

TEST_CASE("grid_cover examples") {
    const auto one = grid_cover(DomainBox::unit(1), 0.5);
    REQUIRE(one.size() == 2);
    CHECK(one[0][0] == doctest::Approx(-0.5));
    CHECK(one[1][0] == doctest::Approx(0.5));
    CHECK(grid_cover(DomainBox::unit(2), 0.5).size() == 4);
}

TEST_CASE("grid_cover covers dense samples within delta") {
    for (double delta : {0.3, 0.17, 0.5, 1.0, 0.05}) {
        const auto pts = grid_cover(DomainBox::unit(1), delta);
        for (int k = 0; k <= 4000; ++k) {
            const double x = -1.0 + 2.0 * k / 4000.0;
            double best = 1e9;
            for (const auto& p : pts) best = std::min(best, std::abs(p[0] - x));
            CHECK(best <= delta + 1e-12);
        }
    }
    const DomainBox box({-1.0, 0.0}, {0.0, 3.0});
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ux(-1.0, 0.0), uy(0.0, 3.0);
    const auto pts = grid_cover(box, 0.3);
    for (int k = 0; k < 2000; ++k) {
        const std::vector<double> x{ux(rng), uy(rng)};
        double best = 1e9;
        for (const auto& p : pts) best = std::min(best, oracle::dist_inf(p, x));
        CHECK(best <= 0.3 + 1e-12);
    }
}

TEST_CASE("grid cells are half-open") {
    const auto g = grid_cover_axes(DomainBox::unit(1), 0.5);
    CHECK(g.cell_of(std::vector<double>{-0.0}) == 1);
    CHECK(g.cell_of(std::vector<double>{std::nextafter(0.0, -1.0)}) == 0);
    CHECK(g.cell_of(std::vector<double>{1.0}) == 1);
}

TEST_CASE("normalized flag validates coordinates") {
    Multiset m(2, {{0.5, -1.0}, {1.0, 0.0}});
    CHECK_NOTHROW(m.set_normalized());
    CHECK(m.normalized());
    Multiset bad(1, {{1.5}});
    CHECK_THROWS(bad.set_normalized());
}

TEST_CASE("multiset equality ignores order") {
    CHECK(Multiset::scalars({1.0, 2.0, 2.0}) == Multiset::scalars({2.0, 1.0, 2.0}));
    CHECK_FALSE(Multiset::scalars({1.0, 2.0}) == Multiset::scalars({1.0, 1.0}));
}

TEST_CASE("fixture text round trip") {
    std::vector<Multiset> sets{Multiset(2, {{0.25, -0.5}, {1.0, 0.125}}), Multiset(2), Multiset(2, {{0.1, 0.2}})};
    std::stringstream s;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        if (i) s << "---\n";
        write_multiset(s, sets[i]);
    }
    const auto back = read_multisets(s);
    REQUIRE(back.size() == sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) CHECK(back[i] == sets[i]);
}

TEST_CASE("fixture parse errors") {
    std::istringstream no_header("0.5\n");
    CHECK_THROWS(read_multiset(no_header));
    std::istringstream wrong_width("dim 2\n0.5\n");
    CHECK_THROWS(read_multiset(wrong_width));
    std::istringstream junk("dim 1\nabc\n");
    CHECK_THROWS(read_multiset(junk));
}
