#include "aggcap/dataset.hpp"
#include "aggcap/errors.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

using namespace aggcap;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("aggcap_ds_" + std::to_string(::getpid()) + "_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

void write_fixture(const fs::path& dir, const std::string& edges) {
    write_file(dir / "FIX_A.txt", edges);
    write_file(dir / "FIX_graph_indicator.txt", "1\n1\n1\n2\n2\n");
    write_file(dir / "FIX_graph_labels.txt", "1\n-1\n");
}

std::set<std::pair<std::size_t, std::size_t>> edge_set(const Graph& g) {
    std::set<std::pair<std::size_t, std::size_t>> s;
    for (const auto& e : g.edges) s.insert({std::min(e.i, e.j), std::max(e.i, e.j)});
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace

TEST_CASE("TU fixture parses into a path and an edge") {
    TempDir dir("fixture");
    write_fixture(dir.path, "1, 2\n2, 1\n2, 3\n3, 2\n4, 5\n5, 4\n");
    write_file(dir.path / "FIX_node_labels.txt", "garbage that must be ignored\n");
    const auto d = parse_tu_dataset(dir.path, "FIX");
    REQUIRE(d.size() == 2);
    CHECK(d.num_classes() == 2);
    CHECK(d.raw_labels == std::vector<std::int64_t>{-1, 1});
    CHECK(d.graphs[0].n == 3);
    CHECK(edge_set(d.graphs[0]) == std::set<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 2}});
    CHECK(d.labels[0] == 1);
    CHECK(d.graphs[1].n == 2);
    CHECK(edge_set(d.graphs[1]) == std::set<std::pair<std::size_t, std::size_t>>{{0, 1}});
    CHECK(d.labels[1] == 0);
    for (const auto& e : d.graphs[0].edges) CHECK(e.weight == 1.0);
}

TEST_CASE("single-direction edges are symmetrized") {
    TempDir dir("single");
    write_fixture(dir.path, "1,2\n3, 2\n4 ,5\n");
    const auto d = parse_tu_dataset(dir.path, "FIX");
    CHECK(edge_set(d.graphs[0]).size() == 2);
    CHECK(d.graphs[0].edges.size() == 2);
}

TEST_CASE("parse errors name the file and line") {
    TempDir dir("errors");
    write_fixture(dir.path, "1, 2\n3, 4\n");
    try {
        parse_tu_dataset(dir.path, "FIX");
        FAIL("expected a cross-graph error");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("FIX_A.txt:2") != std::string::npos);
        CHECK(msg.find("crosses") != std::string::npos);
    }
    write_fixture(dir.path, "1, 9\n");
    CHECK_THROWS_AS(parse_tu_dataset(dir.path, "FIX"), ParseError);
    write_fixture(dir.path, "1; 2\n");
    CHECK_THROWS_AS(parse_tu_dataset(dir.path, "FIX"), ParseError);
    CHECK_THROWS_AS(parse_tu_dataset(dir.path, "MISSING"), ParseError);
}

TEST_CASE("TU round trip preserves graphs and labels") {
    std::mt19937_64 rng(5);
    Dataset d;
    d.name = "RT";
    d.raw_labels = {-3, 0, 7};
    for (std::size_t g = 0; g < 12; ++g) {
        d.graphs.push_back(random_graph(2 + g % 6, 0.5, g + 1));
        d.labels.push_back(g % 3);
    }
    TempDir dir("roundtrip");
    write_tu_dataset(d, dir.path);
    const auto back = parse_tu_dataset(dir.path, "RT");
    REQUIRE(back.size() == d.size());
    CHECK(back.raw_labels == d.raw_labels);
    CHECK(back.labels == d.labels);
    for (std::size_t g = 0; g < d.size(); ++g) {
        CHECK(back.graphs[g].n == d.graphs[g].n);
        CHECK(edge_set(back.graphs[g]) == edge_set(d.graphs[g]));
    }
    const auto again = parse_tu_dataset(dir.path, "RT");
    for (std::size_t g = 0; g < d.size(); ++g) CHECK(edge_set(again.graphs[g]) == edge_set(back.graphs[g]));
}

TEST_CASE("stratified folds with 5 + 5 and k = 5") {
    std::vector<std::size_t> labels{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    const auto plan = stratified_kfold(labels, 5, 3);
    for (const auto& fold : plan.test) {
        REQUIRE(fold.size() == 2);
        CHECK(labels[fold[0]] != labels[fold[1]]);
    }
}

TEST_CASE("stratified folds are deterministic per seed") {
    std::vector<std::size_t> labels(40);
    for (std::size_t i = 0; i < 40; ++i) labels[i] = i % 3 == 0;
    CHECK(stratified_kfold(labels, 4, 9).test == stratified_kfold(labels, 4, 9).test);
    CHECK(stratified_kfold(labels, 4, 9).test != stratified_kfold(labels, 4, 10).test);
}

TEST_CASE("a 125/63 split into ten folds") {
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 188; ++i) labels.push_back(i < 125 ? 0 : 1);
    std::mt19937_64 rng(1);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto plan = stratified_kfold(labels, 10, seed);
        std::vector<bool> seen(188, false);
        for (std::size_t f = 0; f < 10; ++f) {
            std::size_t major = 0, minor = 0;
            for (std::size_t i : plan.test[f]) {
                CHECK_FALSE(seen[i]);
                seen[i] = true;
                (labels[i] == 0 ? major : minor)++;
            }
            CHECK((major == 12 || major == 13));
            CHECK((minor == 6 || minor == 7));
            const auto train = plan.train_indices(f, 188);
            CHECK(train.size() + plan.test[f].size() == 188);
        }
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
    }
}

TEST_CASE("stratified folds reject small classes") {
    CHECK_THROWS(stratified_kfold({0, 0, 0, 1, 1}, 3, 1));
    CHECK_THROWS(stratified_kfold({0, 1}, 1, 1));
}

TEST_CASE("results file") {
    TempDir dir("results");
    const auto path = dir.path / "r.txt";
    FoldRecord a{"MUTAG", 0, 600, 0.95, 0.8, 1.0, 1.0, "abc"};
    FoldRecord b{"MUTAG", 1, 600, 0.97, 0.9, 1.0, 1.0, "abc"};
    write_results({a, b}, path);
    const auto text = slurp(path);
    CHECK(text.find("record=fold dataset=MUTAG fold=0") != std::string::npos);
    CHECK(text.find("mean_test_acc=0.850000 std_test_acc=0.050000") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);

    const auto empty = dir.path / "empty.txt";
    write_results({}, empty);
    CHECK(fs::exists(empty));
    CHECK(fs::file_size(empty) == 0);

    const auto [m, s] = mean_std({0.8, 0.9});
    CHECK(m == doctest::Approx(0.85));
    CHECK(s == doctest::Approx(0.05));
}

TEST_CASE("FNV-1a hash") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("subset keeps labels aligned") {
    Dataset d;
    d.raw_labels = {0, 1};
    for (std::size_t i = 0; i < 5; ++i) {
        d.graphs.push_back(Graph{i + 1, {}, false});
        d.labels.push_back(i % 2);
    }
    const auto s = d.subset({4, 1});
    CHECK(s.graphs[0].n == 5);
    CHECK(s.labels == std::vector<std::size_t>{0, 1});
    CHECK(s.raw_labels == d.raw_labels);
}
