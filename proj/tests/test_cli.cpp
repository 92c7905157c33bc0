#include "aggcap/dataset.hpp"
#include "aggcap/graph.hpp"

#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(AGGCAP_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

struct Scratch {
    fs::path dir;
    Scratch() : dir(fs::temp_directory_path() / ("aggcap_cli_" + std::to_string(::getpid()))) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string file(const std::string& name, const std::string& text) const {
        std::ofstream(dir / name) << text;
        return (dir / name).string();
    }
};

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

} // namespace

TEST_CASE("bound") {
    auto r = run("bound --delta 0.25 --dim 2");
    CHECK(r.code == 0);
    CHECK(r.out.rfind("4\n", 0) == 0);
    CHECK(contains(r.out, "at least"));
    r = run("bound --delta 0.25 --dim 10");
    CHECK(r.code == 0);
    CHECK(r.out.rfind("1024\n", 0) == 0);
    CHECK(run("bound --delta 0.25 --dim 2 --vol-domain 4 --vol-ball 4").out.rfind("4\n", 0) == 0);
    CHECK(run("bound --delta abc --dim 2").code == 2);
    CHECK(run("bound --dim 2").code == 2);
    CHECK(run("").code == 2);
    CHECK(run("--help").code == 0);
}

TEST_CASE("certify") {
    Scratch s;
    const auto two = s.file("two.txt", "dim 1\n-0.9\n---\ndim 1\n0.9\n");
    auto r = run("certify --multisets " + two + " --delta 0.5 --aggregator sum");
    CHECK(r.code == 0);
    CHECK(contains(r.out, "verdict: distinct"));
    r = run("certify --multisets " + two + " --delta 0.5 --aggregator phist");
    CHECK(r.code == 0);
    CHECK(contains(r.out, "support set (S*)"));

    const auto dup = s.file("dup.txt", "dim 1\n0.3\n---\ndim 1\n0.3\n");
    r = run("certify --multisets " + dup + " --delta 0.1");
    CHECK(r.code == 1);
    CHECK(contains(r.out, "#0 and #1"));

    std::string many;
    for (int k = 1; k <= 4; ++k) {
        if (k > 1) many += "---\n";
        many += "dim 1\n";
        for (int i = 0; i < k; ++i) many += "0\n";
    }
    r = run("certify --multisets " + s.file("many.txt", many) + " --delta 1 --aggregator phist");
    CHECK(r.code == 1);
    CHECK(contains(r.out, "exceeds b*d"));

    CHECK(run("certify --multisets " + s.file("bad.txt", "dim 1\nabc\n") + " --delta 0.5").code == 2);
    CHECK(run("certify --multisets " + (s.dir / "nope.txt").string() + " --delta 0.5").code == 2);
    CHECK(run("certify --multisets " + two + " --delta 0.5 --aggregator max").code == 2);
}

TEST_CASE("phist and amatrix") {
    Scratch s;
    const auto f = s.file("x.txt", "dim 1\n0.3\n-0.2\n0.9\n");
    auto r = run("phist --multisets " + f + " --bins 2");
    CHECK(r.code == 0);
    CHECK(r.out == "1 2\n---\n");
    r = run("amatrix --dim 2 --bins 2");
    CHECK(r.code == 0);
    CHECK(r.out.rfind("# 4 x 4\n0 0\n0 1\n", 0) == 0);
}

TEST_CASE("train and cv on a small synthetic dataset") {
    Scratch s;
    aggcap::Dataset d;
    d.name = "SYN";
    d.raw_labels = {-1, 1};
    for (std::size_t i = 0; i < 8; ++i) {
        d.graphs.push_back(aggcap::random_graph(5 + i % 3, 0.5, i + 1));
        d.labels.push_back(i % 2);
    }
    aggcap::write_tu_dataset(d, s.dir / "SYN");
    const std::string common = "--dataset " + (s.dir / "SYN").string() +
                               " --name SYN --set epochs=2 --set channels1=3 --set channels2=4 --set bins=4 --set order1=2 "
                               "--set order2=2 --set realizations=2 --seed 3";
    const auto ckpt = (s.dir / "model.bin").string();
    auto r = run("train " + common + " --checkpoint " + ckpt);
    CHECK(r.code == 0);
    CHECK(contains(r.out, "record=fold dataset=SYN"));
    CHECK(fs::exists(ckpt));

    const auto results = (s.dir / "cv.txt").string();
    r = run("cv " + common + " --folds 2 --threads 2 --out " + results + " --mode deterministic");
    CHECK(r.code == 0);
    CHECK(contains(r.out, "SYN: test accuracy"));
    std::ifstream in(results);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    CHECK(contains(text, "record=summary dataset=SYN folds=2"));

    const auto cfg = s.file("cfg.txt", "# toy\nepochs=1\nbins=3\n");
    CHECK(run("train --dataset " + (s.dir / "SYN").string() + " --name SYN --config " + cfg +
              " --set channels1=2 --set channels2=2")
              .code == 0);

    CHECK(run("train " + common + " --set nonsense=1").code == 2);
    CHECK(run("train " + common + " --set bins=1").code == 2);
    CHECK(run("train --dataset " + (s.dir / "none").string() + " --name SYN").code == 2);
    CHECK(run("cv " + common + " --folds 5").code == 1);
}

TEST_CASE("selftest") {
    const auto start = std::chrono::steady_clock::now();
    auto r = run("selftest --quick");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(r.code == 0);
    CHECK(contains(r.out, "PASS support-rank"));
    CHECK_FALSE(contains(r.out, "FAIL"));
    CHECK(secs < 60.0);

    r = run("selftest --quick --flip-projection-sign");
    CHECK(r.code == 1);
    CHECK(contains(r.out, "FAIL support-rank"));
}
