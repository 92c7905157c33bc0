#include "aggcap/capacity.hpp"
#include "aggcap/errors.hpp"
#include "aggcap/model.hpp"
#include "aggcap/selftest.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>

using namespace aggcap;

namespace {

std::vector<Multiset> load_multisets(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    try {
        return read_multisets(in);
    } catch (const std::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

struct RunOptions {
    std::string dataset;
    std::string name;
    std::string config_path;
    std::string out;
    std::string checkpoint;
    std::uint64_t seed = 0;
    std::vector<std::string> overrides; // key=value
    std::string mode;
    std::string aggregator;
    std::string kernel;
    std::size_t threads = 1;
    std::size_t folds = 10;
    bool verbose = false;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("--dataset", o.dataset, "Directory holding <name>_A.txt etc. (default $AGGCAP_DATA_ROOT/<name>)");
    cmd->add_option("--name", o.name, "Dataset name, e.g. MUTAG")->required();
    cmd->add_option("--config", o.config_path, "key=value config file");
    cmd->add_option("--seed", o.seed, "Seed for every random choice");
    cmd->add_option("--out", o.out, "Append result records to this file");
    cmd->add_option("--set", o.overrides, "Override one config field, key=value (repeatable)");
    cmd->add_option("--mode", o.mode, "sampling or deterministic")->check(CLI::IsMember({"sampling", "deterministic"}));
    cmd->add_option("--aggregator", o.aggregator, "phist or sum")->check(CLI::IsMember({"phist", "sum"}));
    cmd->add_option("--kernel", o.kernel, "triangular or raised_cosine")
        ->check(CLI::IsMember({"triangular", "raised_cosine"}));
    cmd->add_flag("--verbose", o.verbose, "Print per-epoch loss");
}

std::filesystem::path dataset_dir(const RunOptions& o) {
    if (!o.dataset.empty()) return o.dataset;
    if (const char* root = std::getenv("AGGCAP_DATA_ROOT")) return std::filesystem::path(root) / o.name;
    throw ParseError("no --dataset given and AGGCAP_DATA_ROOT is unset");
}

ModelConfig resolve_config(const RunOptions& o, const Dataset& data) {
    ModelConfig config;
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        if (!in) throw ParseError(o.config_path + ": cannot open");
        config = read_config(in);
    }
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParseError("--set expects key=value, got '" + kv + "'");
        set_config_field(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!o.mode.empty()) set_config_field(config, "mode", o.mode);
    if (!o.aggregator.empty()) set_config_field(config, "aggregator", o.aggregator);
    if (!o.kernel.empty()) set_config_field(config, "kernel", o.kernel);
    config.num_classes = data.num_classes();
    try {
        config.validate();
    } catch (const std::invalid_argument& e) {
        throw ParseError(e.what());
    }
    return config;
}

int cmd_bound(double delta, std::size_t dim, double vol_domain, double vol_ball) {
    const double bound = injectivity_lower_bound(delta, dim, vol_domain, vol_ball);
    std::cout << std::setprecision(17) << bound << "\n";
    std::cout << "any delta-injective aggregation function on this domain needs at least " << std::setprecision(6)
              << bound << " outputs\n";
    return 0;
}

int cmd_certify(const std::string& path, double delta, const std::string& aggregator) {
    const auto family = load_multisets(path);
    const auto cert = aggregator == "sum" ? certify_sum(family, delta) : certify_phist(family, delta);
    write_certificate_report(std::cout, cert);
    return cert.distinct ? 0 : 1;
}

int cmd_phist(const std::string& path, std::size_t bins, const std::string& kernel) {
    const auto spec = kernel == "uniform" ? HistogramSpec::theory(bins)
                                          : HistogramSpec::training(bins, kernel == "raised_cosine"
                                                                                ? KernelKind::RaisedCosine
                                                                                : KernelKind::Triangular);
    for (const auto& m : load_multisets(path)) {
        const Matrix h = phist(m, spec, PhiFunction::identity(m.dim()));
        std::cout << std::setprecision(17);
        for (std::size_t i = 0; i < h.rows; ++i) {
            for (std::size_t l = 0; l < h.cols; ++l) std::cout << (l ? " " : "") << h(i, l);
            std::cout << "\n";
        }
        std::cout << "---\n";
    }
    return 0;
}

int cmd_amatrix(std::size_t dim, std::size_t bins) {
    const auto a = build_projection_matrix(dim, bins);
    std::cout << "# " << a.rows << " x " << a.cols << "\n";
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c : a.row_columns[r]) std::cout << r << " " << c << "\n";
    return 0;
}

int cmd_train(const RunOptions& o) {
    const auto data = parse_tu_dataset(dataset_dir(o), o.name);
    const auto config = resolve_config(o, data);
    const auto start = std::chrono::steady_clock::now();
    auto result = train(data, config, o.seed, [&](const EpochMetrics& m) {
        if (o.verbose) std::cout << "epoch " << m.epoch << " loss " << m.loss << " acc " << m.accuracy << "\n";
    });
    FoldRecord rec;
    rec.dataset = data.name;
    rec.epochs = config.epochs;
    rec.train_accuracy = accuracy(data, result.params, config, derive_seed(o.seed, 0xe7a1));
    rec.test_accuracy = rec.train_accuracy;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rec.config_hash = config.config_hash();
    std::cout << format_record(rec) << "\n";
    if (!o.out.empty()) write_results({rec}, o.out);
    if (!o.checkpoint.empty()) {
        auto ptrs = std::as_const(result.params).pointers();
        nn::save_checkpoint(o.checkpoint, ptrs);
    }
    return 0;
}

int cmd_cv(const RunOptions& o) {
    const auto data = parse_tu_dataset(dataset_dir(o), o.name);
    const auto config = resolve_config(o, data);
    CvOptions cv;
    cv.k = o.folds;
    cv.threads = o.threads;
    if (o.verbose)
        cv.on_epoch = [](std::size_t fold, const EpochMetrics& m) {
            std::cerr << "fold " << fold << " epoch " << m.epoch << " loss " << m.loss << "\n";
        };
    cv.on_fold = [](const FoldRecord& r) { std::cout << format_record(r) << std::endl; };
    const auto start = std::chrono::steady_clock::now();
    const auto result = cross_validate(data, config, o.seed, cv);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.out.empty()) write_results(result.folds, o.out);
    std::cout << std::fixed << std::setprecision(2) << data.name << ": test accuracy " << 100.0 * result.mean_test
              << " +/- " << 100.0 * result.std_test << " %, train " << 100.0 * result.mean_train << " %, gap "
              << 100.0 * result.mean_gap() << " pp, wall " << wall << " s\n";
    return 0;
}

int cmd_selftest(const SelftestOptions& options) {
    bool ok = true;
    for (const auto& r : run_selftest(options)) {
        ok = ok && r.passed;
        std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(22) << r.name << std::right
                  << std::fixed << std::setprecision(2) << std::setw(8) << r.seconds << " s  " << r.detail << "\n";
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Aggregation capacity lab and structural graph classifier"};
    app.require_subcommand(1);

    double delta = 0.0, vol_domain = 1.0, vol_ball = 1.0;
    std::size_t dim = 0, bins = 0;
    auto* bound = app.add_subcommand("bound", "Minimum output count of a delta-injective aggregator");
    bound->add_option("--delta", delta)->required()->check(CLI::PositiveNumber);
    bound->add_option("--dim", dim)->required()->check(CLI::PositiveNumber);
    bound->add_option("--vol-domain", vol_domain, "Volume of the domain")->check(CLI::PositiveNumber);
    bound->add_option("--vol-ball", vol_ball, "Volume of the unit ball")->check(CLI::PositiveNumber);

    std::string multisets, aggregator = "sum", kernel = "uniform";
    auto* certify = app.add_subcommand("certify", "Construct phi separating a multiset family");
    certify->add_option("--multisets", multisets, "Fixture file")->required();
    certify->add_option("--delta", delta)->required()->check(CLI::PositiveNumber);
    certify->add_option("--aggregator", aggregator)->check(CLI::IsMember({"sum", "phist"}));

    auto* phist_cmd = app.add_subcommand("phist", "Print projective histograms of fixture multisets");
    phist_cmd->add_option("--multisets", multisets)->required();
    phist_cmd->add_option("--bins", bins)->required()->check(CLI::Range(1, 1 << 20));
    phist_cmd->add_option("--kernel", kernel)->check(CLI::IsMember({"uniform", "triangular", "raised_cosine"}));

    auto* amatrix = app.add_subcommand("amatrix", "Dump the projection matrix A as (row col) pairs");
    amatrix->add_option("--dim", dim)->required()->check(CLI::Range(1, 16));
    amatrix->add_option("--bins", bins)->required()->check(CLI::Range(1, 1 << 20));

    RunOptions train_opts, cv_opts;
    auto* train_cmd = app.add_subcommand("train", "Train on a whole TU dataset");
    add_run_options(train_cmd, train_opts);
    train_cmd->add_option("--checkpoint", train_opts.checkpoint, "Write trained parameters here");

    auto* cv_cmd = app.add_subcommand("cv", "Stratified k-fold cross-validation");
    add_run_options(cv_cmd, cv_opts);
    cv_cmd->add_option("--threads", cv_opts.threads, "Folds trained in parallel")->check(CLI::PositiveNumber);
    cv_cmd->add_option("--folds", cv_opts.folds, "k")->check(CLI::Range(2, 1000));

    SelftestOptions st;
    auto* selftest = app.add_subcommand("selftest", "Run the brute-force and property suites");
    selftest->add_flag("--quick", st.quick, "Reduced sizes");
    selftest->add_option("--seed", st.seed);
    selftest->add_flag("--flip-projection-sign", st.flip_projection_sign,
                       "Negate one entry of A before the support-rank suite (must make it fail)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*bound) return cmd_bound(delta, dim, vol_domain, vol_ball);
        if (*certify) return cmd_certify(multisets, delta, aggregator);
        if (*phist_cmd) return cmd_phist(multisets, bins, kernel);
        if (*amatrix) return cmd_amatrix(dim, bins);
        if (*train_cmd) return cmd_train(train_opts);
        if (*cv_cmd) return cmd_cv(cv_opts);
        if (*selftest) return cmd_selftest(st);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
