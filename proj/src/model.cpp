#include "aggcap/model.hpp"

#include "aggcap/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace aggcap {

using nn::Tape;
using nn::Var;

namespace {

const char* kParamNames[] = {"node.conv1.theta", "node.conv1.bias", "node.conv2.theta", "node.conv2.bias",
                             "graph.conv1.theta", "graph.conv1.bias", "graph.conv2.theta", "graph.conv2.bias",
                             "graph.linear.weight", "graph.linear.bias", "head.weight", "head.bias"};

Matrix glorot(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (double& v : m.data) v = dist(rng);
    return m;
}

double thread_cpu_seconds() {
    timespec ts{};
    clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
    return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

// Tapes allocate and free many mid-sized buffers per forward pass. glibc
// serves those above 128 KiB with fresh mmaps by default, and the resulting
// page faults cost more than the arithmetic.
void keep_heap_warm() {
#if defined(__GLIBC__)
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        mallopt(M_TOP_PAD, 64 << 20);
        return true;
    }();
    (void)done;
#endif
}

Var pool(Tape& tape, Var z, std::size_t blocks, const ModelConfig& config) {
    if (config.pooling == Pooling::Sum) return nn::block_sum(tape, z, blocks);
    return nn::block_histogram(tape, z, blocks, config.histogram());
}

} // namespace

// --- config ---------------------------------------------------------------------

std::size_t ModelConfig::m_node() const { return pooling == Pooling::Phist ? channels2 * bins : channels2; }

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw std::invalid_argument(std::string("config: ") + name + " must be positive");
    };
    positive(channels1, "channels1");
    positive(channels2, "channels2");
    positive(samples, "samples");
    positive(realizations, "realizations");
    positive(batch_size, "batch_size");
    positive(epochs, "epochs");
    if (bins < 2) throw std::invalid_argument("config: bins must be at least 2");
    if (num_classes < 2) throw std::invalid_argument("config: num_classes must be at least 2");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("config: learning_rate must be positive");
    if (!(whiten_eps > 0.0)) throw std::invalid_argument("config: whiten_eps must be positive");
    if (kernel == KernelKind::Uniform) throw std::invalid_argument("config: the uniform kernel has no gradient; use triangular or raised_cosine");
}

std::string ModelConfig::to_string() const {
    std::ostringstream out;
    out.precision(17);
    out << "order1=" << order1 << "\norder2=" << order2 << "\nchannels1=" << channels1 << "\nchannels2=" << channels2
        << "\nbins=" << bins << "\nsamples=" << samples << "\nrealizations=" << realizations
        << "\nbatch_size=" << batch_size << "\nlearning_rate=" << learning_rate << "\nepochs=" << epochs
        << "\nnum_classes=" << num_classes
        << "\nmode=" << (mode == SamplingMode::WithReplacement ? "sampling" : "deterministic")
        << "\naggregator=" << (pooling == Pooling::Phist ? "phist" : "sum")
        << "\nkernel=" << (kernel == KernelKind::Triangular ? "triangular" : kernel == KernelKind::RaisedCosine ? "raised_cosine" : "uniform")
        << "\nwhiten_eps=" << whiten_eps << "\n";
    return out.str();
}

std::string ModelConfig::config_hash() const { return fnv1a_hex(to_string()); }

void set_config_field(ModelConfig& c, const std::string& key, const std::string& value) {
    auto bad = [&] { return ParseError("config: bad value '" + value + "' for " + key); };
    auto count = [&](std::size_t& field) {
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            if (value.empty() || value[0] == '-') throw bad();
            v = std::stoull(value, &pos);
        } catch (const std::logic_error&) {
            throw bad();
        }
        if (pos != value.size()) throw bad();
        field = static_cast<std::size_t>(v);
    };
    auto real = [&](double& field) {
        std::size_t pos = 0;
        try {
            field = std::stod(value, &pos);
        } catch (const std::logic_error&) {
            throw bad();
        }
        if (pos != value.size()) throw bad();
    };
    if (key == "order1") count(c.order1);
    else if (key == "order2") count(c.order2);
    else if (key == "channels1") count(c.channels1);
    else if (key == "channels2") count(c.channels2);
    else if (key == "bins") count(c.bins);
    else if (key == "samples") count(c.samples);
    else if (key == "realizations") count(c.realizations);
    else if (key == "batch_size") count(c.batch_size);
    else if (key == "epochs") count(c.epochs);
    else if (key == "num_classes") count(c.num_classes);
    else if (key == "learning_rate") real(c.learning_rate);
    else if (key == "whiten_eps") real(c.whiten_eps);
    else if (key == "mode") {
        if (value == "sampling") c.mode = SamplingMode::WithReplacement;
        else if (value == "deterministic") c.mode = SamplingMode::Deterministic;
        else throw bad();
    } else if (key == "aggregator") {
        if (value == "phist") c.pooling = Pooling::Phist;
        else if (value == "sum") c.pooling = Pooling::Sum;
        else throw bad();
    } else if (key == "kernel") {
        if (value == "triangular") c.kernel = KernelKind::Triangular;
        else if (value == "raised_cosine") c.kernel = KernelKind::RaisedCosine;
        else if (value == "uniform") c.kernel = KernelKind::Uniform;
        else throw bad();
    } else
        throw ParseError("config: unknown key '" + key + "'");
}

ModelConfig read_config(std::istream& in, ModelConfig base) {
    auto trim = [](std::string s) {
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string::npos) return std::string();
        return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
    };
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("config line " + std::to_string(number) + ": expected key=value");
        try {
            set_config_field(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ParseError& e) {
            throw ParseError("config line " + std::to_string(number) + ": " + e.what());
        }
    }
    return base;
}

// --- parameters -------------------------------------------------------------------

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    const std::size_t k1 = config.order1 + 1, k2 = config.order2 + 1;
    const std::size_t c1 = config.channels1, c2 = config.channels2;
    const std::size_t m = config.m_node(), mg = config.m_graph(), C = config.num_classes;
    ModelParams p;
    auto add = [&](Matrix value) { p.tensors.emplace_back(kParamNames[p.tensors.size()], std::move(value)); };
    add(glorot(k1, c1, k1, c1, rng));
    add(Matrix(1, c1));
    add(glorot(k2 * c1, c2, k2 * c1, c2, rng));
    add(Matrix(1, c2));
    add(glorot(k1 * m, c1, k1 * m, c1, rng));
    add(Matrix(1, c1));
    add(glorot(k2 * c1, c2, k2 * c1, c2, rng));
    add(Matrix(1, c2));
    add(glorot(mg, m, m, mg, rng));
    add(Matrix(1, mg));
    add(glorot(C, mg, mg, C, rng));
    add(Matrix(1, C));
    return p;
}

std::vector<nn::Parameter*> ModelParams::pointers() {
    std::vector<nn::Parameter*> out;
    for (auto& t : tensors) out.push_back(&t);
    return out;
}

std::vector<const nn::Parameter*> ModelParams::pointers() const {
    std::vector<const nn::Parameter*> out;
    for (const auto& t : tensors) out.push_back(&t);
    return out;
}

std::size_t ModelParams::count() const {
    std::size_t total = 0;
    for (const auto& t : tensors) total += t.value.size();
    return total;
}

const nn::Parameter& ModelParams::get(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw std::out_of_range("no parameter named " + name);
}

nn::Parameter& ModelParams::get(const std::string& name) {
    return const_cast<nn::Parameter&>(static_cast<const ModelParams&>(*this).get(name));
}

BoundParams bind(Tape& tape, ModelParams& params, bool trainable) {
    if (params.tensors.size() != std::size(kParamNames)) throw std::invalid_argument("bind: incomplete parameter set");
    BoundParams b;
    for (auto& t : params.tensors) b.vars.push_back(trainable ? tape.parameter(t) : tape.constant_view(t));
    return b;
}

// --- forward ------------------------------------------------------------------------

Var node_embeddings(Tape& tape, const SpectralOperator& op, std::span<const std::size_t> nodes, const BoundParams& p,
                    const ModelConfig& config, ForwardTrace* trace) {
    if (nodes.empty()) throw std::invalid_argument("node_embeddings: no nodes requested");
    Var x = tape.constant(impulse_stack(op.n(), nodes));
    Var h = nn::relu(tape, nn::cheb_conv(tape, op, config.order1, x, p.node_theta1(), p.node_bias1()));
    h = nn::cheb_conv(tape, op, config.order2, h, p.node_theta2(), p.node_bias2());
    // Statistics pooled over every requested node's response.
    Var w = nn::whiten_columns(tape, h, config.whiten_eps);
    Var z = nn::tanh(tape, w);
    Var e = pool(tape, z, nodes.size(), config);
    if (trace) {
        trace->node_pre_tanh = w;
        trace->node_embeddings = e;
    }
    return e;
}

Var graph_embedding(Tape& tape, const SpectralOperator& op, Var embeddings, std::span<const std::size_t> rows,
                    const BoundParams& p, const ModelConfig& config, ForwardTrace* trace) {
    if (tape.value(embeddings).cols != config.m_node())
        throw std::invalid_argument("graph_embedding: embeddings have " + std::to_string(tape.value(embeddings).cols) +
                                    " columns, expected m_node = " + std::to_string(config.m_node()));
    Var x = nn::scatter_add_rows(tape, embeddings, std::vector<std::size_t>(rows.begin(), rows.end()), op.n());
    Var h = nn::relu(tape, nn::cheb_conv(tape, op, config.order1, x, p.graph_theta1(), p.graph_bias1()));
    h = nn::cheb_conv(tape, op, config.order2, h, p.graph_theta2(), p.graph_bias2());
    Var w = nn::whiten_columns(tape, h, config.whiten_eps);
    Var z = nn::tanh(tape, w);
    Var e = nn::linear(tape, pool(tape, z, 1, config), p.linear_weight(), p.linear_bias());
    if (trace) {
        trace->graph_input = x;
        trace->graph_pre_tanh = w;
        trace->graph_embedding = e;
    }
    return e;
}

std::vector<std::size_t> draw_nodes(std::size_t n, const ModelConfig& config, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("draw_nodes: empty graph");
    std::vector<std::size_t> draws;
    if (config.mode == SamplingMode::Deterministic) {
        draws.resize(n);
        std::iota(draws.begin(), draws.end(), 0);
        return draws;
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    for (std::size_t i = 0; i < config.samples; ++i) draws.push_back(dist(rng));
    return draws;
}

Var forward(Tape& tape, const SpectralOperator& op, const BoundParams& params, const ModelConfig& config,
            std::uint64_t seed, ForwardTrace* trace) {
    const auto draws = draw_nodes(op.n(), config, seed);
    std::vector<std::size_t> distinct = draws;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    Var emb = node_embeddings(tape, op, distinct, params, config, trace);
    std::vector<std::size_t> position(op.n(), 0);
    for (std::size_t k = 0; k < distinct.size(); ++k) position[distinct[k]] = k;
    std::vector<std::size_t> picks;
    picks.reserve(draws.size());
    for (std::size_t v : draws) picks.push_back(position[v]);
    // Row k of `drawn` is the embedding of draws[k].
    const bool identity = draws == distinct;
    Var drawn = identity ? emb : nn::row_select(tape, emb, picks);

    Var e = graph_embedding(tape, op, drawn, draws, params, config, trace);
    if (trace) {
        trace->draws = draws;
        trace->distinct_nodes = distinct;
    }
    return nn::linear(tape, e, params.head_weight(), params.head_bias());
}

Matrix forward_logits(const Graph& g, ModelParams& params, const ModelConfig& config, std::uint64_t seed) {
    const auto op = normalized_laplacian(g);
    Tape tape;
    const auto bound = bind(tape, params, false);
    return tape.value(forward(tape, op, bound, config, seed));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    auto mix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    return mix(mix(mix(base) ^ a) ^ b);
}

Matrix mean_logits(const Graph& g, ModelParams& params, const ModelConfig& config, std::uint64_t base_seed) {
    keep_heap_warm();
    const auto op = normalized_laplacian(g);
    const std::size_t r = config.mode == SamplingMode::Deterministic ? 1 : config.realizations;
    Matrix total(1, config.num_classes);
    for (std::size_t k = 0; k < r; ++k) {
        Tape tape;
        const auto bound = bind(tape, params, false);
        const auto& logits = tape.value(forward(tape, op, bound, config, derive_seed(base_seed, k)));
        for (std::size_t c = 0; c < total.cols; ++c) total.data[c] += logits.data[c];
    }
    for (double& v : total.data) v /= static_cast<double>(r);
    return total;
}

std::size_t predict(const Graph& g, ModelParams& params, const ModelConfig& config, std::uint64_t base_seed) {
    const Matrix logits = mean_logits(g, params, config, base_seed);
    return static_cast<std::size_t>(std::max_element(logits.data.begin(), logits.data.end()) - logits.data.begin());
}

// --- training --------------------------------------------------------------------------

TrainResult train(const Dataset& data, const ModelConfig& config, std::uint64_t seed, const EpochCallback& on_epoch) {
    config.validate();
    keep_heap_warm();
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    for (std::size_t label : data.labels)
        if (label >= config.num_classes)
            throw std::invalid_argument("train: label " + std::to_string(label) + " out of range for " +
                                        std::to_string(config.num_classes) + " classes");
    std::vector<SpectralOperator> ops;
    ops.reserve(data.size());
    for (const auto& g : data.graphs) ops.push_back(normalized_laplacian(g));

    TrainResult result{ModelParams::init(config, derive_seed(seed, 0x1417)), {}};
    auto params = result.params.pointers();
    nn::AdamState adam;
    adam.lr = config.learning_rate;

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(derive_seed(seed, 0x5eed, epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const double weight = 1.0 / static_cast<double>(end - start);
            for (auto* p : params) p->zero_grad();
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t gi = order[k];
                Tape tape;
                const auto bound = bind(tape, result.params, true);
                Var logits = forward(tape, ops[gi], bound, config, derive_seed(seed, epoch + 1, gi + 1));
                Var loss = nn::softmax_cross_entropy(tape, logits, data.labels[gi]);
                tape.backward(nn::scale(tape, loss, weight));
                loss_sum += tape.value(loss).data[0];
                const auto& z = tape.value(logits).data;
                if (static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) == data.labels[gi]) ++correct;
            }
            nn::adam_step(params, adam);
        }
        EpochMetrics m{epoch, loss_sum / static_cast<double>(data.size()),
                       static_cast<double>(correct) / static_cast<double>(data.size())};
        result.history.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return result;
}

double accuracy(const Dataset& data, ModelParams& params, const ModelConfig& config, std::uint64_t base_seed) {
    if (data.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (predict(data.graphs[i], params, config, derive_seed(base_seed, i)) == data.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double CvResult::mean_gap() const {
    if (folds.empty()) return 0.0;
    double total = 0.0;
    for (const auto& f : folds) total += f.train_accuracy - f.test_accuracy;
    return total / static_cast<double>(folds.size());
}

CvResult cross_validate(const Dataset& data, const ModelConfig& config, std::uint64_t seed, const CvOptions& options) {
    config.validate();
    const FoldPlan plan = stratified_kfold(data.labels, options.k, seed);
    std::vector<std::size_t> folds = options.only_folds;
    if (folds.empty()) {
        folds.resize(options.k);
        std::iota(folds.begin(), folds.end(), 0);
    }
    for (std::size_t f : folds)
        if (f >= options.k) throw std::invalid_argument("cross_validate: fold " + std::to_string(f) + " out of range");

    std::vector<FoldRecord> records(folds.size());
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    auto worker = [&] {
        for (std::size_t slot; (slot = next++) < folds.size();) {
            try {
                const std::size_t fold = folds[slot];
                const auto wall0 = std::chrono::steady_clock::now();
                const double cpu0 = thread_cpu_seconds();
                const Dataset train_set = data.subset(plan.train_indices(fold, data.size()));
                const Dataset test_set = data.subset(plan.test[fold]);
                const std::uint64_t fold_seed = derive_seed(seed, 0xf01d, fold);
                auto on_epoch = [&](const EpochMetrics& m) {
                    if (!options.on_epoch) return;
                    std::lock_guard lock(mu);
                    options.on_epoch(fold, m);
                };
                TrainResult trained = train(train_set, config, fold_seed, on_epoch);
                FoldRecord rec;
                rec.dataset = data.name;
                rec.fold = fold;
                rec.epochs = config.epochs;
                rec.test_accuracy = accuracy(test_set, trained.params, config, derive_seed(fold_seed, 0x7e57));
                rec.train_accuracy = accuracy(train_set, trained.params, config, derive_seed(fold_seed, 0x7a19));
                rec.cpu_seconds = thread_cpu_seconds() - cpu0;
                rec.wall_seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
                rec.config_hash = config.config_hash();
                std::lock_guard lock(mu);
                records[slot] = rec;
                if (options.on_fold) options.on_fold(rec);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                next = folds.size();
            }
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, folds.size()));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    CvResult result;
    result.folds = std::move(records);
    std::vector<double> test, train;
    for (const auto& r : result.folds) {
        test.push_back(r.test_accuracy);
        train.push_back(r.train_accuracy);
    }
    std::tie(result.mean_test, result.std_test) = mean_std(test);
    result.mean_train = mean_std(train).first;
    return result;
}

} // namespace aggcap
