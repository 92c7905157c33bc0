#pragma once

#include "aggcap/aggregators.hpp"
#include "aggcap/autodiff.hpp"
#include "aggcap/dataset.hpp"
#include "aggcap/graph.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace aggcap {

enum class SamplingMode { WithReplacement, Deterministic };
enum class Pooling { Phist, Sum };

struct ModelConfig {
    std::size_t order1 = 4;
    std::size_t order2 = 4;
    std::size_t channels1 = 16;
    std::size_t channels2 = 24;
    std::size_t bins = 8;
    std::size_t samples = 32;
    std::size_t realizations = 10;
    std::size_t batch_size = 8;
    double learning_rate = 3e-4;
    std::size_t epochs = 600;
    std::size_t num_classes = 2;
    SamplingMode mode = SamplingMode::WithReplacement;
    Pooling pooling = Pooling::Phist;
    KernelKind kernel = KernelKind::Triangular;
    double whiten_eps = 1e-6; // floor on the whitening standard deviation

    /// c2*b for phist pooling, c2 for sum pooling.
    std::size_t m_node() const;
    std::size_t m_graph() const { return m_node(); }
    HistogramSpec histogram() const { return HistogramSpec::training(bins, kernel); }
    /// Throws std::invalid_argument naming the first bad field.
    void validate() const;
    /// Canonical "key=value" lines, the basis of config_hash().
    std::string to_string() const;
    std::string config_hash() const;
};

/// Sets one field by its to_string() key. Throws ParseError on unknown keys
/// or malformed values.
void set_config_field(ModelConfig& config, const std::string& key, const std::string& value);
/// key=value lines ('#' comments, blank lines allowed) applied over `base`.
ModelConfig read_config(std::istream& in, ModelConfig base = {});

/// Parameters in a fixed order: node conv1 (theta, bias), node conv2, graph
/// conv1, graph conv2, linear (weight m_graph x m_node, bias), head
/// (weight C x m_graph, bias).
struct ModelParams {
    std::vector<nn::Parameter> tensors;

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);
    std::vector<nn::Parameter*> pointers();
    std::vector<const nn::Parameter*> pointers() const;
    std::size_t count() const;
    const nn::Parameter& get(const std::string& name) const;
    nn::Parameter& get(const std::string& name);
};

/// Parameter leaves bound to one tape, same order as ModelParams::tensors.
struct BoundParams {
    std::vector<nn::Var> vars;
    nn::Var node_theta1() const { return vars[0]; }
    nn::Var node_bias1() const { return vars[1]; }
    nn::Var node_theta2() const { return vars[2]; }
    nn::Var node_bias2() const { return vars[3]; }
    nn::Var graph_theta1() const { return vars[4]; }
    nn::Var graph_bias1() const { return vars[5]; }
    nn::Var graph_theta2() const { return vars[6]; }
    nn::Var graph_bias2() const { return vars[7]; }
    nn::Var linear_weight() const { return vars[8]; }
    nn::Var linear_bias() const { return vars[9]; }
    nn::Var head_weight() const { return vars[10]; }
    nn::Var head_bias() const { return vars[11]; }
};

/// trainable = false records the values as constants (no gradients).
BoundParams bind(nn::Tape& tape, ModelParams& params, bool trainable);

/// Taps into intermediate activations, for checks and diagnostics.
struct ForwardTrace {
    std::vector<std::size_t> draws;          // sampled node indices, in draw order
    std::vector<std::size_t> distinct_nodes; // sorted
    nn::Var node_pre_tanh{};                 // whitened f_node conv output
    nn::Var node_embeddings{};
    nn::Var graph_input{};
    nn::Var graph_pre_tanh{};
    nn::Var graph_embedding{};
};

/// Embeddings of the given nodes (one row each, |nodes| x m_node).
nn::Var node_embeddings(nn::Tape& tape, const SpectralOperator& op, std::span<const std::size_t> nodes,
                        const BoundParams& params, const ModelConfig& config, ForwardTrace* trace = nullptr);

/// e_G (1 x m_graph) from embeddings: row k of `embeddings` belongs to node
/// rows[k]; repeated rows add.
nn::Var graph_embedding(nn::Tape& tape, const SpectralOperator& op, nn::Var embeddings,
                        std::span<const std::size_t> rows, const BoundParams& params, const ModelConfig& config,
                        ForwardTrace* trace = nullptr);

/// Node draws for one realization: s uniform draws with replacement, or
/// every node once in deterministic mode.
std::vector<std::size_t> draw_nodes(std::size_t n, const ModelConfig& config, std::uint64_t seed);

/// Logits (1 x C) for one realization.
nn::Var forward(nn::Tape& tape, const SpectralOperator& op, const BoundParams& params, const ModelConfig& config,
                std::uint64_t seed, ForwardTrace* trace = nullptr);

/// Convenience: builds the operator and a constant tape.
Matrix forward_logits(const Graph& g, ModelParams& params, const ModelConfig& config, std::uint64_t seed);

/// Logits averaged over `realizations` seeded forwards (a single forward in
/// deterministic mode, where all realizations coincide).
Matrix mean_logits(const Graph& g, ModelParams& params, const ModelConfig& config, std::uint64_t base_seed);
/// argmax of mean_logits, lowest index on ties.
std::size_t predict(const Graph& g, ModelParams& params, const ModelConfig& config, std::uint64_t base_seed);

/// Sampling seed for (epoch, graph) derived from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0; // on the sampled training forwards
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

TrainResult train(const Dataset& data, const ModelConfig& config, std::uint64_t seed,
                  const EpochCallback& on_epoch = nullptr);

double accuracy(const Dataset& data, ModelParams& params, const ModelConfig& config, std::uint64_t base_seed);

struct CvResult {
    std::vector<FoldRecord> folds;
    double mean_test = 0.0;
    double std_test = 0.0;
    double mean_train = 0.0;
    /// Mean over folds of train accuracy minus test accuracy.
    double mean_gap() const;
};

struct CvOptions {
    std::size_t k = 10;
    std::size_t threads = 1;
    /// Restrict to these folds (empty = all).
    std::vector<std::size_t> only_folds;
    std::function<void(std::size_t fold, const EpochMetrics&)> on_epoch;
    std::function<void(const FoldRecord&)> on_fold;
};

CvResult cross_validate(const Dataset& data, const ModelConfig& config, std::uint64_t seed, const CvOptions& options = {});

} // namespace aggcap
