#pragma once

#include "aggcap/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace aggcap {

struct Dataset {
    std::string name;
    std::vector<Graph> graphs;
    std::vector<std::size_t> labels; // 0..num_classes-1
    std::vector<std::int64_t> raw_labels; // raw_labels[c] is the file label of class c

    std::size_t size() const { return graphs.size(); }
    std::size_t num_classes() const { return raw_labels.size(); }
    Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// Reads <dir>/<name>_A.txt, _graph_indicator.txt and _graph_labels.txt.
/// Node and edge label or attribute files are ignored. Throws ParseError
/// naming the file and line on malformed input.
Dataset parse_tu_dataset(const std::filesystem::path& dir, const std::string& name);

/// Writes the three TU files (both edge directions, raw labels).
void write_tu_dataset(const Dataset& data, const std::filesystem::path& dir);

struct FoldPlan {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> test; // sorted indices per fold

    std::vector<std::size_t> train_indices(std::size_t fold, std::size_t total) const;
};

/// Per class: shuffle with the seed, then deal round-robin into k folds.
/// The deal continues across classes, so fold sizes differ by at most 1.
FoldPlan stratified_kfold(const std::vector<std::size_t>& labels, std::size_t k, std::uint64_t seed);

struct FoldRecord {
    std::string dataset;
    std::size_t fold = 0;
    std::size_t epochs = 0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    double wall_seconds = 0.0;
    double cpu_seconds = 0.0;
    std::string config_hash;
};

/// Population mean and standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

/// Appends one key=value line per record plus a summary line (omitted for
/// an empty record list).
void write_results(const std::vector<FoldRecord>& records, const std::filesystem::path& path);
std::string format_record(const FoldRecord& record);

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

} // namespace aggcap
