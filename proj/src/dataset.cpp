#include "aggcap/dataset.hpp"
#include "aggcap/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace aggcap {

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("missing file " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    while (!lines.empty() && lines.back().find_first_not_of(" \t") == std::string::npos) lines.pop_back();
    return lines;
}

std::int64_t parse_int(const std::string& text, const std::filesystem::path& path, std::size_t line_no) {
    std::size_t pos = 0;
    std::int64_t v = 0;
    try {
        v = std::stoll(text, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || text.find_first_not_of(" \t", pos) != std::string::npos)
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected an integer, got '" + text + "'");
    return v;
}

} // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    Dataset out{name, {}, {}, raw_labels};
    for (std::size_t i : indices) {
        out.graphs.push_back(graphs.at(i));
        out.labels.push_back(labels.at(i));
    }
    return out;
}

Dataset parse_tu_dataset(const std::filesystem::path& dir, const std::string& name) {
    const auto a_path = dir / (name + "_A.txt");
    const auto ind_path = dir / (name + "_graph_indicator.txt");
    const auto lab_path = dir / (name + "_graph_labels.txt");

    const auto ind_lines = read_lines(ind_path);
    const auto lab_lines = read_lines(lab_path);
    const auto a_lines = read_lines(a_path);

    std::vector<std::int64_t> raw;
    for (std::size_t i = 0; i < lab_lines.size(); ++i) raw.push_back(parse_int(lab_lines[i], lab_path, i + 1));
    const std::size_t num_graphs = raw.size();
    if (num_graphs == 0) throw ParseError(lab_path.string() + ": no graphs");

    // Node v (1-based in the files) lives in graph graph_of[v-1] as local index local_of[v-1].
    std::vector<std::size_t> graph_of, local_of;
    std::vector<std::size_t> sizes(num_graphs, 0);
    for (std::size_t i = 0; i < ind_lines.size(); ++i) {
        const std::int64_t g = parse_int(ind_lines[i], ind_path, i + 1);
        if (g < 1 || static_cast<std::size_t>(g) > num_graphs)
            throw ParseError(ind_path.string() + ":" + std::to_string(i + 1) + ": graph id " + std::to_string(g) +
                             " out of range 1.." + std::to_string(num_graphs));
        graph_of.push_back(static_cast<std::size_t>(g - 1));
        local_of.push_back(sizes[g - 1]++);
    }
    for (std::size_t g = 0; g < num_graphs; ++g)
        if (sizes[g] == 0) throw ParseError(ind_path.string() + ": graph " + std::to_string(g + 1) + " has no nodes");

    std::vector<std::set<std::pair<std::size_t, std::size_t>>> edge_sets(num_graphs);
    for (std::size_t i = 0; i < a_lines.size(); ++i) {
        const auto& line = a_lines[i];
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError(a_path.string() + ":" + std::to_string(i + 1) + ": expected 'u, v'");
        const std::int64_t u = parse_int(line.substr(0, comma), a_path, i + 1);
        const std::int64_t v = parse_int(line.substr(comma + 1), a_path, i + 1);
        for (std::int64_t x : {u, v})
            if (x < 1 || static_cast<std::size_t>(x) > graph_of.size())
                throw ParseError(a_path.string() + ":" + std::to_string(i + 1) + ": node id " + std::to_string(x) +
                                 " out of range 1.." + std::to_string(graph_of.size()));
        const std::size_t gu = graph_of[u - 1], gv = graph_of[v - 1];
        if (gu != gv)
            throw ParseError(a_path.string() + ":" + std::to_string(i + 1) + ": edge (" + std::to_string(u) + ", " +
                             std::to_string(v) + ") crosses graphs " + std::to_string(gu + 1) + " and " +
                             std::to_string(gv + 1));
        std::size_t a = local_of[u - 1], b = local_of[v - 1];
        if (a == b) continue; // self-loops carry no structure for the normalized Laplacian
        if (a > b) std::swap(a, b);
        edge_sets[gu].insert({a, b});
    }

    std::vector<std::int64_t> distinct = raw;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    Dataset data;
    data.name = name;
    data.raw_labels = distinct;
    for (std::size_t g = 0; g < num_graphs; ++g) {
        Graph graph{sizes[g], {}, false};
        for (const auto& [a, b] : edge_sets[g]) graph.edges.push_back({a, b, 1.0});
        data.graphs.push_back(std::move(graph));
        data.labels.push_back(static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), raw[g]) -
                                                       distinct.begin()));
    }
    return data;
}

void write_tu_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream a(dir / (data.name + "_A.txt"));
    std::ofstream ind(dir / (data.name + "_graph_indicator.txt"));
    std::ofstream lab(dir / (data.name + "_graph_labels.txt"));
    if (!a || !ind || !lab) throw std::runtime_error("cannot write dataset to " + dir.string());
    std::size_t offset = 1;
    for (std::size_t g = 0; g < data.size(); ++g) {
        const Graph& graph = data.graphs[g];
        for (std::size_t v = 0; v < graph.n; ++v) ind << g + 1 << "\n";
        for (const auto& e : graph.edges) {
            a << offset + e.i << ", " << offset + e.j << "\n";
            a << offset + e.j << ", " << offset + e.i << "\n";
        }
        lab << data.raw_labels.at(data.labels[g]) << "\n";
        offset += graph.n;
    }
}

std::vector<std::size_t> FoldPlan::train_indices(std::size_t fold, std::size_t total) const {
    std::vector<bool> in_test(total, false);
    for (std::size_t i : test.at(fold)) in_test[i] = true;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < total; ++i)
        if (!in_test[i]) out.push_back(i);
    return out;
}

FoldPlan stratified_kfold(const std::vector<std::size_t>& labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("stratified_kfold: k must be at least 2");
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (const auto& [label, members] : by_class)
        if (members.size() < k)
            throw std::invalid_argument("stratified_kfold: class " + std::to_string(label) + " has " +
                                        std::to_string(members.size()) + " members, fewer than k = " + std::to_string(k));
    FoldPlan plan{k, seed, std::vector<std::vector<std::size_t>>(k)};
    std::mt19937_64 rng(seed);
    std::size_t next = 0;
    for (auto& [label, members] : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t i : members) {
            plan.test[next].push_back(i);
            next = (next + 1) % k;
        }
    }
    for (auto& f : plan.test) std::sort(f.begin(), f.end());
    return plan;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
    if (values.empty()) return {0.0, 0.0};
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / n)};
}

std::string format_record(const FoldRecord& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "record=fold dataset=%s fold=%zu epochs=%zu train_acc=%.6f test_acc=%.6f wall_s=%.3f cpu_s=%.3f "
                  "config_hash=%s",
                  r.dataset.c_str(), r.fold, r.epochs, r.train_accuracy, r.test_accuracy, r.wall_seconds, r.cpu_seconds,
                  r.config_hash.c_str());
    return buf;
}

void write_results(const std::vector<FoldRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot write results to " + path.string());
    if (records.empty()) return;
    std::vector<double> acc;
    for (const auto& r : records) {
        out << format_record(r) << "\n";
        acc.push_back(r.test_accuracy);
    }
    const auto [mean, sd] = mean_std(acc);
    char buf[256];
    std::snprintf(buf, sizeof buf, "record=summary dataset=%s folds=%zu mean_test_acc=%.6f std_test_acc=%.6f config_hash=%s",
                  records.front().dataset.c_str(), records.size(), mean, sd, records.front().config_hash.c_str());
    out << buf << "\n";
    if (!out) throw std::runtime_error("failed writing results to " + path.string());
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace aggcap
