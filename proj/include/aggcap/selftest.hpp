#pragma once

#include "aggcap/aggregators.hpp"
#include "aggcap/graph.hpp"
#include "aggcap/model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace aggcap {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

/// Dense integer copy of A, one row per (axis, bin).
using IntMatrix = std::vector<std::vector<std::int64_t>>;
IntMatrix dense_projection(const ProjectionMatrix& a);

/// Checks |S*| = b*d, rank A[:, S*] = rank A = b*d - d + 1, and that every
/// S* column of A equals vec(phist) of the singleton at that cell's center.
SuiteResult check_support_rank(std::size_t max_dim, std::size_t max_bins,
                               const std::function<void(IntMatrix&, std::size_t dim, std::size_t bins)>& mutate = nullptr);

/// vec(phist(Y)) == A h(Y) on random normalized multisets.
SuiteResult check_projection_identity(std::size_t trials, std::uint64_t seed);

/// Voronoi-sum on a cover with cells of diameter <= delta is delta-injective
/// on a 2*delta grid family; identity-phi sum is not.
SuiteResult check_voronoi_injectivity(std::size_t max_cardinality);

/// certify_sum and certify_phist on random pairwise separated families.
SuiteResult check_certificates(std::size_t trials, std::uint64_t seed);

/// Finite differences against backward() for each op and for the model loss.
SuiteResult check_gradients(std::size_t trials, std::uint64_t seed);

/// Random multisets of cardinality 1..max_card in [-1, 1]^dim, pairwise not
/// delta-equivalent under l-infinity.
std::vector<Multiset> random_separated_family(std::size_t t, std::size_t dim, std::size_t max_card, double delta,
                                              std::uint64_t seed);

/// A small model configuration for checks on toy graphs.
ModelConfig toy_config(SamplingMode mode = SamplingMode::Deterministic);

/// Model loss on graph g with the given parameter values as tape leaves.
nn::LossBuilder model_loss(const Graph& g, std::size_t label, const ModelConfig& config, std::uint64_t seed);

struct SelftestOptions {
    bool quick = false;
    std::uint64_t seed = 1;
    bool flip_projection_sign = false; // mutation smoke test
};

std::vector<SuiteResult> run_selftest(const SelftestOptions& options);

} // namespace aggcap
