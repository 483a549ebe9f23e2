#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "gce/autodiff.hpp"
#include "gce/graph.hpp"
#include "gce/rng.hpp"

namespace gce {

struct MaskConfig {
  double node_rate = 0.1;
  double edge_rate = 0.1;      // fraction of original undirected edges masked
  std::size_t pseudo_edges = 5;  // partners per masked node
};

struct MaskPlan {
  std::vector<std::size_t> masked_nodes;                        // sorted
  std::vector<std::pair<std::size_t, std::size_t>> pseudo_edges;  // (masked node, partner)
  std::vector<std::size_t> masked_edges;  // original undirected edge ids, sorted
  std::uint64_t seed = 0;
};

/// Ground truth (pseudo-edges labelled no_bond) and its corrupted twin; both
/// share node count and edge list.
struct MaskedPair {
  Graph ground_truth;
  Graph masked;
  MaskPlan plan;
};

// K = max(1, round(rate * n)) for rate > 0, else 0.
std::size_t masked_node_count(std::size_t n, double rate);

struct NodeMask {
  Tensor x;
  std::vector<std::size_t> omega;
};

// Zeroes K distinct rows chosen uniformly.
NodeMask mask_nodes(const Graph& g, double rate, Rng& rng);

struct PseudoEdges {
  Graph augmented;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

// Connects each node of `omega` to up to `per_node` random unconnected
// partners; the new edges are appended (both directions) with no_bond.
PseudoEdges add_pseudo_edges(const Graph& g, std::span<const std::size_t> omega, std::size_t per_node,
                             const FeatureCodec& codec, Rng& rng);

// Edge features of the corrupted graph: every edge stored at position
// >= `original_edges` (the pseudo-edges) and round(rate * M) of the first M
// undirected edges get the masked category. Returns the masked undirected ids
// through `masked_ids` when given.
Tensor mask_edges(const Graph& augmented, std::size_t original_edges, double rate, const FeatureCodec& codec,
                  Rng& rng, std::vector<std::size_t>* masked_ids = nullptr);

// Full pipeline: mask_nodes, add_pseudo_edges, mask_edges.
MaskedPair corrupt(const Graph& g, const MaskConfig& config, const FeatureCodec& codec, std::uint64_t seed);

// Mean smoothed row norm of node residuals plus lambda times that of edge
// residuals, over all rows.
Var reconstruction_loss(Var x_hat, Var e_hat, const Graph& ground_truth, double lambda);
double reconstruction_loss_value(const Tensor& x_hat, const Tensor& e_hat, const Graph& ground_truth,
                                 double lambda);

inline constexpr double kNormSmoothing = 1e-12;

}  // namespace gce
