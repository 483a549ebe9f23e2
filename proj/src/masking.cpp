#include "gce/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "gce/error.hpp"

namespace gce {

std::size_t masked_node_count(std::size_t n, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ContractError("mask rate must lie in [0, 1]");
  if (rate == 0.0 || n == 0) return 0;
  const auto k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

NodeMask mask_nodes(const Graph& g, double rate, Rng& rng) {
  NodeMask out;
  out.x = g.x;
  std::vector<std::size_t> all(g.num_nodes);
  std::iota(all.begin(), all.end(), 0);
  out.omega = sample_without_replacement(std::move(all), masked_node_count(g.num_nodes, rate), rng);
  std::sort(out.omega.begin(), out.omega.end());
  for (std::size_t i : out.omega) {
    for (double& v : out.x.row(i)) v = 0.0;
  }
  return out;
}

PseudoEdges add_pseudo_edges(const Graph& g, std::span<const std::size_t> omega, std::size_t per_node,
                             const FeatureCodec& codec, Rng& rng) {
  PseudoEdges out;
  std::set<std::pair<std::size_t, std::size_t>> linked;
  for (const Edge& e : g.edges) linked.emplace(std::min(e.src, e.dst), std::max(e.src, e.dst));
  for (std::size_t w : omega) {
    if (w >= g.num_nodes) throw BoundsError("add_pseudo_edges: masked node out of range", w);
    if (per_node == 0) continue;
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < g.num_nodes; ++j) {
      if (j != w && !linked.contains({std::min(w, j), std::max(w, j)})) candidates.push_back(j);
    }
    for (std::size_t j : sample_without_replacement(std::move(candidates), per_node, rng)) {
      linked.emplace(std::min(w, j), std::max(w, j));
      out.pairs.emplace_back(w, j);
    }
  }

  Graph& a = out.augmented;
  a.num_nodes = g.num_nodes;
  a.label = g.label;
  a.x = g.x;
  a.edges = g.edges;
  const std::size_t m = g.edges.size();
  const std::size_t d = codec.edge_dim();
  a.e = Tensor::zeros(m + 2 * out.pairs.size(), d);
  std::copy(g.e.data().begin(), g.e.data().end(), a.e.data().begin());
  for (std::size_t k = 0; k < out.pairs.size(); ++k) {
    const auto [w, j] = out.pairs[k];
    a.edges.push_back({std::min(w, j), std::max(w, j)});
    a.edges.push_back({std::max(w, j), std::min(w, j)});
    a.e(m + 2 * k, codec.no_bond_index()) = 1.0;
    a.e(m + 2 * k + 1, codec.no_bond_index()) = 1.0;
  }
  return out;
}

Tensor mask_edges(const Graph& augmented, std::size_t original_edges, double rate, const FeatureCodec& codec,
                  Rng& rng, std::vector<std::size_t>* masked_ids) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ContractError("edge mask rate must lie in [0, 1]");
  if (original_edges > augmented.edges.size()) throw ContractError("mask_edges: original edge count too large");
  Tensor e = augmented.e;
  auto set_masked = [&](std::size_t row) {
    for (double& v : e.row(row)) v = 0.0;
    e(row, codec.masked_index()) = 1.0;
  };
  for (std::size_t k = original_edges; k < augmented.edges.size(); ++k) set_masked(k);

  std::vector<std::pair<std::size_t, std::size_t>> originals;
  for (const auto& pr : undirected_pairs(augmented)) {
    if (pr.first < original_edges) originals.push_back(pr);
  }
  const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(originals.size())));
  std::vector<std::size_t> ids(originals.size());
  std::iota(ids.begin(), ids.end(), 0);
  ids = sample_without_replacement(std::move(ids), count, rng);
  std::sort(ids.begin(), ids.end());
  for (std::size_t id : ids) {
    set_masked(originals[id].first);
    set_masked(originals[id].second);
  }
  if (masked_ids) *masked_ids = std::move(ids);
  return e;
}

MaskedPair corrupt(const Graph& g, const MaskConfig& config, const FeatureCodec& codec, std::uint64_t seed) {
  Rng rng(seed);
  MaskedPair out;
  out.plan.seed = seed;
  NodeMask nodes = mask_nodes(g, config.node_rate, rng);
  PseudoEdges pseudo = add_pseudo_edges(g, nodes.omega, config.pseudo_edges, codec, rng);
  Tensor e = mask_edges(pseudo.augmented, g.edges.size(), config.edge_rate, codec, rng, &out.plan.masked_edges);

  out.plan.masked_nodes = std::move(nodes.omega);
  out.plan.pseudo_edges = std::move(pseudo.pairs);
  out.ground_truth = std::move(pseudo.augmented);
  out.masked = out.ground_truth;
  out.masked.x = std::move(nodes.x);
  out.masked.e = std::move(e);
  return out;
}

Var reconstruction_loss(Var x_hat, Var e_hat, const Graph& ground_truth, double lambda) {
  if (x_hat.value().shape() != ground_truth.x.shape() || e_hat.value().shape() != ground_truth.e.shape()) {
    throw DimensionError("reconstruction_loss: predictions " + shape_to_string(x_hat.value().shape()) + " / " +
                         shape_to_string(e_hat.value().shape()) + " vs ground truth " +
                         shape_to_string(ground_truth.x.shape()) + " / " +
                         shape_to_string(ground_truth.e.shape()));
  }
  if (lambda < 0.0) throw ContractError("reconstruction_loss: lambda must be non-negative");
  if (ground_truth.num_nodes == 0) throw ContractError("reconstruction_loss: empty graph");
  Tape& tape = x_hat.tape();
  Var node_res = sub(x_hat, tape.constant(ground_truth.x));
  Var loss = mean(row_norm(node_res, kNormSmoothing));
  if (!ground_truth.edges.empty() && lambda != 0.0) {
    Var edge_res = sub(e_hat, tape.constant(ground_truth.e));
    loss = add(loss, scale(mean(row_norm(edge_res, kNormSmoothing)), lambda));
  }
  return loss;
}

double reconstruction_loss_value(const Tensor& x_hat, const Tensor& e_hat, const Graph& ground_truth,
                                 double lambda) {
  Tape tape;
  return reconstruction_loss(tape.constant(x_hat), tape.constant(e_hat), ground_truth, lambda).value().item();
}

}  // namespace gce
