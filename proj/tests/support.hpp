#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gce/graph.hpp"
#include "gce/molecule.hpp"
#include "gce/rng.hpp"
#include "gce/tensor.hpp"

#ifndef GCE_TEST_DATA_DIR
#define GCE_TEST_DATA_DIR "tests/data"
#endif

namespace gce::test {

inline std::string data_path(const std::string& name) { return std::string(GCE_TEST_DATA_DIR) + "/" + name; }

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Connected random graph: a random spanning tree plus `extra` chords, with
// bond categories restricted to single/double/triple.
inline Graph random_graph(std::size_t n, std::size_t extra, Rng& rng,
                          const FeatureCodec& codec = FeatureCodec::molecular()) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t v = 1; v < n; ++v) pairs.emplace_back(uniform_index(rng, v), v);
  for (std::size_t tries = 0; tries < 20 * extra && pairs.size() < n - 1 + extra; ++tries) {
    std::size_t a = uniform_index(rng, n), b = uniform_index(rng, n);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (std::find(pairs.begin(), pairs.end(), std::make_pair(a, b)) != pairs.end()) continue;
    if (std::find(pairs.begin(), pairs.end(), std::make_pair(b, a)) != pairs.end()) continue;
    pairs.emplace_back(a, b);
  }
  std::vector<std::size_t> nodes(n), edges(pairs.size());
  for (auto& c : nodes) c = uniform_index(rng, codec.node_dim());
  for (auto& c : edges) c = uniform_index(rng, 3);
  return make_graph(n, pairs, nodes, edges, codec);
}

// Graph relabelled so that old node i becomes perm[i]; edge order follows
// the relabelled pairs of the original order.
inline Graph permute_graph(const Graph& g, const std::vector<std::size_t>& perm) {
  Graph out;
  out.num_nodes = g.num_nodes;
  out.label = g.label;
  out.x = Tensor::zeros(g.num_nodes, g.x.cols());
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    for (std::size_t c = 0; c < g.x.cols(); ++c) out.x(perm[i], c) = g.x(i, c);
  }
  out.e = g.e;
  for (const auto& e : g.edges) out.edges.push_back({perm[e.src], perm[e.dst]});
  return out;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace gce::test
