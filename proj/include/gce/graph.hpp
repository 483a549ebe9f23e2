#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gce/tensor.hpp"

namespace gce {

inline constexpr std::string_view kNoBond = "no_bond";
inline constexpr std::string_view kMaskedBond = "masked";

/// Ordered category lists for node and edge one-hot features.
///
/// The edge list must contain exactly one "no_bond" and one "masked" entry;
/// pseudo-edges are labelled with the former in ground-truth graphs and the
/// latter in corrupted ones.
class FeatureCodec {
 public:
  FeatureCodec() = default;
  FeatureCodec(std::vector<std::string> node_categories, std::vector<std::string> edge_categories);

  // Elements C, N, O, F, S, Cl, Br, P and bonds single, double, triple,
  // no_bond, masked.
  static FeatureCodec molecular();

  const std::vector<std::string>& node_categories() const noexcept { return node_categories_; }
  const std::vector<std::string>& edge_categories() const noexcept { return edge_categories_; }
  std::size_t node_dim() const noexcept { return node_categories_.size(); }
  std::size_t edge_dim() const noexcept { return edge_categories_.size(); }

  std::size_t node_index(std::string_view name) const;
  std::size_t edge_index(std::string_view name) const;
  std::optional<std::size_t> find_node(std::string_view name) const;
  std::optional<std::size_t> find_edge(std::string_view name) const;
  std::size_t no_bond_index() const noexcept { return no_bond_; }
  std::size_t masked_index() const noexcept { return masked_; }

  bool operator==(const FeatureCodec&) const = default;

 private:
  std::vector<std::string> node_categories_;
  std::vector<std::string> edge_categories_;
  std::size_t no_bond_ = 0;
  std::size_t masked_ = 0;
};

std::vector<double> encode_one_hot(std::size_t category_index, std::size_t codec_size);
// Index of the single 1 in a one-hot row; nullopt for any other row.
std::optional<std::size_t> decode_one_hot(std::span<const double> row);

// Directed edge: messages flow from src to dst.
struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  bool operator==(const Edge&) const = default;
};

/// Undirected graph stored as directed edge pairs with one-hot features.
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  Tensor x;  // num_nodes x node_dim
  Tensor e;  // edges.size() x edge_dim
  std::optional<int> label;

  std::size_t num_edges() const noexcept { return edges.size(); }
};

// Builds a graph from categorical features. `undirected` lists each edge
// once; both directions are stored consecutively.
Graph make_graph(std::size_t num_nodes, std::span<const std::pair<std::size_t, std::size_t>> undirected,
                 std::span<const std::size_t> node_categories, std::span<const std::size_t> edge_categories,
                 const FeatureCodec& codec, std::optional<int> label = std::nullopt);

// Position pairs (forward, reverse) for every undirected edge, in order of
// first appearance of the forward entry (the one with src < dst).
std::vector<std::pair<std::size_t, std::size_t>> undirected_pairs(const Graph& g);

struct GraphCheck {
  bool ok = true;
  std::string message;
};

// Verifies endpoints, symmetry with identical features, absence of
// self-loops and duplicates, and one-hot rows. Masked node rows (all zero)
// and "masked" edge rows pass when `allow_masked` is set.
GraphCheck check_graph(const Graph& g, const FeatureCodec& codec, bool allow_masked = false);
void validate_graph(const Graph& g, const FeatureCodec& codec, bool allow_masked = false);

bool graphs_equal(const Graph& a, const Graph& b);

/// Disjoint union of several graphs.
struct Batch {
  Graph graph;
  std::vector<std::size_t> node_offsets;  // first node of each constituent
  std::vector<std::size_t> edge_offsets;  // first edge of each constituent
  std::vector<std::size_t> graph_of_node;
  std::vector<std::optional<int>> labels;

  std::size_t num_graphs() const noexcept { return node_offsets.size(); }
};

Batch batch_graphs(std::span<const Graph> graphs);
std::vector<Graph> unbatch(const Batch& batch);

// ---- dataset I/O -------------------------------------------------------------

struct Dataset {
  FeatureCodec codec;
  std::vector<Graph> graphs;
};

// Line-delimited JSON: a codec header line, then one graph per line.
Dataset read_dataset(std::istream& in);
Dataset load_dataset(const std::string& path);
void write_dataset(std::ostream& out, const Dataset& dataset);
void save_dataset(const std::string& path, const Dataset& dataset);

// ---- synthetic corpora -------------------------------------------------------

enum class SynthKind { kCyclesVsPaths, kTwoMotifs };

SynthKind synth_kind_from_string(std::string_view name);

// Labelled binary datasets drawn over the first three node categories of
// `codec` with single bonds. cycles_vs_paths: label 1 = ring, 0 = chain.
// two_motifs: random tree carrying a 3-ring (label 0) or a 4-ring (label 1).
std::vector<Graph> synth_dataset(SynthKind kind, std::size_t n_graphs, std::size_t min_size,
                                 std::size_t max_size, std::uint64_t seed,
                                 const FeatureCodec& codec = FeatureCodec::molecular());

}  // namespace gce
