#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gce/autodiff.hpp"
#include "gce/graph.hpp"
#include "gce/rng.hpp"

namespace gce {

/// Architecture hyperparameters.
struct GceConfig {
  std::size_t num_layers = 6;  // encoder + decoder; must be even
  std::size_t hidden_channels = 50;
  double pooling_rate = 0.5;
  bool trainable_epsilon = true;
  bool use_residual = true;
  // Run the edge-update MLP in encoder layers too, not only the decoder.
  bool encoder_edge_update = true;
  std::size_t node_in_dim = 0;
  std::size_t edge_in_dim = 0;

  std::size_t encoder_layers() const noexcept { return num_layers / 2; }
  void validate() const;
  bool operator==(const GceConfig&) const = default;

  // 3 + 3 layers, 50 channels, pooling rate 0.5, residual skips.
  static GceConfig molecule_generation(const FeatureCodec& codec);
  // Same depth without down-sampling (pooling rate 1).
  static GceConfig gine(const FeatureCodec& codec);
  // 2 + 2 layers, 50 channels, pooling rate 0.5.
  static GceConfig graph_mnist(const FeatureCodec& codec);
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Connectivity of a (possibly batched) graph as seen by the network.
struct Topology {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  std::vector<std::size_t> graph_of_node;
  std::size_t num_graphs = 0;
};

Topology topology_of(const Batch& batch);

/// Two-layer perceptron (linear, ReLU, linear) bound to a tape. When `w2`
/// is unbound the block is a single linear map.
struct Mlp {
  Var w1, b1, w2, b2;
  Var apply(Var x) const;
};

struct PoolRecord {
  std::vector<std::size_t> selected;    // strictly increasing node ids
  Topology before;                      // pre-pool structure
  std::vector<std::size_t> kept_edges;  // pre-pool positions of surviving edges
  std::size_t pre_pool_nodes() const noexcept { return before.num_nodes; }
};

struct PoolResult {
  Var x;
  Var e;
  Topology topology;
  PoolRecord record;
  Var scores;  // N x 1 projection scores
};

struct UnpoolResult {
  Var x;
  Var e;
  Topology topology;
};

// x*_i = f_theta((1 + eps) x_i + sum_{j in N(i)} relu(x_j + edge_embedded_{j,i})).
// `edge_embedded` is already mapped to the node width.
Var gine_conv(Var x, const Topology& topo, Var edge_embedded, Var eps, const Mlp& f_theta);

// Scores y = x p / |p|; keeps the k = max(1, ceil(rate * n_g)) best nodes of
// each graph (ties to the lower index) gated by tanh(y), with the induced
// subgraph edges.
PoolResult topk_pool(Var x, const Topology& topo, Var e, Var p, double rate);

// Places pooled rows back at their recorded indices (zeros elsewhere) and
// restores the recorded structure; surviving edge rows return to their
// original positions likewise.
UnpoolResult unpool(Var x_small, Var e_small, const PoolRecord& record);

// e'_{ij} = f([e_ij, x_i, x_j]) for every directed edge (i = src, j = dst).
Var edge_update(Var e, Var x, const Topology& topo, const Mlp& f);

struct ForwardTrace {
  std::vector<Tensor> pool_scores;  // per encoder layer
  std::vector<PoolRecord> records;
};

struct ForwardOutput {
  Var x_hat;  // N x node_in_dim
  Var e_hat;  // E x edge_in_dim
};

struct Reconstruction {
  Tensor x_hat;
  Tensor e_hat;
};

/// Graph Context Encoder: GINe encoder with top-k pooling, mirrored decoder
/// with structure-replaying unpooling, and an optional mean-pool classifier.
class GceModel {
 public:
  GceModel() = default;
  GceModel(GceConfig config, std::uint64_t seed);

  const GceConfig& config() const noexcept { return config_; }

  std::span<NamedTensor> parameters() noexcept { return params_; }
  std::span<const NamedTensor> parameters() const noexcept { return params_; }
  NamedTensor* find(std::string_view name);
  const NamedTensor* find(std::string_view name) const;

  bool has_head() const noexcept { return num_classes_ > 0; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  void attach_head(std::size_t num_classes, std::uint64_t seed);

  // Parameters on the path input -> encoder (copied by weight transfer).
  static bool is_encoder_parameter(std::string_view name);
  static bool is_head_parameter(std::string_view name);

  // One tape leaf per parameter, in parameters() order. Leaves track
  // gradients when `track` is set (epsilon only if trainable).
  std::vector<Var> bind(Tape& tape, bool track) const;

  ForwardOutput forward(std::span<const Var> bound, const Batch& batch, ForwardTrace* trace = nullptr) const;
  // Logits, num_graphs x num_classes.
  Var classifier_forward(std::span<const Var> bound, const Batch& batch) const;

  Reconstruction reconstruct(const Batch& batch, ForwardTrace* trace = nullptr) const;
  Tensor classify(const Batch& batch) const;

 private:
  struct MlpSlots {
    std::size_t w1, b1, w2, b2;
  };
  struct LayerSlots {
    MlpSlots conv, edge_embed, edge_update;
    std::size_t eps;
    std::optional<std::size_t> pool;
    bool has_edge_update;
  };

  std::size_t add_param(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);
  MlpSlots add_mlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  Mlp bind_mlp(std::span<const Var> bound, const MlpSlots& s) const;

  struct EncoderState {
    Var x;
    Var e;
    Topology topology;
    std::vector<PoolRecord> records;
    std::vector<std::pair<Var, Var>> skips;
  };
  EncoderState run_encoder(std::span<const Var> bound, const Batch& batch, ForwardTrace* trace) const;
  void check_batch(const Batch& batch) const;

  GceConfig config_;
  std::vector<NamedTensor> params_;
  std::size_t node_in_w_ = 0, node_in_b_ = 0;
  MlpSlots edge_in_{}, node_out_{}, edge_out_{}, head_{};
  std::vector<LayerSlots> encoder_, decoder_;
  std::size_t num_classes_ = 0;
};

}  // namespace gce
