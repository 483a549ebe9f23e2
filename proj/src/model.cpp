#include "gce/model.hpp"

#include <algorithm>
#include <cmath>

#include "gce/error.hpp"

namespace gce {

// ---- configuration -----------------------------------------------------------

void GceConfig::validate() const {
  if (num_layers < 2 || num_layers % 2 != 0) {
    throw ConfigError("num_layers must be even and at least 2, got " + std::to_string(num_layers));
  }
  if (hidden_channels < 1) throw ConfigError("hidden_channels must be at least 1");
  if (!(pooling_rate > 0.0 && pooling_rate <= 1.0)) {
    throw ConfigError("pooling_rate must lie in (0, 1], got " + std::to_string(pooling_rate));
  }
  if (node_in_dim < 1 || edge_in_dim < 1) throw ConfigError("input feature widths must be set");
}

GceConfig GceConfig::molecule_generation(const FeatureCodec& codec) {
  GceConfig c;
  c.node_in_dim = codec.node_dim();
  c.edge_in_dim = codec.edge_dim();
  return c;
}

GceConfig GceConfig::gine(const FeatureCodec& codec) {
  GceConfig c = molecule_generation(codec);
  c.pooling_rate = 1.0;
  return c;
}

GceConfig GceConfig::graph_mnist(const FeatureCodec& codec) {
  GceConfig c = molecule_generation(codec);
  c.num_layers = 4;
  return c;
}

Topology topology_of(const Batch& batch) {
  Topology t;
  t.num_nodes = batch.graph.num_nodes;
  t.edges = batch.graph.edges;
  t.graph_of_node = batch.graph_of_node;
  t.num_graphs = batch.num_graphs();
  return t;
}

// ---- building blocks ---------------------------------------------------------

Var Mlp::apply(Var x) const {
  Var h = add_bias(matmul(x, w1), b1);
  if (!w2.valid()) return h;
  return add_bias(matmul(relu(h), w2), b2);
}

namespace {

std::vector<std::size_t> sources(const Topology& t) {
  std::vector<std::size_t> out;
  out.reserve(t.edges.size());
  for (const Edge& e : t.edges) out.push_back(e.src);
  return out;
}

std::vector<std::size_t> targets(const Topology& t) {
  std::vector<std::size_t> out;
  out.reserve(t.edges.size());
  for (const Edge& e : t.edges) out.push_back(e.dst);
  return out;
}

}  // namespace

Var gine_conv(Var x, const Topology& topo, Var edge_embedded, Var eps, const Mlp& f_theta) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.rows() != topo.num_nodes) {
    throw DimensionError("gine_conv: node features " + shape_to_string(xv.shape()) + " for " +
                         std::to_string(topo.num_nodes) + " nodes");
  }
  const Tensor& ev = edge_embedded.value();
  if (ev.rank() != 2 || ev.rows() != topo.edges.size() || ev.cols() != xv.cols()) {
    throw DimensionError("gine_conv: edge embedding " + shape_to_string(ev.shape()) +
                         " does not match " + std::to_string(topo.edges.size()) + " edges of width " +
                         std::to_string(xv.cols()));
  }
  Tape& tape = x.tape();
  const auto src = sources(topo);
  const auto dst = targets(topo);
  Var messages = relu(add(gather_rows(x, src), edge_embedded));
  Var aggregated = scatter_add(messages, dst, topo.num_nodes);
  Var self = mul(x, add(tape.constant(Tensor::scalar(1.0)), eps));
  return f_theta.apply(add(self, aggregated));
}

PoolResult topk_pool(Var x, const Topology& topo, Var e, Var p, double rate) {
  if (!(rate > 0.0 && rate <= 1.0)) throw ContractError("topk_pool: rate must lie in (0, 1]");
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.rows() != topo.num_nodes || p.value().size() != xv.cols()) {
    throw DimensionError("topk_pool: node features " + shape_to_string(xv.shape()) +
                         " with projection " + shape_to_string(p.value().shape()));
  }
  Var norm = l2_norm(p);
  if (!(norm.value().item() > 0.0)) throw NumericError("topk_pool: projection vector has zero norm");
  Var scores = div(matmul(x, p), norm);
  const Tensor& y = scores.value();

  std::vector<std::vector<std::size_t>> members(topo.num_graphs);
  for (std::size_t i = 0; i < topo.num_nodes; ++i) members.at(topo.graph_of_node[i]).push_back(i);

  PoolResult out;
  out.scores = scores;
  for (auto& nodes : members) {
    if (nodes.empty()) continue;
    const double want = std::ceil(rate * static_cast<double>(nodes.size()) - 1e-9);
    const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, nodes.size());
    std::stable_sort(nodes.begin(), nodes.end(), [&](std::size_t a, std::size_t b) { return y[a] > y[b]; });
    nodes.resize(k);
    std::sort(nodes.begin(), nodes.end());
    out.record.selected.insert(out.record.selected.end(), nodes.begin(), nodes.end());
  }
  std::sort(out.record.selected.begin(), out.record.selected.end());

  std::vector<std::size_t> new_index(topo.num_nodes, SIZE_MAX);
  for (std::size_t r = 0; r < out.record.selected.size(); ++r) new_index[out.record.selected[r]] = r;

  Topology& after = out.topology;
  after.num_nodes = out.record.selected.size();
  after.num_graphs = topo.num_graphs;
  for (std::size_t node : out.record.selected) after.graph_of_node.push_back(topo.graph_of_node[node]);
  for (std::size_t k = 0; k < topo.edges.size(); ++k) {
    const Edge& edge = topo.edges[k];
    if (new_index[edge.src] == SIZE_MAX || new_index[edge.dst] == SIZE_MAX) continue;
    out.record.kept_edges.push_back(k);
    after.edges.push_back({new_index[edge.src], new_index[edge.dst]});
  }
  out.record.before = topo;

  Var gated = mul_rows(x, tanh(scores));
  out.x = gather_rows(gated, out.record.selected);
  out.e = gather_rows(e, out.record.kept_edges);
  return out;
}

UnpoolResult unpool(Var x_small, Var e_small, const PoolRecord& record) {
  if (x_small.value().rows() != record.selected.size()) {
    throw ContractError("unpool: " + std::to_string(x_small.value().rows()) +
                        " rows for a record of " + std::to_string(record.selected.size()) + " nodes");
  }
  if (e_small.value().rows() != record.kept_edges.size()) {
    throw ContractError("unpool: " + std::to_string(e_small.value().rows()) +
                        " edge rows for a record of " + std::to_string(record.kept_edges.size()) + " edges");
  }
  UnpoolResult out;
  out.x = scatter_add(x_small, record.selected, record.before.num_nodes);
  out.e = scatter_add(e_small, record.kept_edges, record.before.edges.size());
  out.topology = record.before;
  return out;
}

Var edge_update(Var e, Var x, const Topology& topo, const Mlp& f) {
  if (e.value().rows() != topo.edges.size() || x.value().rows() != topo.num_nodes) {
    throw DimensionError("edge_update: features " + shape_to_string(e.value().shape()) + " / " +
                         shape_to_string(x.value().shape()) + " for " +
                         std::to_string(topo.edges.size()) + " edges");
  }
  const auto src = sources(topo);
  const auto dst = targets(topo);
  const Var parts[] = {e, gather_rows(x, src), gather_rows(x, dst)};
  return f.apply(concat_cols(parts));
}

// ---- GceModel ----------------------------------------------------------------

std::size_t GceModel::add_param(std::string name, std::size_t rows, std::size_t cols,
                                std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  params_.push_back({std::move(name), std::move(t)});
  return params_.size() - 1;
}

GceModel::MlpSlots GceModel::add_mlp(const std::string& prefix, std::size_t in, std::size_t hidden,
                                     std::size_t out, Rng& rng) {
  MlpSlots s{};
  s.w1 = add_param(prefix + ".w1", in, hidden, in, rng);
  s.b1 = add_param(prefix + ".b1", 1, hidden, in, rng);
  s.w2 = add_param(prefix + ".w2", hidden, out, hidden, rng);
  s.b2 = add_param(prefix + ".b2", 1, out, hidden, rng);
  return s;
}

GceModel::GceModel(GceConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = make_rng(seed, {0x6d6f64656cULL});
  const std::size_t h = config_.hidden_channels;
  node_in_w_ = add_param("node_in.w", config_.node_in_dim, h, config_.node_in_dim, rng);
  node_in_b_ = add_param("node_in.b", 1, h, config_.node_in_dim, rng);
  edge_in_ = add_mlp("edge_in", config_.edge_in_dim, h, h, rng);

  auto make_layer = [&](const std::string& prefix, bool encoder) {
    LayerSlots l{};
    l.conv = add_mlp(prefix + ".conv", h, h, h, rng);
    l.edge_embed = add_mlp(prefix + ".edge_embed", h, h, h, rng);
    l.eps = params_.size();
    params_.push_back({prefix + ".eps", Tensor::scalar(0.0)});
    l.has_edge_update = !encoder || config_.encoder_edge_update;
    if (l.has_edge_update) l.edge_update = add_mlp(prefix + ".edge_update", 3 * h, h, h, rng);
    if (encoder) l.pool = add_param(prefix + ".pool.p", h, 1, h, rng);
    return l;
  };
  for (std::size_t l = 0; l < config_.encoder_layers(); ++l) {
    encoder_.push_back(make_layer("enc" + std::to_string(l), true));
  }
  for (std::size_t l = 0; l < config_.encoder_layers(); ++l) {
    decoder_.push_back(make_layer("dec" + std::to_string(l), false));
  }
  node_out_ = add_mlp("node_out", h, h, config_.node_in_dim, rng);
  edge_out_ = add_mlp("edge_out", h, h, config_.edge_in_dim, rng);
}

void GceModel::attach_head(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 1) throw ConfigError("classifier head needs at least one class");
  std::erase_if(params_, [](const NamedTensor& p) { return is_head_parameter(p.name); });
  Rng rng = make_rng(seed, {0x68656164ULL});
  const std::size_t h = config_.hidden_channels;
  head_ = add_mlp("head", h, h, num_classes, rng);
  num_classes_ = num_classes;
}

NamedTensor* GceModel::find(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const NamedTensor* GceModel::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

bool GceModel::is_encoder_parameter(std::string_view name) {
  return name.starts_with("node_in.") || name.starts_with("edge_in.") || name.starts_with("enc");
}

bool GceModel::is_head_parameter(std::string_view name) { return name.starts_with("head."); }

std::vector<Var> GceModel::bind(Tape& tape, bool track) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) {
    Tensor t = p.value;
    const bool is_eps = p.name.ends_with(".eps");
    t.set_requires_grad(track && (!is_eps || config_.trainable_epsilon));
    out.push_back(tape.leaf(std::move(t)));
  }
  return out;
}

Mlp GceModel::bind_mlp(std::span<const Var> bound, const MlpSlots& s) const {
  return Mlp{bound[s.w1], bound[s.b1], bound[s.w2], bound[s.b2]};
}

void GceModel::check_batch(const Batch& batch) const {
  if (batch.graph.x.rank() != 2 || batch.graph.x.cols() != config_.node_in_dim ||
      batch.graph.e.rank() != 2 || batch.graph.e.cols() != config_.edge_in_dim) {
    throw ContractError("batch features " + shape_to_string(batch.graph.x.shape()) + " / " +
                        shape_to_string(batch.graph.e.shape()) + " do not match the model codec (" +
                        std::to_string(config_.node_in_dim) + " node, " +
                        std::to_string(config_.edge_in_dim) + " edge categories)");
  }
}

GceModel::EncoderState GceModel::run_encoder(std::span<const Var> bound, const Batch& batch,
                                             ForwardTrace* trace) const {
  check_batch(batch);
  if (bound.size() != params_.size()) throw ContractError("bound parameter count mismatch");
  Tape& tape = bound[0].tape();
  EncoderState s;
  s.topology = topology_of(batch);
  Var x0 = tape.constant(batch.graph.x);
  Var e0 = tape.constant(batch.graph.e);
  s.x = add_bias(matmul(x0, bound[node_in_w_]), bound[node_in_b_]);
  s.e = bind_mlp(bound, edge_in_).apply(e0);
  for (const LayerSlots& layer : encoder_) {
    Var embedded = bind_mlp(bound, layer.edge_embed).apply(s.e);
    s.x = gine_conv(s.x, s.topology, embedded, bound[layer.eps], bind_mlp(bound, layer.conv));
    if (layer.has_edge_update) s.e = edge_update(s.e, s.x, s.topology, bind_mlp(bound, layer.edge_update));
    s.skips.emplace_back(s.x, s.e);
    PoolResult pooled = topk_pool(s.x, s.topology, s.e, bound[*layer.pool], config_.pooling_rate);
    if (trace) {
      trace->pool_scores.push_back(pooled.scores.value());
      trace->records.push_back(pooled.record);
    }
    s.x = pooled.x;
    s.e = pooled.e;
    s.topology = std::move(pooled.topology);
    s.records.push_back(std::move(pooled.record));
  }
  return s;
}

ForwardOutput GceModel::forward(std::span<const Var> bound, const Batch& batch, ForwardTrace* trace) const {
  EncoderState s = run_encoder(bound, batch, trace);
  const std::size_t depth = encoder_.size();
  for (std::size_t d = 0; d < depth; ++d) {
    const std::size_t mirror = depth - 1 - d;
    UnpoolResult up = unpool(s.x, s.e, s.records[mirror]);
    s.x = up.x;
    s.e = up.e;
    s.topology = std::move(up.topology);
    if (config_.use_residual) {
      s.x = add(s.x, s.skips[mirror].first);
      s.e = add(s.e, s.skips[mirror].second);
    }
    const LayerSlots& layer = decoder_[d];
    Var embedded = bind_mlp(bound, layer.edge_embed).apply(s.e);
    s.x = gine_conv(s.x, s.topology, embedded, bound[layer.eps], bind_mlp(bound, layer.conv));
    s.e = edge_update(s.e, s.x, s.topology, bind_mlp(bound, layer.edge_update));
  }
  return {bind_mlp(bound, node_out_).apply(s.x), bind_mlp(bound, edge_out_).apply(s.e)};
}

Var GceModel::classifier_forward(std::span<const Var> bound, const Batch& batch) const {
  if (!has_head()) throw ConfigError("classifier_forward: no classifier head attached");
  EncoderState s = run_encoder(bound, batch, nullptr);
  Tape& tape = bound[0].tape();
  std::vector<double> counts(s.topology.num_graphs, 0.0);
  for (std::size_t g : s.topology.graph_of_node) counts[g] += 1.0;
  for (double& c : counts) c = c > 0.0 ? 1.0 / c : 0.0;
  Var pooled = scatter_add(s.x, s.topology.graph_of_node, s.topology.num_graphs);
  Var mean_pooled = mul_rows(pooled, tape.constant(Tensor::column(counts)));
  return bind_mlp(bound, head_).apply(mean_pooled);
}

Reconstruction GceModel::reconstruct(const Batch& batch, ForwardTrace* trace) const {
  Tape tape;
  auto bound = bind(tape, false);
  ForwardOutput out = forward(bound, batch, trace);
  return {out.x_hat.value(), out.e_hat.value()};
}

Tensor GceModel::classify(const Batch& batch) const {
  Tape tape;
  auto bound = bind(tape, false);
  return classifier_forward(bound, batch).value();
}

}  // namespace gce
