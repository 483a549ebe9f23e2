#include "gce/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <zlib.h>

#include "gce/error.hpp"
#include "gce/parallel.hpp"

namespace gce {

using nlohmann::ordered_json;

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kMaskStream = 3;
constexpr std::uint64_t kSplitStream = 4;

constexpr char kMagic[8] = {'G', 'C', 'E', 'C', 'K', 'P', 'T', '\0'};

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in [0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

// ---- optimizer ---------------------------------------------------------------

AdamState adam_init(std::span<const NamedTensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.shape(), 0.0);
    s.v.emplace_back(p.value.shape(), 0.0);
  }
  return s;
}

void adam_step(std::span<NamedTensor> params, std::span<const Tensor* const> grads, AdamState& state,
               const TrainConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i]) continue;
    if (grads[i]->shape() != params[i].value.shape()) {
      throw DimensionError("adam_step: gradient shape " + shape_to_string(grads[i]->shape()) +
                           " for parameter '" + params[i].name + "'");
    }
    if (!grads[i]->all_finite()) throw NumericError("non-finite gradient for parameter '" + params[i].name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i]) continue;
    auto theta = params[i].value.data();
    auto g = grads[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      theta[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
}

// ---- JSON helpers ------------------------------------------------------------

ordered_json config_to_json(const GceConfig& c) {
  ordered_json j;
  j["num_layers"] = c.num_layers;
  j["hidden_channels"] = c.hidden_channels;
  j["pooling_rate"] = c.pooling_rate;
  j["trainable_epsilon"] = c.trainable_epsilon;
  j["use_residual"] = c.use_residual;
  j["encoder_edge_update"] = c.encoder_edge_update;
  j["node_in_dim"] = c.node_in_dim;
  j["edge_in_dim"] = c.edge_in_dim;
  return j;
}

GceConfig config_from_json(const ordered_json& j) {
  GceConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.hidden_channels = j.at("hidden_channels").get<std::size_t>();
  c.pooling_rate = j.at("pooling_rate").get<double>();
  c.trainable_epsilon = j.at("trainable_epsilon").get<bool>();
  c.use_residual = j.at("use_residual").get<bool>();
  c.encoder_edge_update = j.at("encoder_edge_update").get<bool>();
  c.node_in_dim = j.at("node_in_dim").get<std::size_t>();
  c.edge_in_dim = j.at("edge_in_dim").get<std::size_t>();
  return c;
}

ordered_json train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["mask_rate"] = c.mask_rate;
  j["lambda"] = c.lambda;
  j["pseudo_edges"] = c.pseudo_edges;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["val_fraction"] = c.val_fraction;
  j["threads"] = c.threads;
  return j;
}

TrainConfig train_config_from_json(const ordered_json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.mask_rate = j.at("mask_rate").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.pseudo_edges = j.at("pseudo_edges").get<std::size_t>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.val_fraction = j.at("val_fraction").get<double>();
  c.threads = j.at("threads").get<std::size_t>();
  return c;
}

ordered_json codec_to_json(const FeatureCodec& codec) {
  ordered_json j;
  j["nodes"] = codec.node_categories();
  j["edges"] = codec.edge_categories();
  return j;
}

FeatureCodec codec_from_json(const ordered_json& j) {
  return FeatureCodec(j.at("nodes").get<std::vector<std::string>>(), j.at("edges").get<std::vector<std::string>>());
}

// ---- checkpoint container ----------------------------------------------------

namespace {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw LoadError("checkpoint is truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

Tensor row_tensor(const std::vector<double>& values) { return Tensor(Shape{1, values.size()}, values); }

void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.data()) w.f64(v);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const GceModel& model = ckpt.model;
  const auto params = model.parameters();
  if (ckpt.optimizer.m.size() != params.size() || ckpt.optimizer.v.size() != params.size()) {
    throw ContractError("checkpoint optimizer state does not match the model parameters");
  }
  ordered_json meta;
  meta["format"] = "gce-checkpoint";
  meta["config"] = config_to_json(model.config());
  meta["codec"] = codec_to_json(ckpt.codec);
  meta["train"] = train_config_to_json(ckpt.train);
  meta["num_classes"] = model.num_classes();
  meta["epoch"] = ckpt.epoch;
  meta["adam_step"] = ckpt.optimizer.step;
  const std::string meta_text = meta.dump();

  ByteWriter w;
  w.bytes(std::string_view(kMagic, sizeof kMagic));
  w.u32(kCheckpointVersion);
  w.u64(meta_text.size());
  w.bytes(meta_text);
  w.u64(3 * params.size() + 3);
  for (const auto& p : params) write_tensor(w, p.name, p.value);
  for (std::size_t i = 0; i < params.size(); ++i) write_tensor(w, "adam.m." + params[i].name, ckpt.optimizer.m[i]);
  for (std::size_t i = 0; i < params.size(); ++i) write_tensor(w, "adam.v." + params[i].name, ckpt.optimizer.v[i]);
  write_tensor(w, "history.loss", row_tensor(ckpt.loss_history));
  write_tensor(w, "history.train_acc", row_tensor(ckpt.train_acc_history));
  write_tensor(w, "history.val_acc", row_tensor(ckpt.val_acc_history));
  w.u32(checksum(w.str()));
  return std::move(w.str());
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic || bytes.substr(0, sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
    throw LoadError("not a checkpoint file (bad magic)");
  }
  if (bytes.size() < sizeof kMagic + 4 + 4) throw LoadError("checkpoint is truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  if (checksum(body) != ByteReader(bytes.substr(bytes.size() - 4)).u32()) {
    throw LoadError("checkpoint checksum mismatch (file truncated or corrupted)");
  }
  ByteReader r(body);
  r.bytes(sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  std::size_t num_classes = 0;
  try {
    const auto meta = ordered_json::parse(r.bytes(r.u64()));
    GceConfig config = config_from_json(meta.at("config"));
    ckpt.codec = codec_from_json(meta.at("codec"));
    ckpt.train = train_config_from_json(meta.at("train"));
    num_classes = meta.at("num_classes").get<std::size_t>();
    ckpt.epoch = meta.at("epoch").get<std::size_t>();
    ckpt.optimizer.step = meta.at("adam_step").get<std::uint64_t>();
    ckpt.model = GceModel(config, 0);
  } catch (const nlohmann::json::exception& err) {
    throw LoadError(std::string("checkpoint metadata is malformed: ") + err.what());
  } catch (const Error& err) {
    throw LoadError(std::string("checkpoint metadata is invalid: ") + err.what());
  }
  if (num_classes > 0) ckpt.model.attach_head(num_classes, 0);

  std::map<std::string, Tensor, std::less<>> tensors;
  const std::uint64_t count = r.u64();
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name(r.bytes(r.u32()));
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    std::size_t size = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d > body.size()) throw LoadError("tensor '" + name + "' has an implausible shape");
      size *= d;
    }
    if (size * 8 > body.size()) throw LoadError("tensor '" + name + "' exceeds the file size");
    std::vector<double> data(size);
    for (double& v : data) v = r.f64();
    if (!tensors.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw LoadError("tensor '" + name + "' appears twice");
    }
  }
  if (!r.done()) throw LoadError("trailing bytes after the tensor table");

  auto take = [&](const std::string& name, const Shape& shape) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw LoadError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw LoadError("tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) + ", expected " +
                      shape_to_string(shape));
    }
    Tensor t = std::move(it->second);
    tensors.erase(it);
    return t;
  };
  for (auto& p : ckpt.model.parameters()) p.value = take(p.name, p.value.shape());
  for (const auto& p : ckpt.model.parameters()) ckpt.optimizer.m.push_back(take("adam.m." + p.name, p.value.shape()));
  for (const auto& p : ckpt.model.parameters()) ckpt.optimizer.v.push_back(take("adam.v." + p.name, p.value.shape()));
  auto history = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end() || it->second.rank() != 2 || it->second.rows() != 1) {
      throw LoadError("checkpoint lacks history tensor '" + name + "'");
    }
    std::vector<double> out(it->second.data().begin(), it->second.data().end());
    tensors.erase(it);
    return out;
  };
  ckpt.loss_history = history("history.loss");
  ckpt.train_acc_history = history("history.train_acc");
  ckpt.val_acc_history = history("history.val_acc");
  if (!tensors.empty()) throw LoadError("checkpoint has unexpected tensor '" + tensors.begin()->first + "'");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const LoadError& err) {
    throw LoadError(path + ": " + err.what());
  }
}

void write_training_csv(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write log '" + path + "'");
  const bool classifier = !ckpt.train_acc_history.empty();
  out << (classifier ? "epoch,loss,train_acc,val_acc\n" : "epoch,loss\n");
  out.precision(17);
  for (std::size_t e = 0; e < ckpt.loss_history.size(); ++e) {
    out << e + 1 << ',' << ckpt.loss_history[e];
    if (classifier) {
      out << ',' << ckpt.train_acc_history.at(e) << ',';
      if (std::isfinite(ckpt.val_acc_history.at(e))) out << ckpt.val_acc_history[e];
    }
    out << '\n';
  }
}

// ---- pretraining -------------------------------------------------------------

namespace {

std::vector<const Tensor*> gradient_pointers(const Gradients& grads, std::span<const Var> bound) {
  std::vector<const Tensor*> out;
  out.reserve(bound.size());
  for (Var v : bound) out.push_back(grads.has(v) ? &grads[v] : nullptr);
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, {kShuffleStream, epoch});
  return sample_without_replacement(std::move(order), n, rng);
}

std::vector<MaskedPair> corrupt_all(std::span<const Graph> graphs, std::span<const std::size_t> ids,
                                    const TrainConfig& config, const FeatureCodec& codec, std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> prefix) {
  std::vector<MaskedPair> out(ids.size());
  const std::vector<std::uint64_t> keys(prefix);
  parallel_for(ids.size(), config.threads, [&](std::size_t k) {
    std::uint64_t s = derive_seed(seed, {kMaskStream});
    for (std::uint64_t key : keys) s = derive_seed(s, {key});
    s = derive_seed(s, {ids[k]});
    out[k] = corrupt(graphs[ids[k]], config.mask(), codec, s);
  });
  return out;
}

struct PairBatch {
  Batch masked;
  Batch truth;
};

PairBatch batch_pairs(const std::vector<MaskedPair>& pairs) {
  std::vector<Graph> masked, truth;
  masked.reserve(pairs.size());
  truth.reserve(pairs.size());
  for (const auto& p : pairs) {
    masked.push_back(p.masked);
    truth.push_back(p.ground_truth);
  }
  return {batch_graphs(masked), batch_graphs(truth)};
}

void check_dataset(std::span<const Graph> graphs, const FeatureCodec& codec, const GceModel& model) {
  if (graphs.empty()) throw ContractError("training requires a non-empty dataset");
  if (codec.node_dim() != model.config().node_in_dim || codec.edge_dim() != model.config().edge_in_dim) {
    throw ContractError("dataset codec does not match the model input widths");
  }
}

}  // namespace

void continue_pretraining(Checkpoint& ckpt, std::span<const Graph> graphs, std::size_t until_epoch,
                          const TrainObserver& observer) {
  const TrainConfig& cfg = ckpt.train;
  cfg.validate();
  check_dataset(graphs, ckpt.codec, ckpt.model);
  for (std::size_t epoch = ckpt.epoch; epoch < until_epoch; ++epoch) {
    const auto order = epoch_order(graphs.size(), cfg.seed, epoch);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> ids(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const PairBatch pb = batch_pairs(corrupt_all(graphs, ids, cfg, ckpt.codec, cfg.seed, {epoch}));
      const std::string where = "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batches + 1);
      double value = 0.0;
      try {
        value = reconstruction_step(ckpt.model, ckpt.optimizer, pb.masked, pb.truth.graph, cfg);
      } catch (const NumericError& err) {
        throw NumericError(where + ": " + err.what());
      }
      total += value;
      ++batches;
    }
    ckpt.epoch = epoch + 1;
    ckpt.loss_history.push_back(total / static_cast<double>(batches));
    if (observer.on_epoch) observer.on_epoch({ckpt.epoch, ckpt.loss_history.back()});
  }
}

Checkpoint pretrain(const Dataset& data, const GceConfig& model_config, const TrainConfig& config,
                    const TrainObserver& observer) {
  config.validate();
  GceConfig mc = model_config;
  mc.node_in_dim = data.codec.node_dim();
  mc.edge_in_dim = data.codec.edge_dim();
  Checkpoint ckpt;
  ckpt.model = GceModel(mc, derive_seed(config.seed, {kInitStream}));
  ckpt.codec = data.codec;
  ckpt.train = config;
  ckpt.optimizer = adam_init(ckpt.model.parameters());
  continue_pretraining(ckpt, data.graphs, config.epochs, observer);
  return ckpt;
}

double batch_reconstruction_loss(const GceModel& model, std::span<const Graph> graphs, const FeatureCodec& codec,
                                 const TrainConfig& config, std::uint64_t seed) {
  std::vector<std::size_t> ids(graphs.size());
  std::iota(ids.begin(), ids.end(), 0);
  const PairBatch pb = batch_pairs(corrupt_all(graphs, ids, config, codec, seed, {}));
  const Reconstruction rec = model.reconstruct(pb.masked);
  return reconstruction_loss_value(rec.x_hat, rec.e_hat, pb.truth.graph, config.lambda);
}

double reconstruction_step(GceModel& model, AdamState& state, const Batch& masked, const Graph& truth,
                           const TrainConfig& config) {
  Tape tape;
  const auto bound = model.bind(tape, true);
  const ForwardOutput out = model.forward(bound, masked);
  Var loss = reconstruction_loss(out.x_hat, out.e_hat, truth, config.lambda);
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw NumericError("loss is not finite");
  const Gradients grads = tape.backward(loss);
  adam_step(model.parameters(), gradient_pointers(grads, bound), state, config);
  return value;
}

double masked_node_accuracy(const GceModel& model, std::span<const Graph> graphs, const MaskConfig& mask,
                            const FeatureCodec& codec, std::uint64_t seed) {
  std::size_t hits = 0, total = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < graphs.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, graphs.size() - start);
    std::vector<Graph> masked, truth;
    std::vector<std::vector<std::size_t>> omegas;
    for (std::size_t k = 0; k < n; ++k) {
      MaskedPair p = corrupt(graphs[start + k], mask, codec, derive_seed(seed, {start + k}));
      masked.push_back(std::move(p.masked));
      truth.push_back(std::move(p.ground_truth));
      omegas.push_back(std::move(p.plan.masked_nodes));
    }
    const Batch b = batch_graphs(masked);
    const Reconstruction rec = model.reconstruct(b);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t node : omegas[k]) {
        const auto row = rec.x_hat.row(b.node_offsets[k] + node);
        const auto predicted = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        const auto actual = decode_one_hot(truth[k].x.row(node));
        if (actual && *actual == predicted) ++hits;
        ++total;
      }
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(total);
}

// ---- transfer and fine-tuning --------------------------------------------------

GceModel transfer_weights(const Checkpoint& pretrained, const GceConfig& config, std::size_t num_classes,
                          std::uint64_t seed, TransferReport* report) {
  const GceConfig& source = pretrained.model.config();
  GceConfig target = config;
  if (target.node_in_dim == 0) target.node_in_dim = source.node_in_dim;
  if (target.edge_in_dim == 0) target.edge_in_dim = source.edge_in_dim;
  GceModel model(target, derive_seed(seed, {kInitStream}));
  model.attach_head(num_classes, seed);
  TransferReport local;
  for (auto& p : model.parameters()) {
    if (GceModel::is_head_parameter(p.name)) {
      local.initialized.push_back(p.name);
      continue;
    }
    const NamedTensor* src = pretrained.model.find(p.name);
    if (!src) {
      if (GceModel::is_encoder_parameter(p.name)) {
        throw TransferError("pretrained checkpoint has no tensor '" + p.name + "'");
      }
      local.initialized.push_back(p.name);
      continue;
    }
    if (src->value.shape() != p.value.shape()) {
      throw TransferError("tensor '" + p.name + "' has shape " + shape_to_string(src->value.shape()) +
                          " in the checkpoint but " + shape_to_string(p.value.shape()) + " in the classifier");
    }
    p.value = src->value;
    local.loaded.push_back(p.name);
  }
  if (report) *report = std::move(local);
  return model;
}

std::size_t count_classes(std::span<const Graph> graphs) {
  int top = -1;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    if (!graphs[i].label) throw DataError("graph " + std::to_string(i) + " has no label");
    if (*graphs[i].label < 0) throw DataError("graph " + std::to_string(i) + " has a negative label");
    top = std::max(top, *graphs[i].label);
  }
  return static_cast<std::size_t>(top + 1);
}

double classification_accuracy(const GceModel& model, std::span<const Graph> graphs,
                               std::span<const std::size_t> indices) {
  if (indices.empty()) return std::nan("");
  std::size_t hits = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, indices.size() - start);
    std::vector<Graph> chunk;
    for (std::size_t k = 0; k < n; ++k) chunk.push_back(graphs[indices[start + k]]);
    const Tensor logits = model.classify(batch_graphs(chunk));
    for (std::size_t k = 0; k < n; ++k) {
      const auto row = logits.row(k);
      const auto predicted = std::max_element(row.begin(), row.end()) - row.begin();
      if (predicted == *chunk[k].label) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

namespace {

struct Split {
  std::vector<std::size_t> train, val;
};

Split split_indices(std::size_t n, const TrainConfig& cfg) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  Rng rng = make_rng(cfg.seed, {kSplitStream});
  all = sample_without_replacement(std::move(all), n, rng);
  const auto n_val = n < 2 ? 0 : static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(n)));
  Split s;
  s.val.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(all.begin() + static_cast<std::ptrdiff_t>(n_val), all.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

void check_labels(std::span<const Graph> graphs, std::size_t num_classes) {
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    if (!graphs[i].label) throw DataError("graph " + std::to_string(i) + " has no label");
    const int l = *graphs[i].label;
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw DataError("graph " + std::to_string(i) + " has label " + std::to_string(l) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace

void continue_classifier(Checkpoint& ckpt, std::span<const Graph> graphs, std::size_t until_epoch,
                         const TrainObserver& observer) {
  const TrainConfig& cfg = ckpt.train;
  cfg.validate();
  check_dataset(graphs, ckpt.codec, ckpt.model);
  if (!ckpt.model.has_head()) throw ConfigError("fine-tuning requires a classifier head");
  check_labels(graphs, ckpt.model.num_classes());
  const Split split = split_indices(graphs.size(), cfg);
  for (std::size_t epoch = ckpt.epoch; epoch < until_epoch; ++epoch) {
    auto order = epoch_order(split.train.size(), cfg.seed, epoch);
    for (auto& o : order) o = split.train[o];
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<Graph> chunk;
      std::vector<std::size_t> labels;
      for (std::size_t k = 0; k < n; ++k) {
        chunk.push_back(graphs[order[start + k]]);
        labels.push_back(static_cast<std::size_t>(*chunk.back().label));
      }
      const Batch b = batch_graphs(chunk);
      Tape tape;
      const auto bound = ckpt.model.bind(tape, true);
      Var loss = softmax_cross_entropy(ckpt.model.classifier_forward(bound, b), labels);
      const double value = loss.value().item();
      const std::string where = "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batches + 1);
      if (!std::isfinite(value)) throw NumericError(where + ": loss is not finite");
      const Gradients grads = tape.backward(loss);
      try {
        adam_step(ckpt.model.parameters(), gradient_pointers(grads, bound), ckpt.optimizer, cfg);
      } catch (const NumericError& err) {
        throw NumericError(where + ": " + err.what());
      }
      total += value;
      ++batches;
    }
    ckpt.epoch = epoch + 1;
    ckpt.loss_history.push_back(batches ? total / static_cast<double>(batches) : 0.0);
    ckpt.train_acc_history.push_back(classification_accuracy(ckpt.model, graphs, split.train));
    ckpt.val_acc_history.push_back(classification_accuracy(ckpt.model, graphs, split.val));
    if (observer.on_epoch) {
      observer.on_epoch({ckpt.epoch, ckpt.loss_history.back(), ckpt.train_acc_history.back(),
                         ckpt.val_acc_history.back()});
    }
  }
}

Checkpoint train_classifier(const Dataset& data, GceModel model, const TrainConfig& config,
                            const TrainObserver& observer) {
  config.validate();
  if (!model.has_head()) throw ConfigError("train_classifier: model has no classifier head");
  check_labels(data.graphs, model.num_classes());
  std::set<int> distinct;
  for (const Graph& g : data.graphs) distinct.insert(*g.label);
  if (distinct.size() < 2 && observer.on_warning) {
    observer.on_warning("dataset contains a single class; accuracy is trivially 1");
  }
  Checkpoint ckpt;
  ckpt.model = std::move(model);
  ckpt.codec = data.codec;
  ckpt.train = config;
  ckpt.optimizer = adam_init(ckpt.model.parameters());
  continue_classifier(ckpt, data.graphs, config.epochs, observer);
  return ckpt;
}

}  // namespace gce
