#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gce/graph.hpp"
#include "gce/masking.hpp"
#include "gce/model.hpp"

namespace gce {

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double mask_rate = 0.1;  // nodes and original edges
  double lambda = 2.0;
  std::size_t pseudo_edges = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double val_fraction = 0.2;  // fine-tuning only
  std::size_t threads = 1;

  void validate() const;
  MaskConfig mask() const { return {mask_rate, mask_rate, pseudo_edges}; }
  bool operator==(const TrainConfig&) const = default;
};

// ---- optimizer ---------------------------------------------------------------

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

AdamState adam_init(std::span<const NamedTensor> params);

// One bias-corrected Adam update. A null gradient leaves that parameter and
// its moments untouched. Non-finite gradients raise NumericError naming the
// parameter before anything is modified.
void adam_step(std::span<NamedTensor> params, std::span<const Tensor* const> grads, AdamState& state,
               const TrainConfig& config);

// ---- checkpoints -------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  GceModel model;
  FeatureCodec codec;
  TrainConfig train;
  AdamState optimizer;
  std::size_t epoch = 0;  // completed epochs
  std::vector<double> loss_history;
  std::vector<double> train_acc_history;  // classifier runs only
  std::vector<double> val_acc_history;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::ordered_json config_to_json(const GceConfig& config);
GceConfig config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json codec_to_json(const FeatureCodec& codec);
FeatureCodec codec_from_json(const nlohmann::ordered_json& j);

// epoch,loss[,train_acc,val_acc]
void write_training_csv(const std::string& path, const Checkpoint& ckpt);

// ---- drivers -----------------------------------------------------------------

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double train_acc = -1.0;  // classifier runs only
  double val_acc = -1.0;
};

struct TrainObserver {
  std::function<void(const EpochStats&)> on_epoch;
  std::function<void(const std::string&)> on_warning;
};

// Fresh model seeded from config.seed, trained for config.epochs.
Checkpoint pretrain(const Dataset& data, const GceConfig& model_config, const TrainConfig& config,
                    const TrainObserver& observer = {});

// Runs further epochs until `ckpt.epoch == until_epoch`, continuing the same
// seed streams (epoch e always draws the same shuffle and masks).
void continue_pretraining(Checkpoint& ckpt, std::span<const Graph> graphs, std::size_t until_epoch,
                          const TrainObserver& observer = {});

// Reconstruction loss of all `graphs` as one batch, each corrupted with a
// stream derived from `seed`.
double batch_reconstruction_loss(const GceModel& model, std::span<const Graph> graphs, const FeatureCodec& codec,
                                 const TrainConfig& config, std::uint64_t seed);

// Forward, loss, backward and one Adam update on a fixed batch. Returns the
// loss before the update.
double reconstruction_step(GceModel& model, AdamState& state, const Batch& masked, const Graph& truth,
                           const TrainConfig& config);

// Fraction of masked nodes whose reconstructed argmax equals the true
// category, over one corruption of every graph (seeded).
double masked_node_accuracy(const GceModel& model, std::span<const Graph> graphs, const MaskConfig& mask,
                            const FeatureCodec& codec, std::uint64_t seed);

struct TransferReport {
  std::vector<std::string> loaded;
  std::vector<std::string> initialized;
};

// Classifier built from `config` whose non-head tensors are copied from the
// pretrained checkpoint; the head is freshly initialised from `seed`.
GceModel transfer_weights(const Checkpoint& pretrained, const GceConfig& config, std::size_t num_classes,
                          std::uint64_t seed, TransferReport* report = nullptr);

// Distinct class count implied by the labels (max label + 1).
std::size_t count_classes(std::span<const Graph> graphs);

// Supervised fine-tuning with softmax cross-entropy; records loss and
// train/validation accuracy per epoch.
Checkpoint train_classifier(const Dataset& data, GceModel model, const TrainConfig& config,
                            const TrainObserver& observer = {});

// Resumes a classifier run up to `until_epoch`.
void continue_classifier(Checkpoint& ckpt, std::span<const Graph> graphs, std::size_t until_epoch,
                         const TrainObserver& observer = {});

double classification_accuracy(const GceModel& model, std::span<const Graph> graphs,
                               std::span<const std::size_t> indices);

}  // namespace gce
