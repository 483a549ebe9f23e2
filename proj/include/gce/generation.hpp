#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gce/graph.hpp"
#include "gce/masking.hpp"
#include "gce/model.hpp"
#include "gce/molecule.hpp"

namespace gce {

struct GenerationConfig {
  std::size_t shots = 1;
  double mask_rate = 0.1;
  std::size_t pseudo_edges = 5;
  std::uint64_t seed = 0;
  bool sanitize = false;  // drop invalid outputs instead of keeping them
  std::size_t num_samples = 1000;
  std::size_t threads = 1;

  void validate() const;
  MaskConfig mask() const { return {mask_rate, mask_rate, pseudo_edges}; }
};

// Node argmax per row; each undirected edge takes the argmax (masked
// category excluded) of its two directed rows averaged; no_bond edges are
// dropped. The result is a clean graph over the same nodes.
Graph decode_reconstruction(const Tensor& x_hat, const Tensor& e_hat, const Graph& masked,
                            const FeatureCodec& codec);

struct ShotRecord {
  std::uint64_t mask_seed = 0;
  MaskPlan plan;
  std::string output;  // SMILES after this shot
};

struct GeneratedSample {
  std::size_t draw = 0;
  std::size_t seed_index = 0;
  std::string seed_smiles;
  std::vector<ShotRecord> shots;
  Molecule molecule;
  std::string smiles;
  bool valid = false;
};

// Draw d starts from seeds[d % seeds.size()] and runs `shots` rounds of
// corrupt -> reconstruct -> decode, each round feeding the next. Draws are
// processed in fixed chunks so results do not depend on the thread count.
std::vector<GeneratedSample> generate_nshot(const GceModel& model, const FeatureCodec& codec,
                                            std::span<const Molecule> seeds, const GenerationConfig& config);

// One corrupt -> reconstruct -> decode round on a single molecule.
struct Reconstructed {
  MaskedPair pair;
  Graph decoded;
  Molecule molecule;
};
Reconstructed reconstruct_once(const GceModel& model, const FeatureCodec& codec, const Molecule& mol,
                               const MaskConfig& mask, std::uint64_t seed);

void write_generation(const std::string& smiles_path, const std::string& provenance_path,
                      std::span<const GeneratedSample> samples, const GenerationConfig& config);

// ---- metrics -------------------------------------------------------------------

double metric_validity(std::span<const Molecule> generated);
// Distinct canonical keys among valid molecules over the valid count.
double metric_uniqueness(std::span<const Molecule> generated);
double uniqueness_of_keys(std::span<const std::string> keys);
// Unique valid molecules absent from the training keys over unique valid.
double metric_novelty(std::span<const Molecule> generated, std::span<const std::string> training_keys);

struct KlResult {
  double score = 0.0;
  std::vector<double> per_descriptor;  // KL(reference || generated)
};

// Both sets must be non-empty and valid.
KlResult metric_kl_score(std::span<const Molecule> generated, std::span<const Molecule> reference);

struct MetricsReport {
  std::size_t generated = 0;
  std::size_t valid = 0;
  std::size_t unique = 0;
  std::size_t novel = 0;
  double validity = 0.0;
  double uniqueness = 0.0;
  double novelty = 0.0;
  std::optional<double> kl_score;  // absent when no generated molecule is valid
  std::vector<double> kl_per_descriptor;

  nlohmann::ordered_json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

// Novelty against `training`, KL against `reference` (the training set when
// empty). Invalid molecules in either reference set are ignored.
MetricsReport evaluate_generated(std::span<const Molecule> generated, std::span<const Molecule> training,
                                 std::span<const Molecule> reference = {});

}  // namespace gce
