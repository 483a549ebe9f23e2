#include "gce/generation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "gce/error.hpp"
#include "gce/parallel.hpp"
#include "gce/training.hpp"

namespace gce {

using nlohmann::ordered_json;

void GenerationConfig::validate() const {
  if (shots < 1) throw ConfigError("shots must be at least 1");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in [0, 1]");
  if (num_samples < 1) throw ConfigError("num_samples must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

Graph decode_reconstruction(const Tensor& x_hat, const Tensor& e_hat, const Graph& masked,
                            const FeatureCodec& codec) {
  if (x_hat.rank() != 2 || x_hat.rows() != masked.num_nodes || x_hat.cols() != codec.node_dim() ||
      e_hat.rank() != 2 || e_hat.rows() != masked.edges.size() || e_hat.cols() != codec.edge_dim()) {
    throw DimensionError("decode_reconstruction: outputs " + shape_to_string(x_hat.shape()) + " / " +
                         shape_to_string(e_hat.shape()) + " do not match the masked graph");
  }
  std::vector<std::size_t> node_cats(masked.num_nodes);
  for (std::size_t i = 0; i < masked.num_nodes; ++i) {
    const auto row = x_hat.row(i);
    node_cats[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> edge_cats;
  for (const auto& [fwd, rev] : undirected_pairs(masked)) {
    std::size_t best = codec.edge_dim();
    double best_value = 0.0;
    for (std::size_t c = 0; c < codec.edge_dim(); ++c) {
      if (c == codec.masked_index()) continue;
      const double v = 0.5 * (e_hat(fwd, c) + e_hat(rev, c));
      if (best == codec.edge_dim() || v > best_value) {
        best = c;
        best_value = v;
      }
    }
    if (best == codec.no_bond_index()) continue;
    pairs.emplace_back(masked.edges[fwd].src, masked.edges[fwd].dst);
    edge_cats.push_back(best);
  }
  return make_graph(masked.num_nodes, pairs, node_cats, edge_cats, codec, masked.label);
}

Reconstructed reconstruct_once(const GceModel& model, const FeatureCodec& codec, const Molecule& mol,
                               const MaskConfig& mask, std::uint64_t seed) {
  Reconstructed out;
  out.pair = corrupt(molecule_to_graph(mol, codec), mask, codec, seed);
  const Graph one[] = {out.pair.masked};
  const Reconstruction rec = model.reconstruct(batch_graphs(one));
  out.decoded = decode_reconstruction(rec.x_hat, rec.e_hat, out.pair.masked, codec);
  out.molecule = graph_to_molecule(out.decoded, codec);
  return out;
}

namespace {

constexpr std::size_t kChunk = 64;

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  Tensor out = Tensor::zeros(end - begin, t.cols());
  std::copy(t.data().begin() + static_cast<std::ptrdiff_t>(begin * t.cols()),
            t.data().begin() + static_cast<std::ptrdiff_t>(end * t.cols()), out.data().begin());
  return out;
}

void run_chunk(const GceModel& model, const FeatureCodec& codec, std::span<const Molecule> seeds,
               const GenerationConfig& config, std::span<GeneratedSample> chunk) {
  std::vector<Graph> current;
  for (auto& s : chunk) {
    s.seed_index = s.draw % seeds.size();
    s.seed_smiles = write_smiles_components(seeds[s.seed_index]);
    current.push_back(molecule_to_graph(seeds[s.seed_index], codec));
  }
  for (std::size_t shot = 0; shot < config.shots; ++shot) {
    std::vector<Graph> masked;
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      ShotRecord rec;
      rec.mask_seed = derive_seed(config.seed, {chunk[k].draw, shot});
      MaskedPair pair = corrupt(current[k], config.mask(), codec, rec.mask_seed);
      rec.plan = std::move(pair.plan);
      masked.push_back(std::move(pair.masked));
      chunk[k].shots.push_back(std::move(rec));
    }
    const Batch batch = batch_graphs(masked);
    const Reconstruction out = model.reconstruct(batch);
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      const std::size_t n0 = batch.node_offsets[k], n1 = n0 + masked[k].num_nodes;
      const std::size_t e0 = batch.edge_offsets[k], e1 = e0 + masked[k].edges.size();
      current[k] = decode_reconstruction(slice_rows(out.x_hat, n0, n1), slice_rows(out.e_hat, e0, e1), masked[k],
                                         codec);
      Molecule mol;
      try {
        mol = graph_to_molecule(current[k], codec);
      } catch (const ConversionError& err) {
        throw Error(std::string("internal error: decoded graph is not a molecule: ") + err.what());
      }
      chunk[k].shots.back().output = write_smiles_components(mol);
      if (shot + 1 == config.shots) {
        chunk[k].valid = check_validity(mol).valid;
        chunk[k].smiles = chunk[k].shots.back().output;
        chunk[k].molecule = std::move(mol);
      }
    }
  }
}

}  // namespace

std::vector<GeneratedSample> generate_nshot(const GceModel& model, const FeatureCodec& codec,
                                            std::span<const Molecule> seeds, const GenerationConfig& config) {
  config.validate();
  if (seeds.empty()) throw ContractError("generation requires at least one seed molecule");
  if (codec.node_dim() != model.config().node_in_dim || codec.edge_dim() != model.config().edge_in_dim) {
    throw ContractError("codec does not match the model input widths");
  }
  std::vector<GeneratedSample> samples(config.num_samples);
  for (std::size_t d = 0; d < samples.size(); ++d) samples[d].draw = d;
  const std::size_t chunks = (samples.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, config.threads, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(samples.size(), begin + kChunk);
    run_chunk(model, codec, seeds, config, std::span(samples).subspan(begin, end - begin));
  });
  if (config.sanitize) std::erase_if(samples, [](const GeneratedSample& s) { return !s.valid; });
  return samples;
}

void write_generation(const std::string& smiles_path, const std::string& provenance_path,
                      std::span<const GeneratedSample> samples, const GenerationConfig& config) {
  std::vector<std::string> lines;
  lines.reserve(samples.size());
  for (const auto& s : samples) lines.push_back(s.smiles);
  write_smiles_file(smiles_path, lines);

  ordered_json j;
  j["format"] = "gce-generation";
  j["shots"] = config.shots;
  j["mask_rate"] = config.mask_rate;
  j["pseudo_edges"] = config.pseudo_edges;
  j["seed"] = config.seed;
  j["sanitize"] = config.sanitize;
  j["num_samples"] = config.num_samples;
  auto arr = ordered_json::array();
  for (const auto& s : samples) {
    ordered_json item;
    item["draw"] = s.draw;
    item["seed_smiles"] = s.seed_smiles;
    item["shot_count"] = s.shots.size();
    item["smiles"] = s.smiles;
    item["valid"] = s.valid;
    auto shots = ordered_json::array();
    for (const auto& r : s.shots) {
      ordered_json shot;
      shot["mask_seed"] = r.mask_seed;
      shot["masked_nodes"] = r.plan.masked_nodes;
      auto pe = ordered_json::array();
      for (const auto& [a, b] : r.plan.pseudo_edges) pe.push_back({a, b});
      shot["pseudo_edges"] = std::move(pe);
      shot["masked_edges"] = r.plan.masked_edges;
      shot["output"] = r.output;
      shots.push_back(std::move(shot));
    }
    item["shots"] = std::move(shots);
    arr.push_back(std::move(item));
  }
  j["samples"] = std::move(arr);
  std::ofstream out(provenance_path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write provenance '" + provenance_path + "'");
  out << j.dump(1) << '\n';
}

// ---- metrics -------------------------------------------------------------------

namespace {

std::vector<const Molecule*> valid_only(std::span<const Molecule> mols) {
  std::vector<const Molecule*> out;
  for (const auto& m : mols) {
    if (check_validity(m).valid) out.push_back(&m);
  }
  return out;
}

std::vector<std::string> unique_valid_keys(std::span<const Molecule> generated) {
  std::set<std::string> keys;
  for (const Molecule* m : valid_only(generated)) keys.insert(canonical_key(*m));
  return {keys.begin(), keys.end()};
}

}  // namespace

double metric_validity(std::span<const Molecule> generated) {
  if (generated.empty()) throw ContractError("validity of an empty set is undefined");
  return static_cast<double>(valid_only(generated).size()) / static_cast<double>(generated.size());
}

double uniqueness_of_keys(std::span<const std::string> keys) {
  if (keys.empty()) throw ContractError("uniqueness of an empty set is undefined");
  const std::set<std::string> distinct(keys.begin(), keys.end());
  return static_cast<double>(distinct.size()) / static_cast<double>(keys.size());
}

double metric_uniqueness(std::span<const Molecule> generated) {
  std::vector<std::string> keys;
  for (const Molecule* m : valid_only(generated)) keys.push_back(canonical_key(*m));
  if (keys.empty()) throw ContractError("uniqueness needs at least one valid molecule");
  return uniqueness_of_keys(keys);
}

double metric_novelty(std::span<const Molecule> generated, std::span<const std::string> training_keys) {
  const auto keys = unique_valid_keys(generated);
  if (keys.empty()) throw ContractError("novelty needs at least one valid molecule");
  const std::set<std::string> training(training_keys.begin(), training_keys.end());
  const auto novel = std::count_if(keys.begin(), keys.end(), [&](const std::string& k) { return !training.contains(k); });
  return static_cast<double>(novel) / static_cast<double>(keys.size());
}

KlResult metric_kl_score(std::span<const Molecule> generated, std::span<const Molecule> reference) {
  if (generated.empty() || reference.empty()) throw ContractError("KL score needs non-empty sets");
  std::vector<std::vector<double>> gen, ref;
  for (const auto& m : generated) gen.push_back(descriptors(m));
  for (const auto& m : reference) ref.push_back(descriptors(m));
  constexpr double kSmoothing = 1e-10;
  constexpr std::size_t kContinuousBins = 20;
  KlResult out;
  const std::size_t nd = descriptor_names().size();
  for (std::size_t d = 0; d < nd; ++d) {
    double lo = gen[0][d], hi = gen[0][d];
    for (const auto* set : {&gen, &ref}) {
      for (const auto& row : *set) {
        lo = std::min(lo, row[d]);
        hi = std::max(hi, row[d]);
      }
    }
    std::size_t bins;
    auto bin_of = [&](double v) -> std::size_t {
      if (descriptor_is_integer(d)) return static_cast<std::size_t>(std::llround(v - lo));
      if (hi == lo) return 0;
      const auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(kContinuousBins));
      return std::min(b, kContinuousBins - 1);
    };
    bins = descriptor_is_integer(d) ? static_cast<std::size_t>(std::llround(hi - lo)) + 1 : kContinuousBins;
    auto histogram = [&](const std::vector<std::vector<double>>& rows) {
      std::vector<double> h(bins, 0.0);
      for (const auto& row : rows) h[bin_of(row[d])] += 1.0;
      double total = 0.0;
      for (double& v : h) {
        v = v / static_cast<double>(rows.size()) + kSmoothing;
        total += v;
      }
      for (double& v : h) v /= total;
      return h;
    };
    const auto p = histogram(ref);
    const auto q = histogram(gen);
    double kl = 0.0;
    for (std::size_t b = 0; b < bins; ++b) kl += p[b] * std::log(p[b] / q[b]);
    kl = std::max(kl, 0.0);
    out.per_descriptor.push_back(kl);
    out.score += std::exp(-kl);
  }
  out.score /= static_cast<double>(nd);
  return out;
}

MetricsReport evaluate_generated(std::span<const Molecule> generated, std::span<const Molecule> training,
                                 std::span<const Molecule> reference) {
  MetricsReport r;
  r.generated = generated.size();
  r.validity = metric_validity(generated);
  const auto valid = valid_only(generated);
  r.valid = valid.size();
  if (valid.empty()) return r;

  std::vector<Molecule> valid_gen;
  for (const Molecule* m : valid) valid_gen.push_back(*m);
  const auto keys = unique_valid_keys(valid_gen);
  r.unique = keys.size();
  r.uniqueness = static_cast<double>(r.unique) / static_cast<double>(r.valid);

  std::vector<std::string> training_keys;
  for (const auto& m : training) training_keys.push_back(canonical_key(m));
  r.novelty = metric_novelty(valid_gen, training_keys);
  r.novel = static_cast<std::size_t>(std::llround(r.novelty * static_cast<double>(r.unique)));

  std::vector<Molecule> ref;
  for (const Molecule* m : valid_only(reference.empty() ? training : reference)) ref.push_back(*m);
  if (!ref.empty()) {
    KlResult kl = metric_kl_score(valid_gen, ref);
    r.kl_score = kl.score;
    r.kl_per_descriptor = std::move(kl.per_descriptor);
  }
  return r;
}

ordered_json MetricsReport::to_json() const {
  ordered_json j;
  j["generated"] = generated;
  j["valid"] = valid;
  j["unique"] = unique;
  j["novel"] = novel;
  j["validity"] = validity;
  j["uniqueness"] = uniqueness;
  j["novelty"] = novelty;
  j["kl_score"] = kl_score ? ordered_json(*kl_score) : ordered_json(nullptr);
  ordered_json per = ordered_json::object();
  const auto names = descriptor_names();
  for (std::size_t i = 0; i < kl_per_descriptor.size(); ++i) per[std::string(names[i])] = kl_per_descriptor[i];
  j["kl_per_descriptor"] = std::move(per);
  return j;
}

std::string MetricsReport::csv_header() {
  return "generated,valid,unique,novel,validity,uniqueness,novelty,kl_score";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream out;
  out.precision(17);
  out << generated << ',' << valid << ',' << unique << ',' << novel << ',' << validity << ',' << uniqueness << ','
      << novelty << ',';
  if (kl_score) out << *kl_score;
  return out.str();
}

}  // namespace gce
