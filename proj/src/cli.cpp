#include "gce/cli.hpp"

#include <zlib.h>

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "gce/error.hpp"
#include "gce/generation.hpp"
#include "gce/molecule.hpp"
#include "gce/training.hpp"

namespace gce::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 6> kCommandNames = {"pretrain", "finetune", "generate",
                                                           "evaluate", "reconstruct", "inspect"};

enum class Kind { kUInt, kDouble, kBool, kPreset };

constexpr unsigned bit(Command c) { return 1u << static_cast<unsigned>(c); }
constexpr unsigned P = bit(Command::kPretrain);
constexpr unsigned F = bit(Command::kFinetune);
constexpr unsigned G = bit(Command::kGenerate);
constexpr unsigned R = bit(Command::kReconstruct);

struct KeySpec {
  std::string_view name;
  Kind kind;
  unsigned commands;
};

constexpr KeySpec kKeys[] = {
    {"preset", Kind::kPreset, P},
    {"layers", Kind::kUInt, P},
    {"hidden", Kind::kUInt, P},
    {"pooling_rate", Kind::kDouble, P},
    {"trainable_epsilon", Kind::kBool, P},
    {"residual", Kind::kBool, P},
    {"encoder_edge_update", Kind::kBool, P},
    {"lr", Kind::kDouble, P | F},
    {"epochs", Kind::kUInt, P | F},
    {"batch_size", Kind::kUInt, P | F},
    {"mask_rate", Kind::kDouble, P | G | R},
    {"lambda", Kind::kDouble, P},
    {"pseudo_edges", Kind::kUInt, P | G | R},
    {"beta1", Kind::kDouble, P | F},
    {"beta2", Kind::kDouble, P | F},
    {"adam_eps", Kind::kDouble, P | F},
    {"val_fraction", Kind::kDouble, F},
    {"shots", Kind::kUInt, G},
    {"num_samples", Kind::kUInt, G},
    {"sanitize", Kind::kBool, G},
    {"seed", Kind::kUInt, P | F | G | R},
    {"threads", Kind::kUInt, P | F | G},
};

constexpr std::string_view kPresets[] = {"molecule_generation", "gine", "graph_mnist"};

const KeySpec* find_key(std::string_view name, Command c) {
  for (const auto& k : kKeys) {
    if (k.name == name && (k.commands & bit(c))) return &k;
  }
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<std::uint64_t> parse_uint(std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) return std::nullopt;
  return out;
}

std::optional<double> parse_double(std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) return std::nullopt;
  return out;
}

std::optional<bool> parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  return std::nullopt;
}

void check_value(const KeySpec& key, const std::string& value) {
  bool ok = false;
  std::string expected;
  switch (key.kind) {
    case Kind::kUInt:
      ok = parse_uint(value).has_value();
      expected = "a non-negative integer";
      break;
    case Kind::kDouble:
      ok = parse_double(value).has_value();
      expected = "a finite number";
      break;
    case Kind::kBool:
      ok = parse_bool(value).has_value();
      expected = "true or false";
      break;
    case Kind::kPreset:
      ok = std::find(std::begin(kPresets), std::end(kPresets), value) != std::end(kPresets);
      expected = "molecule_generation, gine or graph_mnist";
      break;
  }
  if (!ok) {
    throw UsageError("invalid value for '" + std::string(key.name) + "': expected " + expected + ", got '" + value +
                     "'");
  }
}

void set_checked(std::map<std::string, std::string>& settings, const std::string& key, const std::string& value,
                 Command c, const std::string& where) {
  const KeySpec* spec = find_key(key, c);
  if (!spec) {
    throw UsageError(where + "unknown key '" + key + "' for command " + std::string(command_name(c)));
  }
  check_value(*spec, value);
  settings[key] = value;
}

std::pair<std::string, std::string> split_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) return {};
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

// ---- typed access to resolved settings ---------------------------------------

class Settings {
 public:
  explicit Settings(const std::map<std::string, std::string>& s) : s_(s) {}
  bool has(const std::string& key) const { return s_.contains(key); }
  double num(const std::string& key, double def) const { return has(key) ? *parse_double(s_.at(key)) : def; }
  std::uint64_t uint(const std::string& key, std::uint64_t def) const {
    return has(key) ? *parse_uint(s_.at(key)) : def;
  }
  bool flag(const std::string& key, bool def) const { return has(key) ? *parse_bool(s_.at(key)) : def; }
  std::string str(const std::string& key, const std::string& def) const { return has(key) ? s_.at(key) : def; }

 private:
  const std::map<std::string, std::string>& s_;
};

GceConfig model_config(const Settings& s, const FeatureCodec& codec) {
  const std::string preset = s.str("preset", "molecule_generation");
  GceConfig c = preset == "gine"          ? GceConfig::gine(codec)
                : preset == "graph_mnist" ? GceConfig::graph_mnist(codec)
                                          : GceConfig::molecule_generation(codec);
  c.num_layers = s.uint("layers", c.num_layers);
  c.hidden_channels = s.uint("hidden", c.hidden_channels);
  c.pooling_rate = s.num("pooling_rate", c.pooling_rate);
  c.trainable_epsilon = s.flag("trainable_epsilon", c.trainable_epsilon);
  c.use_residual = s.flag("residual", c.use_residual);
  c.encoder_edge_update = s.flag("encoder_edge_update", c.encoder_edge_update);
  c.validate();
  return c;
}

TrainConfig train_config(const Settings& s, TrainConfig c) {
  c.learning_rate = s.num("lr", c.learning_rate);
  c.epochs = s.uint("epochs", c.epochs);
  c.batch_size = s.uint("batch_size", c.batch_size);
  c.seed = s.uint("seed", c.seed);
  c.mask_rate = s.num("mask_rate", c.mask_rate);
  c.lambda = s.num("lambda", c.lambda);
  c.pseudo_edges = s.uint("pseudo_edges", c.pseudo_edges);
  c.beta1 = s.num("beta1", c.beta1);
  c.beta2 = s.num("beta2", c.beta2);
  c.adam_eps = s.num("adam_eps", c.adam_eps);
  c.val_fraction = s.num("val_fraction", c.val_fraction);
  c.threads = s.uint("threads", c.threads);
  c.validate();
  return c;
}

GenerationConfig generation_config(const Settings& s) {
  GenerationConfig c;
  c.shots = s.uint("shots", c.shots);
  c.mask_rate = s.num("mask_rate", c.mask_rate);
  c.pseudo_edges = s.uint("pseudo_edges", c.pseudo_edges);
  c.seed = s.uint("seed", c.seed);
  c.sanitize = s.flag("sanitize", c.sanitize);
  c.num_samples = s.uint("num_samples", c.num_samples);
  c.threads = s.uint("threads", c.threads);
  c.validate();
  return c;
}

void put_model(std::map<std::string, std::string>& m, const GceConfig& c) {
  m["layers"] = fmt(std::uint64_t{c.num_layers});
  m["hidden"] = fmt(std::uint64_t{c.hidden_channels});
  m["pooling_rate"] = fmt(c.pooling_rate);
  m["trainable_epsilon"] = fmt(c.trainable_epsilon);
  m["residual"] = fmt(c.use_residual);
  m["encoder_edge_update"] = fmt(c.encoder_edge_update);
}

void put_train(std::map<std::string, std::string>& m, const TrainConfig& c, Command cmd) {
  m["lr"] = fmt(c.learning_rate);
  m["epochs"] = fmt(std::uint64_t{c.epochs});
  m["batch_size"] = fmt(std::uint64_t{c.batch_size});
  m["seed"] = fmt(c.seed);
  m["beta1"] = fmt(c.beta1);
  m["beta2"] = fmt(c.beta2);
  m["adam_eps"] = fmt(c.adam_eps);
  m["threads"] = fmt(std::uint64_t{c.threads});
  if (cmd == Command::kPretrain) {
    m["mask_rate"] = fmt(c.mask_rate);
    m["lambda"] = fmt(c.lambda);
    m["pseudo_edges"] = fmt(std::uint64_t{c.pseudo_edges});
  } else {
    m["val_fraction"] = fmt(c.val_fraction);
  }
}

// ---- files -------------------------------------------------------------------

std::uint32_t file_crc32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

bool is_path_input(const std::string& name) { return name != "smiles"; }

Dataset load_data(const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".smi" || ext == ".smiles") {
    Dataset ds;
    ds.codec = FeatureCodec::molecular();
    for (const auto& m : load_smiles_file(path)) ds.graphs.push_back(molecule_to_graph(m, ds.codec));
    return ds;
  }
  return load_dataset(path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write '" + path + "'");
  out << text;
  if (!out) throw LoadError("failed writing '" + path + "'");
}

// Tracks files written by a run so a failed run can remove them.
class Outputs {
 public:
  Outputs(const std::string& dir, const RunConfig& config) : dir_(dir) {
    for (const auto& [name, value] : config.inputs) {
      if (is_path_input(name)) inputs_.push_back(fs::weakly_canonical(value));
    }
  }
  std::string path(const std::string& name) {
    const fs::path p = fs::path(dir_) / name;
    if (std::find(inputs_.begin(), inputs_.end(), fs::weakly_canonical(p)) != inputs_.end()) {
      throw Error("output '" + p.string() + "' would overwrite an input");
    }
    written_.push_back(p);
    names_.push_back(name);
    return p.string();
  }
  const std::vector<std::string>& names() const { return names_; }
  void remove_all() {
    for (const auto& p : written_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }

 private:
  std::string dir_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> written_;
  std::vector<std::string> names_;
};

void write_manifest(Outputs& outputs, const RunConfig& config, const std::map<std::string, std::string>& resolved) {
  ordered_json j;
  j["format"] = "gce-manifest";
  j["version"] = kManifestVersion;
  j["command"] = command_name(config.command);
  ordered_json inputs = ordered_json::object();
  for (const auto& [name, value] : config.inputs) {
    if (is_path_input(name)) {
      inputs[name] = {{"path", value}, {"crc32", file_crc32(value)}};
    } else {
      inputs[name] = {{"value", value}};
    }
  }
  j["inputs"] = std::move(inputs);
  ordered_json settings = ordered_json::object();
  for (const auto& [k, v] : resolved) settings[k] = v;
  j["settings"] = std::move(settings);
  j["formats"] = {{"checkpoint", kCheckpointVersion}, {"manifest", kManifestVersion}};
  std::vector<std::string> names = outputs.names();
  j["outputs"] = names;
  write_text(outputs.path("manifest.json"), j.dump(2) + "\n");
}

void verify_manifest_inputs(const RunConfig& config, std::ostream& err) {
  if (config.manifest_path.empty()) return;
  std::ifstream in(config.manifest_path);
  const ordered_json j = ordered_json::parse(in);
  for (const auto& [name, value] : config.inputs) {
    if (!is_path_input(name) || !j["inputs"].contains(name)) continue;
    const auto& rec = j["inputs"][name];
    if (rec.value("path", std::string()) != value || !rec.contains("crc32")) continue;
    if (rec["crc32"].get<std::uint32_t>() != file_crc32(value)) {
      throw Error("input '" + value + "' has changed since the manifest was written (crc32 mismatch)");
    }
  }
  (void)err;
}

TrainObserver progress(std::ostream& err) {
  TrainObserver obs;
  obs.on_epoch = [&err](const EpochStats& s) {
    err << "epoch " << s.epoch << " loss " << s.loss;
    if (s.train_acc >= 0.0) err << " train_acc " << s.train_acc;
    if (s.val_acc >= 0.0 || std::isnan(s.val_acc)) err << " val_acc " << s.val_acc;
    err << '\n';
  };
  obs.on_warning = [&err](const std::string& w) { err << "warning: " << w << '\n'; };
  return obs;
}

void warn_ignored(const TrainConfig& requested, const TrainConfig& used, std::ostream& err) {
  TrainConfig a = requested, b = used;
  a.epochs = b.epochs;
  a.threads = b.threads;
  if (!(a == b)) err << "warning: training settings other than epochs/threads are taken from the resumed checkpoint\n";
}

// ---- commands ----------------------------------------------------------------

void cmd_pretrain(const RunConfig& rc, Outputs& outputs, std::ostream& out, std::ostream& err) {
  const Settings s(rc.settings);
  const Dataset data = load_data(rc.inputs.at("data"));
  Checkpoint ckpt;
  if (rc.inputs.contains("resume")) {
    ckpt = load_checkpoint(rc.inputs.at("resume"));
    if (ckpt.model.has_head()) throw Error("cannot resume pretraining from a classifier checkpoint");
    if (!(ckpt.codec == data.codec)) throw Error("dataset codec differs from the resumed checkpoint");
    const TrainConfig requested = train_config(s, ckpt.train);
    const std::size_t until = requested.epochs;
    if (until < ckpt.epoch) throw Error("checkpoint already has " + std::to_string(ckpt.epoch) + " epochs");
    warn_ignored(requested, ckpt.train, err);
    ckpt.train.epochs = until;
    ckpt.train.threads = requested.threads;
    continue_pretraining(ckpt, data.graphs, until, progress(err));
  } else {
    ckpt = pretrain(data, model_config(s, data.codec), train_config(s, TrainConfig{}), progress(err));
  }
  save_checkpoint(outputs.path("checkpoint.gce"), ckpt);
  write_training_csv(outputs.path("training.csv"), ckpt);
  std::map<std::string, std::string> resolved;
  resolved["preset"] = s.str("preset", "molecule_generation");
  put_model(resolved, ckpt.model.config());
  put_train(resolved, ckpt.train, Command::kPretrain);
  write_manifest(outputs, rc, resolved);
  out << "pretrained " << ckpt.epoch << " epochs, final loss " << ckpt.loss_history.back() << '\n';
}

void cmd_finetune(const RunConfig& rc, Outputs& outputs, std::ostream& out, std::ostream& err) {
  const Settings s(rc.settings);
  const Dataset data = load_data(rc.inputs.at("data"));
  Checkpoint ckpt;
  TransferReport report;
  bool transferred = false;
  if (rc.inputs.contains("resume")) {
    ckpt = load_checkpoint(rc.inputs.at("resume"));
    if (!ckpt.model.has_head()) throw Error("cannot resume fine-tuning from a pretraining checkpoint");
    if (!(ckpt.codec == data.codec)) throw Error("dataset codec differs from the resumed checkpoint");
    const TrainConfig requested = train_config(s, ckpt.train);
    if (requested.epochs < ckpt.epoch) throw Error("checkpoint already has " + std::to_string(ckpt.epoch) + " epochs");
    warn_ignored(requested, ckpt.train, err);
    ckpt.train.epochs = requested.epochs;
    ckpt.train.threads = requested.threads;
    continue_classifier(ckpt, data.graphs, requested.epochs, progress(err));
  } else {
    const Checkpoint pre = load_checkpoint(rc.inputs.at("model"));
    if (!(pre.codec == data.codec)) throw Error("dataset codec differs from the pretrained checkpoint");
    const TrainConfig cfg = train_config(s, TrainConfig{});
    GceModel model = transfer_weights(pre, pre.model.config(), count_classes(data.graphs), cfg.seed, &report);
    ckpt = train_classifier(data, std::move(model), cfg, progress(err));
    transferred = true;
  }
  save_checkpoint(outputs.path("checkpoint.gce"), ckpt);
  write_training_csv(outputs.path("training.csv"), ckpt);
  if (transferred) {
    ordered_json t;
    t["loaded"] = report.loaded;
    t["initialized"] = report.initialized;
    write_text(outputs.path("transfer.json"), t.dump(2) + "\n");
  }
  std::map<std::string, std::string> resolved;
  put_train(resolved, ckpt.train, Command::kFinetune);
  write_manifest(outputs, rc, resolved);
  out << "fine-tuned " << ckpt.epoch << " epochs";
  if (!ckpt.train_acc_history.empty()) out << ", train accuracy " << ckpt.train_acc_history.back();
  if (!ckpt.val_acc_history.empty() && !std::isnan(ckpt.val_acc_history.back())) {
    out << ", validation accuracy " << ckpt.val_acc_history.back();
  }
  out << '\n';
}

void write_metrics(Outputs& outputs, const MetricsReport& report) {
  write_text(outputs.path("metrics.json"), report.to_json().dump(2) + "\n");
  write_text(outputs.path("metrics.csv"), MetricsReport::csv_header() + "\n" + report.csv_row() + "\n");
}

void cmd_generate(const RunConfig& rc, Outputs& outputs, std::ostream& out, std::ostream&) {
  const Settings s(rc.settings);
  const Checkpoint ckpt = load_checkpoint(rc.inputs.at("model"));
  const std::vector<Molecule> seeds = load_smiles_file(rc.inputs.at("seeds"));
  const GenerationConfig cfg = generation_config(s);
  const auto samples = generate_nshot(ckpt.model, ckpt.codec, seeds, cfg);
  write_generation(outputs.path("generated.smi"), outputs.path("provenance.json"), samples, cfg);
  const auto valid = std::count_if(samples.begin(), samples.end(), [](const auto& x) { return x.valid; });
  out << "generated " << samples.size() << " molecules (" << valid << " valid)\n";
  if (rc.inputs.contains("training") && !samples.empty()) {
    std::vector<Molecule> mols;
    for (const auto& x : samples) mols.push_back(x.molecule);
    const MetricsReport report = evaluate_generated(mols, load_smiles_file(rc.inputs.at("training")));
    write_metrics(outputs, report);
    out << report.to_json().dump(2) << '\n';
  }
  std::map<std::string, std::string> resolved;
  resolved["shots"] = fmt(std::uint64_t{cfg.shots});
  resolved["mask_rate"] = fmt(cfg.mask_rate);
  resolved["pseudo_edges"] = fmt(std::uint64_t{cfg.pseudo_edges});
  resolved["seed"] = fmt(cfg.seed);
  resolved["sanitize"] = fmt(cfg.sanitize);
  resolved["num_samples"] = fmt(std::uint64_t{cfg.num_samples});
  resolved["threads"] = fmt(std::uint64_t{cfg.threads});
  write_manifest(outputs, rc, resolved);
}

void cmd_evaluate(const RunConfig& rc, Outputs& outputs, std::ostream& out, std::ostream& err) {
  std::vector<Molecule> generated;
  std::size_t unparsable = 0;
  for (const auto& line : read_smiles_lines(rc.inputs.at("generated"))) {
    try {
      generated.push_back(parse_smiles(line));
    } catch (const ParseError&) {
      generated.emplace_back();  // empty molecule, counted as invalid
      ++unparsable;
    }
  }
  if (unparsable > 0) err << "warning: " << unparsable << " unparsable SMILES counted as invalid\n";
  const std::vector<Molecule> reference = load_smiles_file(rc.inputs.at("reference"));
  const std::vector<Molecule> training =
      rc.inputs.contains("training") ? load_smiles_file(rc.inputs.at("training")) : reference;
  const MetricsReport report = evaluate_generated(generated, training, reference);
  out << report.to_json().dump(2) << '\n';
  if (!rc.out_dir.empty()) {
    write_metrics(outputs, report);
    write_manifest(outputs, rc, {});
  }
}

void cmd_reconstruct(const RunConfig& rc, std::ostream& out) {
  const Settings s(rc.settings);
  const Checkpoint ckpt = load_checkpoint(rc.inputs.at("model"));
  const Molecule mol = parse_smiles(rc.inputs.at("smiles"));
  const MaskConfig mask{s.num("mask_rate", 0.1), s.num("mask_rate", 0.1), s.uint("pseudo_edges", 5)};
  if (!(mask.node_rate >= 0.0 && mask.node_rate <= 1.0)) throw ConfigError("mask_rate must lie in [0, 1]");
  const Reconstructed r = reconstruct_once(ckpt.model, ckpt.codec, mol, mask, s.uint("seed", 0));
  const auto& plan = r.pair.plan;
  const auto& edges = r.pair.masked.edges;
  out << "input:         " << write_smiles_components(mol) << '\n';
  out << "masked atoms: ";
  for (auto i : plan.masked_nodes) out << ' ' << i << ':' << element_symbol(mol.atoms()[i]);
  out << "\nmasked bonds: ";
  for (const auto& [fwd, rev] : undirected_pairs(r.pair.masked)) {
    (void)rev;
    const auto& e = edges[fwd];
    if (r.pair.masked.e(fwd, ckpt.codec.masked_index()) == 1.0 &&
        r.pair.ground_truth.e(fwd, ckpt.codec.no_bond_index()) != 1.0) {
      out << ' ' << e.src << '-' << e.dst;
    }
  }
  out << "\npseudo-edges: ";
  for (const auto& [a, b] : plan.pseudo_edges) out << ' ' << a << '-' << b;
  out << "\nreconstructed: " << write_smiles_components(r.molecule) << '\n';
  out << "valid:         " << (check_validity(r.molecule).valid ? "yes" : "no") << '\n';
}

void cmd_inspect(const RunConfig& rc, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(rc.inputs.at("model"));
  ordered_json meta;
  meta["epoch"] = ckpt.epoch;
  meta["adam_step"] = ckpt.optimizer.step;
  meta["num_classes"] = ckpt.model.num_classes();
  meta["config"] = config_to_json(ckpt.model.config());
  meta["codec"] = codec_to_json(ckpt.codec);
  meta["train"] = train_config_to_json(ckpt.train);
  if (!ckpt.loss_history.empty()) meta["final_loss"] = ckpt.loss_history.back();
  out << meta.dump(2) << '\n';
  std::size_t total = 0;
  out << std::left << std::setw(28) << "parameter" << std::setw(12) << "shape" << std::right << std::setw(14)
      << "mean" << std::setw(14) << "std" << '\n';
  for (const auto& p : ckpt.model.parameters()) {
    const auto d = p.value.data();
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(std::max<std::size_t>(d.size(), 1));
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    var /= static_cast<double>(std::max<std::size_t>(d.size(), 1));
    total += d.size();
    out << std::left << std::setw(28) << p.name << std::setw(12) << shape_to_string(p.value.shape()) << std::right
        << std::setw(14) << std::setprecision(6) << mean << std::setw(14) << std::sqrt(var) << '\n';
  }
  out << "total parameters: " << total << '\n';
}

// ---- argument parsing helpers ------------------------------------------------

struct InputFlag {
  const char* flag;
  const char* name;
  const char* help;
};

std::vector<InputFlag> input_flags(Command c) {
  switch (c) {
    case Command::kPretrain:
      return {{"--data", "data", "dataset (.jsonl) or SMILES file (.smi)"},
              {"--resume", "resume", "pretraining checkpoint to continue"}};
    case Command::kFinetune:
      return {{"--data", "data", "labelled dataset (.jsonl)"},
              {"--model", "model", "pretrained checkpoint"},
              {"--resume", "resume", "classifier checkpoint to continue"}};
    case Command::kGenerate:
      return {{"--model", "model", "pretrained checkpoint"},
              {"--seeds", "seeds", "seed molecules (.smi)"},
              {"--training", "training", "training SMILES for metrics"}};
    case Command::kEvaluate:
      return {{"--generated", "generated", "generated SMILES"},
              {"--reference", "reference", "reference SMILES"},
              {"--training", "training", "training SMILES for novelty (default: reference)"}};
    case Command::kReconstruct:
      return {{"--model", "model", "pretrained checkpoint"}, {"--smiles", "smiles", "input molecule"}};
    case Command::kInspect:
      return {{"--model", "model", "checkpoint"}};
  }
  return {};
}

std::vector<std::vector<std::string>> required_inputs(Command c) {
  switch (c) {
    case Command::kPretrain: return {{"data"}};
    case Command::kFinetune: return {{"data"}, {"model", "resume"}};
    case Command::kGenerate: return {{"model"}, {"seeds"}};
    case Command::kEvaluate: return {{"generated"}, {"reference"}};
    case Command::kReconstruct: return {{"model"}, {"smiles"}};
    case Command::kInspect: return {{"model"}};
  }
  return {};
}

bool needs_out_dir(Command c) {
  return c == Command::kPretrain || c == Command::kFinetune || c == Command::kGenerate;
}

bool has_key(Command c, std::string_view key) { return find_key(key, c) != nullptr; }

}  // namespace

std::string_view command_name(Command c) { return kCommandNames[static_cast<std::size_t>(c)]; }

std::vector<std::string> allowed_keys(Command c) {
  std::vector<std::string> out;
  for (const auto& k : kKeys) {
    if (k.commands & bit(c)) out.emplace_back(k.name);
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path, Command c) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(no) + ": ";
    const auto [key, value] = split_assignment(line);
    if (key.empty()) throw UsageError(where + "expected key=value");
    try {
      set_checked(out, key, value, c, where);
    } catch (const UsageError& e) {
      if (std::string_view(e.what()).starts_with(where)) throw;
      throw UsageError(where + e.what());
    }
  }
  return out;
}

RunConfig parse_args(const std::vector<std::string>& args) {
  CLI::App app{"Graph Context Encoder toolkit", "gce"};
  app.require_subcommand(0, 1);
  app.set_help_flag("-h,--help", "print help");

  struct Sub {
    Command command;
    CLI::App* app;
    std::map<std::string, std::string> inputs;
    std::string out, config, manifest;
    std::vector<std::string> sets;
    std::string seed, threads, mask_rate;
  };
  std::vector<std::unique_ptr<Sub>> subs;
  const std::map<Command, std::string> descriptions = {
      {Command::kPretrain, "self-supervised reconstruction pretraining"},
      {Command::kFinetune, "transfer pretrained weights and train a graph classifier"},
      {Command::kGenerate, "n-shot molecule generation from seed molecules"},
      {Command::kEvaluate, "validity/uniqueness/novelty/KL metrics for generated SMILES"},
      {Command::kReconstruct, "mask and reconstruct a single molecule"},
      {Command::kInspect, "print checkpoint metadata and parameter statistics"},
  };
  for (const auto& [cmd, desc] : descriptions) {
    auto sub = std::make_unique<Sub>();
    sub->command = cmd;
    sub->app = app.add_subcommand(std::string(command_name(cmd)), desc);
    for (const auto& f : input_flags(cmd)) sub->app->add_option(f.flag, sub->inputs[f.name], f.help);
    if (needs_out_dir(cmd) || cmd == Command::kEvaluate) {
      sub->app->add_option("--out", sub->out, "output directory");
    }
    if (!allowed_keys(cmd).empty()) {
      sub->app->add_option("--config", sub->config, "key=value settings file");
      sub->app->add_option("--set", sub->sets, "override a setting (key=value), repeatable")
          ->expected(1)
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    }
    if (needs_out_dir(cmd) || cmd == Command::kEvaluate) {
      sub->app->add_option("--manifest", sub->manifest, "rerun from a manifest.json");
    }
    if (has_key(cmd, "seed")) sub->app->add_option("--seed", sub->seed, "random seed");
    if (has_key(cmd, "threads")) sub->app->add_option("--threads", sub->threads, "worker thread cap");
    if (cmd == Command::kReconstruct) sub->app->add_option("--mask-rate", sub->mask_rate, "mask rate");
    subs.push_back(std::move(sub));
  }

  std::vector<const char*> argv{"gce"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    for (const auto& sub : subs) {
      if (sub->app->parsed()) throw HelpRequested{sub->app->help()};
    }
    throw HelpRequested{app.help()};
  } catch (const CLI::CallForAllHelp&) {
    throw HelpRequested{app.help("", CLI::AppFormatMode::All)};
  } catch (const CLI::ParseError& e) {
    const CLI::App* shown = &app;
    for (const auto& sub : subs) {
      if (sub->app->parsed()) shown = sub->app;
    }
    throw UsageError(e.what(), shown->help());
  }

  const Sub* chosen = nullptr;
  for (const auto& sub : subs) {
    if (sub->app->parsed()) chosen = sub.get();
  }
  if (!chosen) throw UsageError("no command given", app.help());
  const std::string usage = chosen->app->help();

  RunConfig rc;
  rc.command = chosen->command;
  rc.out_dir = chosen->out;
  rc.config_path = chosen->config;
  rc.manifest_path = chosen->manifest;

  if (!rc.manifest_path.empty()) {
    std::ifstream in(rc.manifest_path);
    if (!in) throw UsageError("cannot open manifest '" + rc.manifest_path + "'", usage);
    ordered_json j;
    try {
      j = ordered_json::parse(in);
    } catch (const std::exception& e) {
      throw UsageError("manifest '" + rc.manifest_path + "' is not valid JSON: " + e.what(), usage);
    }
    if (j.value("format", std::string()) != "gce-manifest") {
      throw UsageError("'" + rc.manifest_path + "' is not a gce manifest", usage);
    }
    if (j.value("command", std::string()) != command_name(rc.command)) {
      throw UsageError("manifest was written by '" + j.value("command", std::string()) + "', not '" +
                           std::string(command_name(rc.command)) + "'",
                       usage);
    }
    for (const auto& [name, rec] : j["inputs"].items()) {
      rc.inputs[name] = rec.contains("path") ? rec["path"].get<std::string>() : rec["value"].get<std::string>();
    }
    for (const auto& [key, value] : j["settings"].items()) {
      set_checked(rc.settings, key, value.get<std::string>(), rc.command, "manifest: ");
    }
  }
  for (const auto& [name, value] : chosen->inputs) {
    if (!value.empty()) rc.inputs[name] = value;
  }
  if (!rc.config_path.empty()) {
    for (const auto& [k, v] : read_config_file(rc.config_path, rc.command)) rc.settings[k] = v;
  }
  for (const auto& item : chosen->sets) {
    const auto [key, value] = split_assignment(item);
    if (key.empty()) throw UsageError("--set expects key=value, got '" + item + "'", usage);
    set_checked(rc.settings, key, value, rc.command, "");
  }
  if (!chosen->seed.empty()) set_checked(rc.settings, "seed", chosen->seed, rc.command, "--seed: ");
  if (!chosen->threads.empty()) set_checked(rc.settings, "threads", chosen->threads, rc.command, "--threads: ");
  if (!chosen->mask_rate.empty()) set_checked(rc.settings, "mask_rate", chosen->mask_rate, rc.command, "--mask-rate: ");

  for (const auto& alternatives : required_inputs(rc.command)) {
    const bool any = std::any_of(alternatives.begin(), alternatives.end(),
                                 [&](const std::string& n) { return rc.inputs.contains(n); });
    if (!any) throw UsageError("missing required input --" + alternatives.front(), usage);
  }
  if (rc.command == Command::kFinetune && rc.inputs.contains("model") && rc.inputs.contains("resume")) {
    throw UsageError("--model and --resume are mutually exclusive", usage);
  }
  for (const auto& [name, value] : rc.inputs) {
    if (is_path_input(name) && !fs::is_regular_file(value)) {
      throw UsageError("input file not found: --" + name + " '" + value + "'", usage);
    }
  }
  if (needs_out_dir(rc.command) && rc.out_dir.empty()) throw UsageError("missing required --out", usage);
  return rc;
}

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  Outputs outputs(config.out_dir, config);
  try {
    verify_manifest_inputs(config, err);
    if (!config.out_dir.empty()) fs::create_directories(config.out_dir);
    switch (config.command) {
      case Command::kPretrain: cmd_pretrain(config, outputs, out, err); break;
      case Command::kFinetune: cmd_finetune(config, outputs, out, err); break;
      case Command::kGenerate: cmd_generate(config, outputs, out, err); break;
      case Command::kEvaluate: cmd_evaluate(config, outputs, out, err); break;
      case Command::kReconstruct: cmd_reconstruct(config, out); break;
      case Command::kInspect: cmd_inspect(config, out); break;
    }
  } catch (const std::exception& e) {
    outputs.remove_all();
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  try {
    rc = parse_args(args);
  } catch (const HelpRequested& h) {
    out << h.text;
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    if (!e.usage().empty()) err << '\n' << e.usage();
    return 2;
  }
  return run(rc, out, err);
}

}  // namespace gce::cli
