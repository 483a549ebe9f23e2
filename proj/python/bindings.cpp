#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "gce/cli.hpp"
#include "gce/error.hpp"
#include "gce/generation.hpp"
#include "gce/molecule.hpp"
#include "gce/training.hpp"

namespace py = pybind11;
using namespace gce;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> out({t.rows(), t.cols()});
  auto view = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) view(r, c) = t(r, c);
  return out;
}

std::vector<Molecule> parse_all(const std::vector<std::string>& smiles) {
  std::vector<Molecule> out;
  out.reserve(smiles.size());
  for (const auto& s : smiles) out.push_back(parse_smiles(s));
  return out;
}

py::dict metrics_dict(const MetricsReport& r) {
  py::dict d;
  d["generated"] = r.generated;
  d["valid"] = r.valid;
  d["unique"] = r.unique;
  d["novel"] = r.novel;
  d["validity"] = r.validity;
  d["uniqueness"] = r.uniqueness;
  d["novelty"] = r.novelty;
  d["kl_score"] = r.kl_score ? py::cast(*r.kl_score) : py::none();
  py::dict per;
  const auto names = descriptor_names();
  for (std::size_t k = 0; k < r.kl_per_descriptor.size(); ++k) per[py::str(std::string(names[k]))] = r.kl_per_descriptor[k];
  d["kl_per_descriptor"] = per;
  return d;
}

Dataset smiles_dataset(const std::vector<std::string>& smiles) {
  Dataset ds{FeatureCodec::molecular(), {}};
  for (const auto& m : parse_all(smiles)) ds.graphs.push_back(molecule_to_graph(m, ds.codec));
  return ds;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Graph Context Encoder core";

  auto& base = py::register_exception<Error>(m, "GceError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<LoadError>(m, "LoadError", base);
  py::register_exception<DataError>(m, "DataError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<TransferError>(m, "TransferError", base);

  py::class_<Molecule>(m, "Molecule")
      .def(py::init([](const std::string& smiles) { return parse_smiles(smiles); }), py::arg("smiles"))
      .def_property_readonly("num_atoms", &Molecule::num_atoms)
      .def_property_readonly("num_bonds", &Molecule::num_bonds)
      .def_property_readonly("atoms",
                             [](const Molecule& mol) {
                               std::vector<std::string> out;
                               for (Element e : mol.atoms()) out.emplace_back(element_symbol(e));
                               return out;
                             })
      .def_property_readonly("bonds",
                             [](const Molecule& mol) {
                               std::vector<std::tuple<std::size_t, std::size_t, int>> out;
                               for (const Bond& b : mol.bonds()) out.emplace_back(b.a, b.b, b.order);
                               return out;
                             })
      .def("smiles", &write_smiles_components)
      .def("canonical_key", &canonical_key)
      .def("is_valid", [](const Molecule& mol) { return check_validity(mol).valid; })
      .def("violations",
           [](const Molecule& mol) {
             std::vector<std::string> out;
             for (const auto& v : check_validity(mol).violations) out.push_back(v.describe());
             return out;
           })
      .def("descriptors",
           [](const Molecule& mol) {
             py::dict d;
             const auto values = descriptors(mol);
             const auto names = descriptor_names();
             for (std::size_t k = 0; k < values.size(); ++k) d[py::str(std::string(names[k]))] = values[k];
             return d;
           })
      .def("__repr__", [](const Molecule& mol) { return "Molecule('" + write_smiles_components(mol) + "')"; });

  m.def("canonical_smiles", [](const std::string& s) { return write_smiles_components(parse_smiles(s)); },
        py::arg("smiles"));
  m.def("canonical_key", [](const std::string& s) { return canonical_key(parse_smiles(s)); }, py::arg("smiles"));
  m.def("is_valid", [](const std::string& s) { return check_validity(parse_smiles(s)).valid; }, py::arg("smiles"));

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_readonly("loss_history", &Checkpoint::loss_history)
      .def_readonly("train_acc_history", &Checkpoint::train_acc_history)
      .def_readonly("val_acc_history", &Checkpoint::val_acc_history)
      .def_property_readonly("num_classes", [](const Checkpoint& c) { return c.model.num_classes(); })
      .def_property_readonly("config", [](const Checkpoint& c) { return config_to_json(c.model.config()).dump(); })
      .def("parameters",
           [](const Checkpoint& c) {
             py::dict d;
             for (const auto& p : c.model.parameters()) d[py::str(p.name)] = to_numpy(p.value);
             return d;
           })
      .def("save", [](const Checkpoint& c, const std::string& path) { save_checkpoint(path, c); }, py::arg("path"));

  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "pretrain",
      [](const std::vector<std::string>& smiles, std::size_t epochs, double lr, std::size_t layers, std::size_t hidden,
         double pooling_rate, double mask_rate, std::size_t batch_size, std::uint64_t seed, std::size_t threads) {
        const Dataset ds = smiles_dataset(smiles);
        GceConfig mc = GceConfig::molecule_generation(ds.codec);
        mc.num_layers = layers;
        mc.hidden_channels = hidden;
        mc.pooling_rate = pooling_rate;
        TrainConfig t;
        t.epochs = epochs;
        t.learning_rate = lr;
        t.mask_rate = mask_rate;
        t.batch_size = batch_size;
        t.seed = seed;
        t.threads = threads;
        py::gil_scoped_release release;
        return pretrain(ds, mc, t);
      },
      py::arg("smiles"), py::arg("epochs") = 100, py::arg("lr") = 1e-2, py::arg("layers") = 6, py::arg("hidden") = 50,
      py::arg("pooling_rate") = 0.5, py::arg("mask_rate") = 0.1, py::arg("batch_size") = 32, py::arg("seed") = 0,
      py::arg("threads") = 1);

  m.def(
      "generate",
      [](const Checkpoint& ckpt, const std::vector<std::string>& seeds, std::size_t shots, std::size_t num_samples,
         double mask_rate, std::uint64_t seed, bool sanitize, std::size_t threads) {
        GenerationConfig cfg;
        cfg.shots = shots;
        cfg.num_samples = num_samples;
        cfg.mask_rate = mask_rate;
        cfg.seed = seed;
        cfg.sanitize = sanitize;
        cfg.threads = threads;
        const auto mols = parse_all(seeds);
        std::vector<GeneratedSample> out;
        {
          py::gil_scoped_release release;
          out = generate_nshot(ckpt.model, ckpt.codec, mols, cfg);
        }
        std::vector<std::string> smiles;
        for (const auto& s : out) smiles.push_back(s.smiles);
        return smiles;
      },
      py::arg("checkpoint"), py::arg("seeds"), py::arg("shots") = 1, py::arg("num_samples") = 1000,
      py::arg("mask_rate") = 0.1, py::arg("seed") = 0, py::arg("sanitize") = false, py::arg("threads") = 1);

  m.def(
      "reconstruct",
      [](const Checkpoint& ckpt, const std::string& smiles, double mask_rate, std::size_t pseudo_edges,
         std::uint64_t seed) {
        const Reconstructed r =
            reconstruct_once(ckpt.model, ckpt.codec, parse_smiles(smiles), {mask_rate, mask_rate, pseudo_edges}, seed);
        py::dict d;
        d["masked_atoms"] = r.pair.plan.masked_nodes;
        d["pseudo_edges"] = r.pair.plan.pseudo_edges;
        d["masked_bonds"] = r.pair.plan.masked_edges;
        d["smiles"] = write_smiles_components(r.molecule);
        d["valid"] = check_validity(r.molecule).valid;
        return d;
      },
      py::arg("checkpoint"), py::arg("smiles"), py::arg("mask_rate") = 0.1, py::arg("pseudo_edges") = 5,
      py::arg("seed") = 0);

  m.def(
      "evaluate",
      [](const std::vector<std::string>& generated, const std::vector<std::string>& training,
         const std::vector<std::string>& reference) {
        std::vector<Molecule> gen;
        for (const auto& s : generated) {
          try {
            gen.push_back(parse_smiles(s));
          } catch (const ParseError&) {
            gen.emplace_back();  // counted as invalid
          }
        }
        return metrics_dict(evaluate_generated(gen, parse_all(training), parse_all(reference)));
      },
      py::arg("generated"), py::arg("training"), py::arg("reference") = std::vector<std::string>{});

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::main_entry(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a gce command line; returns (exit_code, stdout, stderr).");
}
