#include "gce/molecule.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>

#include "gce/error.hpp"

namespace gce {

namespace {

struct ElementInfo {
  std::string_view symbol;
  double mass;
  std::array<int, 3> valences;
  std::size_t valence_count;
};

constexpr std::array<ElementInfo, kNumElements> kElements = {{
    {"C", 12.011, {4, 0, 0}, 1},
    {"N", 14.007, {3, 0, 0}, 1},
    {"O", 15.999, {2, 0, 0}, 1},
    {"F", 18.998, {1, 0, 0}, 1},
    {"S", 32.06, {2, 4, 6}, 3},
    {"Cl", 35.45, {1, 0, 0}, 1},
    {"Br", 79.904, {1, 0, 0}, 1},
    {"P", 30.974, {3, 5, 0}, 2},
}};

const ElementInfo& info(Element e) { return kElements[static_cast<std::size_t>(e)]; }

int max_valence(Element e) {
  const auto v = allowed_valences(e);
  return v.back();
}

}  // namespace

std::string_view element_symbol(Element e) { return info(e).symbol; }

std::optional<Element> element_from_symbol(std::string_view symbol) {
  for (std::size_t i = 0; i < kElements.size(); ++i) {
    if (kElements[i].symbol == symbol) return static_cast<Element>(i);
  }
  return std::nullopt;
}

std::span<const int> allowed_valences(Element e) {
  const auto& i = info(e);
  return std::span<const int>(i.valences.data(), i.valence_count);
}

double atomic_mass(Element e) { return info(e).mass; }

// ---- Molecule ----------------------------------------------------------------

std::size_t Molecule::add_atom(Element element) {
  atoms_.push_back(element);
  return atoms_.size() - 1;
}

void Molecule::add_bond(std::size_t a, std::size_t b, int order) {
  if (a >= atoms_.size() || b >= atoms_.size()) {
    throw ContractError("bond (" + std::to_string(a) + "," + std::to_string(b) +
                        ") references a missing atom");
  }
  if (a == b) throw ContractError("bond from atom " + std::to_string(a) + " to itself");
  if (order < 1 || order > 3) throw ContractError("bond order " + std::to_string(order) + " unsupported");
  if (bond_order(a, b) != 0) {
    throw ContractError("duplicate bond between atoms " + std::to_string(a) + " and " +
                        std::to_string(b));
  }
  bonds_.push_back({a, b, order});
}

int Molecule::bond_order_sum(std::size_t atom) const {
  int total = 0;
  for (const Bond& b : bonds_) {
    if (b.a == atom || b.b == atom) total += b.order;
  }
  return total;
}

int Molecule::bond_order(std::size_t a, std::size_t b) const {
  for (const Bond& bond : bonds_) {
    if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a)) return bond.order;
  }
  return 0;
}

std::vector<std::size_t> Molecule::neighbors(std::size_t atom) const {
  std::vector<std::size_t> out;
  for (const Bond& b : bonds_) {
    if (b.a == atom) out.push_back(b.b);
    if (b.b == atom) out.push_back(b.a);
  }
  return out;
}

int Molecule::implicit_hydrogens(std::size_t atom) const {
  const int used = bond_order_sum(atom);
  for (int v : allowed_valences(atoms_.at(atom))) {
    if (v >= used) return v - used;
  }
  return max_valence(atoms_[atom]) - used;
}

std::vector<std::size_t> Molecule::component_ids() const {
  std::vector<std::size_t> parent(atoms_.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const Bond& b : bonds_) {
    const std::size_t ra = find(b.a), rb = find(b.b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<std::size_t> root_id(atoms_.size(), SIZE_MAX);
  std::vector<std::size_t> ids(atoms_.size());
  std::size_t next = 0;
  for (std::size_t i = 0; i < atoms_.size(); ++i) {
    const std::size_t r = find(i);
    if (root_id[r] == SIZE_MAX) root_id[r] = next++;
    ids[i] = root_id[r];
  }
  return ids;
}

std::size_t Molecule::count_components() const {
  auto ids = component_ids();
  return ids.empty() ? 0 : *std::max_element(ids.begin(), ids.end()) + 1;
}

Molecule permute_atoms(const Molecule& mol, std::span<const std::size_t> perm) {
  if (perm.size() != mol.num_atoms()) throw ContractError("permute_atoms: permutation size mismatch");
  std::vector<Element> atoms(mol.num_atoms());
  for (std::size_t i = 0; i < perm.size(); ++i) atoms.at(perm[i]) = mol.atom(i);
  Molecule out;
  for (Element e : atoms) out.add_atom(e);
  for (const Bond& b : mol.bonds()) out.add_bond(perm[b.a], perm[b.b], b.order);
  return out;
}

// ---- validity ----------------------------------------------------------------

std::string Violation::describe() const {
  switch (kind) {
    case Kind::kValenceExceeded:
      return "atom " + std::to_string(atom) + " exceeds its valence by " + std::to_string(excess);
    case Kind::kDisconnected:
      return "molecule has " + std::to_string(components) + " components";
    case Kind::kEmpty:
      return "molecule has no atoms";
  }
  return "unknown violation";
}

ValidityReport check_validity(const Molecule& mol) {
  ValidityReport report;
  if (mol.num_atoms() == 0) {
    report.violations.push_back({Violation::Kind::kEmpty});
  }
  for (std::size_t i = 0; i < mol.num_atoms(); ++i) {
    const int excess = mol.bond_order_sum(i) - max_valence(mol.atom(i));
    if (excess > 0) report.violations.push_back({Violation::Kind::kValenceExceeded, i, excess});
  }
  const std::size_t comps = mol.count_components();
  if (comps > 1) {
    Violation v{Violation::Kind::kDisconnected};
    v.components = comps;
    report.violations.push_back(v);
  }
  report.valid = report.violations.empty();
  return report;
}

// ---- graph bridge ------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 3> kBondNames = {"single", "double", "triple"};

}  // namespace

Graph molecule_to_graph(const Molecule& mol, const FeatureCodec& codec) {
  std::vector<std::size_t> node_cats;
  node_cats.reserve(mol.num_atoms());
  for (Element e : mol.atoms()) node_cats.push_back(codec.node_index(element_symbol(e)));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> edge_cats;
  for (const Bond& b : mol.bonds()) {
    pairs.emplace_back(std::min(b.a, b.b), std::max(b.a, b.b));
    edge_cats.push_back(codec.edge_index(kBondNames[static_cast<std::size_t>(b.order - 1)]));
  }
  return make_graph(mol.num_atoms(), pairs, node_cats, edge_cats, codec);
}

Molecule graph_to_molecule(const Graph& g, const FeatureCodec& codec) {
  Molecule mol;
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    auto cat = decode_one_hot(g.x.row(i));
    if (!cat) throw ConversionError("node " + std::to_string(i) + " is masked or not one-hot");
    auto element = element_from_symbol(codec.node_categories()[*cat]);
    if (!element) {
      throw ConversionError("node category '" + codec.node_categories()[*cat] +
                            "' is not a supported element");
    }
    mol.add_atom(*element);
  }
  for (const auto& [fwd, rev] : undirected_pairs(g)) {
    auto cat = decode_one_hot(g.e.row(fwd));
    if (!cat) throw ConversionError("edge " + std::to_string(fwd) + " is not one-hot");
    if (*cat == codec.masked_index()) {
      throw ConversionError("edge " + std::to_string(fwd) + " still carries the masked category");
    }
    if (*cat == codec.no_bond_index()) continue;
    const std::string& name = codec.edge_categories()[*cat];
    auto it = std::find(kBondNames.begin(), kBondNames.end(), name);
    if (it == kBondNames.end()) throw ConversionError("edge category '" + name + "' is not a bond order");
    mol.add_bond(g.edges[fwd].src, g.edges[fwd].dst, static_cast<int>(it - kBondNames.begin()) + 1);
  }
  return mol;
}

// ---- descriptors -------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 14> kDescriptorNames = {
    "heavy_atoms", "count_C",      "count_N",      "count_O",      "count_F",
    "count_S",     "count_Cl",     "count_Br",     "count_P",      "bonds_single",
    "bonds_double", "bonds_triple", "rings",       "molecular_weight"};

}  // namespace

std::span<const std::string_view> descriptor_names() { return kDescriptorNames; }

bool descriptor_is_integer(std::size_t index) { return index + 1 < kDescriptorNames.size(); }

std::vector<double> descriptors(const Molecule& mol) {
  if (!check_validity(mol).valid) throw ContractError("descriptors require a valid molecule");
  std::vector<double> out(kDescriptorNames.size(), 0.0);
  out[0] = static_cast<double>(mol.num_atoms());
  double weight = 0.0;
  for (std::size_t i = 0; i < mol.num_atoms(); ++i) {
    out[1 + static_cast<std::size_t>(mol.atom(i))] += 1.0;
    weight += atomic_mass(mol.atom(i)) + kHydrogenMass * mol.implicit_hydrogens(i);
  }
  for (const Bond& b : mol.bonds()) out[9 + static_cast<std::size_t>(b.order - 1)] += 1.0;
  out[12] = static_cast<double>(mol.num_bonds()) - static_cast<double>(mol.num_atoms()) +
            static_cast<double>(mol.count_components());
  out[13] = weight;
  return out;
}

// ---- files -------------------------------------------------------------------

std::vector<std::string> read_smiles_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open SMILES file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    // '#' is also the triple-bond symbol, so only a leading '#' marks a comment.
    if (first == std::string::npos || line[first] == '#') continue;
    line.erase(0, first);
    // Anything after the first whitespace is a name/comment column.
    if (auto ws = line.find_first_of(" \t\r"); ws != std::string::npos) line.erase(ws);
    out.push_back(line);
  }
  return out;
}

std::vector<Molecule> load_smiles_file(const std::string& path) {
  std::vector<Molecule> out;
  auto lines = read_smiles_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(parse_smiles(lines[i]));
    } catch (const ParseError& err) {
      throw LoadError(path + ": entry " + std::to_string(i + 1) + ": " + err.what());
    }
  }
  return out;
}

void write_smiles_file(const std::string& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write SMILES file '" + path + "'");
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace gce
