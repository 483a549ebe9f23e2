#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gce/graph.hpp"

namespace gce {

enum class Element : std::uint8_t { C, N, O, F, S, Cl, Br, P };

inline constexpr std::size_t kNumElements = 8;

std::string_view element_symbol(Element e);
std::optional<Element> element_from_symbol(std::string_view symbol);
// Allowed valences in increasing order (S: 2, 4, 6; P: 3, 5).
std::span<const int> allowed_valences(Element e);
double atomic_mass(Element e);
inline constexpr double kHydrogenMass = 1.008;

struct Bond {
  std::size_t a = 0;
  std::size_t b = 0;
  int order = 1;
  bool operator==(const Bond&) const = default;
};

/// Heavy-atom molecule with explicit bond orders; hydrogens are implicit.
class Molecule {
 public:
  std::size_t add_atom(Element element);
  // Rejects self bonds, out-of-range endpoints, duplicates and orders
  // outside 1..3.
  void add_bond(std::size_t a, std::size_t b, int order);

  std::span<const Element> atoms() const noexcept { return atoms_; }
  std::span<const Bond> bonds() const noexcept { return bonds_; }
  std::size_t num_atoms() const noexcept { return atoms_.size(); }
  std::size_t num_bonds() const noexcept { return bonds_.size(); }
  Element atom(std::size_t i) const { return atoms_.at(i); }

  int bond_order_sum(std::size_t atom) const;
  // Order of the bond between a and b, 0 when absent.
  int bond_order(std::size_t a, std::size_t b) const;
  std::vector<std::size_t> neighbors(std::size_t atom) const;

  // Smallest allowed valence not below the bond-order sum minus that sum.
  // Negative (the excess) when every allowed valence is exceeded.
  int implicit_hydrogens(std::size_t atom) const;

  std::size_t count_components() const;
  // Component id per atom, numbered by lowest atom index.
  std::vector<std::size_t> component_ids() const;

 private:
  std::vector<Element> atoms_;
  std::vector<Bond> bonds_;
};

// Relabel: new index of old atom i is perm[i].
Molecule permute_atoms(const Molecule& mol, std::span<const std::size_t> perm);

// ---- validity ----------------------------------------------------------------

struct Violation {
  enum class Kind { kValenceExceeded, kDisconnected, kEmpty };
  Kind kind;
  std::size_t atom = 0;   // for kValenceExceeded
  int excess = 0;         // bond-order sum minus maximum valence
  std::size_t components = 0;  // for kDisconnected
  std::string describe() const;
};

struct ValidityReport {
  bool valid = true;
  std::vector<Violation> violations;
};

// Valid iff non-empty, connected, and no atom exceeds its maximum valence.
ValidityReport check_validity(const Molecule& mol);

// ---- SMILES ------------------------------------------------------------------

// Kekulised subset: C N O F S P Cl Br, bonds - = #, branches, ring labels
// 1-9 and %10-%99, and '.' between disconnected components.
Molecule parse_smiles(std::string_view text);

// Canonical SMILES of a connected molecule.
std::string write_smiles(const Molecule& mol);
// Canonical SMILES of each component, sorted and joined with '.'.
std::string write_smiles_components(const Molecule& mol);

// Canonical atom ranking of a molecule (rank per atom). Isomorphic molecules
// receive rankings that map them onto the same labelled graph.
std::vector<std::size_t> canonical_ranking(const Molecule& mol);

// Isomorphism-invariant identifier.
std::string canonical_key(const Molecule& mol);

// Brute-force isomorphism test over all atom permutations (small molecules).
bool isomorphic(const Molecule& a, const Molecule& b);

// ---- graph bridge ------------------------------------------------------------

Graph molecule_to_graph(const Molecule& mol, const FeatureCodec& codec);
// Drops no_bond edges; masked edges or masked node rows raise ConversionError.
Molecule graph_to_molecule(const Graph& g, const FeatureCodec& codec);

// ---- descriptors -------------------------------------------------------------

// heavy_atoms, count_<element> x8, bonds_single, bonds_double, bonds_triple,
// rings, molecular_weight.
std::span<const std::string_view> descriptor_names();
std::vector<double> descriptors(const Molecule& mol);
// True for every descriptor except molecular weight.
bool descriptor_is_integer(std::size_t index);

// ---- files -------------------------------------------------------------------

// One SMILES per line (first whitespace-separated token); lines starting with
// '#' and blank lines are ignored.
std::vector<std::string> read_smiles_lines(const std::string& path);
std::vector<Molecule> load_smiles_file(const std::string& path);
void write_smiles_file(const std::string& path, std::span<const std::string> lines);

}  // namespace gce
