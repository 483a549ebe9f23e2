#pragma once

// Reference implementations used only by tests: brute-force isomorphism and
// exhaustive small-molecule enumeration.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "gce/molecule.hpp"
#include "gce/rng.hpp"

namespace gce::test {

// Order matrix with element labels; compared under every atom permutation.
inline bool brute_isomorphic(const Molecule& a, const Molecule& b) {
  const std::size_t n = a.num_atoms();
  if (n != b.num_atoms() || a.num_bonds() != b.num_bonds()) return false;
  std::vector<int> ma(n * n, 0), mb(n * n, 0);
  for (const auto& bd : a.bonds()) ma[bd.a * n + bd.b] = ma[bd.b * n + bd.a] = bd.order;
  for (const auto& bd : b.bonds()) mb[bd.a * n + bd.b] = mb[bd.b * n + bd.a] = bd.order;
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  do {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (a.atom(i) != b.atom(p[i])) ok = false;
      for (std::size_t j = i + 1; j < n && ok; ++j) ok = ma[i * n + j] == mb[p[i] * n + p[j]];
    }
    if (ok) return true;
  } while (std::next_permutation(p.begin(), p.end()));
  return false;
}

// Backtracking isomorphism for molecules too large for full enumeration:
// atoms of `a` are mapped in order onto unused atoms of `b` with the same
// element and bond-order profile, checking every bond to an already-mapped
// atom.
inline bool backtrack_isomorphic(const Molecule& a, const Molecule& b) {
  const std::size_t n = a.num_atoms();
  if (n != b.num_atoms() || a.num_bonds() != b.num_bonds()) return false;
  auto profile = [](const Molecule& m, std::size_t i) {
    std::vector<int> o;
    for (std::size_t j : m.neighbors(i)) o.push_back(m.bond_order(i, j));
    std::sort(o.begin(), o.end());
    return std::make_pair(static_cast<int>(m.atom(i)), o);
  };
  std::vector<std::pair<int, std::vector<int>>> pa, pb;
  for (std::size_t i = 0; i < n; ++i) {
    pa.push_back(profile(a, i));
    pb.push_back(profile(b, i));
  }
  std::vector<std::size_t> map(n, SIZE_MAX);
  std::vector<bool> used(n, false);
  auto extend = [&](auto& self, std::size_t i) -> bool {
    if (i == n) return true;
    for (std::size_t c = 0; c < n; ++c) {
      if (used[c] || pa[i] != pb[c]) continue;
      bool ok = true;
      for (std::size_t j = 0; j < i && ok; ++j) ok = a.bond_order(i, j) == b.bond_order(c, map[j]);
      if (!ok) continue;
      map[i] = c;
      used[c] = true;
      if (self(self, i + 1)) return true;
      used[c] = false;
    }
    return false;
  };
  return extend(extend, 0);
}

// Isomorphism-invariant signature used to limit pairwise comparisons.
inline std::string invariant_signature(const Molecule& m) {
  std::vector<std::tuple<int, int, std::vector<int>>> atoms;
  for (std::size_t i = 0; i < m.num_atoms(); ++i) {
    std::vector<int> orders;
    for (const auto& b : m.bonds()) {
      if (b.a == i || b.b == i) orders.push_back(b.order);
    }
    std::sort(orders.begin(), orders.end());
    atoms.emplace_back(static_cast<int>(m.atom(i)), static_cast<int>(orders.size()), orders);
  }
  std::sort(atoms.begin(), atoms.end());
  std::string s;
  for (const auto& [e, d, o] : atoms) {
    s += std::to_string(e) + ":" + std::to_string(d) + ":";
    for (int x : o) s += std::to_string(x);
    s += ';';
  }
  return s;
}

inline Molecule molecule_from(const std::vector<Element>& atoms,
                              const std::vector<std::tuple<std::size_t, std::size_t, int>>& bonds) {
  Molecule m;
  for (Element e : atoms) m.add_atom(e);
  for (const auto& [a, b, o] : bonds) m.add_bond(a, b, o);
  return m;
}

inline bool connected(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& [a, b] : edges) parent[find(a)] = find(b);
  for (std::size_t i = 1; i < n; ++i) {
    if (find(i) != find(0)) return false;
  }
  return true;
}

// Connected labelled graphs on n nodes, as edge lists.
inline std::vector<std::vector<std::pair<std::size_t, std::size_t>>> connected_graphs(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) all.emplace_back(i, j);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> out;
  for (std::size_t mask = 0; mask < (std::size_t{1} << all.size()); ++mask) {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t k = 0; k < all.size(); ++k) {
      if (mask >> k & 1) edges.push_back(all[k]);
    }
    if (connected(n, edges)) out.push_back(std::move(edges));
  }
  return out;
}

// Molecule families with at most six heavy atoms:
//  - every connected labelled all-carbon single-bond graph on 1..6 atoms;
//  - every connected graph on 1..3 atoms over all eight elements and orders;
//  - every connected graph on 4 atoms over {C, N, O} with orders {1, 2};
//  - random 5- and 6-atom molecules over all elements, each with a shuffled
//    copy so isomorphic pairs occur.
inline std::vector<Molecule> small_molecule_family(std::uint64_t seed) {
  std::vector<Molecule> out;
  for (std::size_t n = 1; n <= 6; ++n) {
    for (const auto& edges : connected_graphs(n)) {
      std::vector<std::tuple<std::size_t, std::size_t, int>> bonds;
      for (const auto& [a, b] : edges) bonds.emplace_back(a, b, 1);
      out.push_back(molecule_from(std::vector<Element>(n, Element::C), bonds));
    }
  }
  auto labelled = [&](std::size_t n, const std::vector<Element>& palette, int max_order) {
    for (const auto& edges : connected_graphs(n)) {
      std::size_t label_count = 1;
      for (std::size_t i = 0; i < n; ++i) label_count *= palette.size();
      std::size_t order_count = 1;
      for (std::size_t i = 0; i < edges.size(); ++i) order_count *= static_cast<std::size_t>(max_order);
      for (std::size_t l = 0; l < label_count; ++l) {
        std::vector<Element> atoms;
        for (std::size_t i = 0, x = l; i < n; ++i, x /= palette.size()) atoms.push_back(palette[x % palette.size()]);
        for (std::size_t o = 0; o < order_count; ++o) {
          std::vector<std::tuple<std::size_t, std::size_t, int>> bonds;
          std::size_t x = o;
          for (const auto& [a, b] : edges) {
            bonds.emplace_back(a, b, 1 + static_cast<int>(x % static_cast<std::size_t>(max_order)));
            x /= static_cast<std::size_t>(max_order);
          }
          out.push_back(molecule_from(atoms, bonds));
        }
      }
    }
  };
  const std::vector<Element> all = {Element::C, Element::N, Element::O, Element::F,
                                    Element::S, Element::Cl, Element::Br, Element::P};
  for (std::size_t n = 1; n <= 3; ++n) labelled(n, all, 3);
  labelled(4, {Element::C, Element::N, Element::O}, 2);

  Rng rng(seed);
  for (int k = 0; k < 1500; ++k) {
    const std::size_t n = 5 + uniform_index(rng, 2);
    std::vector<Element> atoms;
    for (std::size_t i = 0; i < n; ++i) atoms.push_back(all[uniform_index(rng, 3)]);
    std::vector<std::tuple<std::size_t, std::size_t, int>> bonds;
    std::vector<std::pair<std::size_t, std::size_t>> used;
    for (std::size_t v = 1; v < n; ++v) {
      const std::size_t u = uniform_index(rng, v);
      bonds.emplace_back(u, v, 1 + static_cast<int>(uniform_index(rng, 2)));
      used.emplace_back(u, v);
    }
    for (std::size_t extra = uniform_index(rng, 3); extra > 0; --extra) {
      std::size_t a = uniform_index(rng, n), b = uniform_index(rng, n);
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      if (std::find(used.begin(), used.end(), std::make_pair(a, b)) != used.end()) continue;
      if (std::find(used.begin(), used.end(), std::make_pair(b, a)) != used.end()) continue;
      used.emplace_back(a, b);
      bonds.emplace_back(a, b, 1);
    }
    Molecule m = molecule_from(atoms, bonds);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    out.push_back(permute_atoms(m, perm));
    out.push_back(std::move(m));
  }
  return out;
}

struct KeyOracleResult {
  std::size_t molecules = 0;
  std::size_t classes = 0;
  std::size_t false_merges = 0;  // equal keys, not isomorphic
  std::size_t false_splits = 0;  // different keys, isomorphic
};

// Keys must coincide exactly with brute-force isomorphism classes.
template <typename KeyFn>
KeyOracleResult check_key_oracle(const std::vector<Molecule>& mols, KeyFn key) {
  KeyOracleResult r;
  r.molecules = mols.size();
  std::map<std::string, std::size_t> rep;  // key -> representative index
  for (std::size_t i = 0; i < mols.size(); ++i) {
    const auto [it, fresh] = rep.emplace(key(mols[i]), i);
    if (!fresh && !brute_isomorphic(mols[it->second], mols[i])) ++r.false_merges;
  }
  r.classes = rep.size();
  std::map<std::string, std::vector<std::size_t>> by_signature;
  for (const auto& [k, i] : rep) by_signature[invariant_signature(mols[i])].push_back(i);
  for (const auto& [sig, reps] : by_signature) {
    for (std::size_t a = 0; a < reps.size(); ++a)
      for (std::size_t b = a + 1; b < reps.size(); ++b) {
        if (brute_isomorphic(mols[reps[a]], mols[reps[b]])) ++r.false_splits;
      }
  }
  return r;
}

}  // namespace gce::test
