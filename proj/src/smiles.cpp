#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <numeric>
#include <tuple>

#include "gce/error.hpp"
#include "gce/molecule.hpp"

namespace gce {

// ---- parser --------------------------------------------------------------------

namespace {

struct OpenRing {
  std::size_t atom;
  int order;  // 0 when unspecified
  std::size_t offset;
};

int bond_symbol_order(char c) {
  switch (c) {
    case '-': return 1;
    case '=': return 2;
    case '#': return 3;
    default: return 0;
  }
}

}  // namespace

Molecule parse_smiles(std::string_view text) {
  if (text.empty()) throw ParseError("empty SMILES", 0);
  Molecule mol;
  constexpr std::size_t kNone = SIZE_MAX;
  std::size_t prev = kNone;
  int pending = 0;
  std::size_t pending_at = 0;
  std::vector<std::pair<std::size_t, std::size_t>> branches;  // (atom, offset of '(')
  std::map<int, OpenRing> rings;
  bool branch_empty = false;
  bool component_empty = true;

  std::size_t pos = 0;
  while (pos < text.size()) {
    const char c = text[pos];
    if (std::isupper(static_cast<unsigned char>(c))) {
      std::string_view symbol = text.substr(pos, 1);
      if (pos + 1 < text.size() && ((c == 'C' && text[pos + 1] == 'l') || (c == 'B' && text[pos + 1] == 'r'))) {
        symbol = text.substr(pos, 2);
      }
      auto element = element_from_symbol(symbol);
      if (!element) throw ParseError("unknown atom symbol '" + std::string(symbol) + "'", pos);
      const std::size_t atom = mol.add_atom(*element);
      if (prev != kNone) {
        mol.add_bond(prev, atom, pending ? pending : 1);
      } else if (pending) {
        throw ParseError("bond to nothing", pending_at);
      }
      pending = 0;
      prev = atom;
      branch_empty = false;
      component_empty = false;
      pos += symbol.size();
      continue;
    }
    if (int order = bond_symbol_order(c)) {
      if (prev == kNone) throw ParseError("bond to nothing", pos);
      if (pending) throw ParseError("consecutive bond symbols", pos);
      pending = order;
      pending_at = pos;
      ++pos;
      continue;
    }
    if (c == '(') {
      if (prev == kNone) throw ParseError("branch without a preceding atom", pos);
      if (pending) throw ParseError("bond to nothing", pending_at);
      branches.emplace_back(prev, pos);
      branch_empty = true;
      ++pos;
      continue;
    }
    if (c == ')') {
      if (branches.empty()) throw ParseError("unmatched parenthesis", pos);
      if (pending) throw ParseError("bond to nothing", pending_at);
      if (branch_empty) throw ParseError("empty branch", pos);
      prev = branches.back().first;
      branches.pop_back();
      ++pos;
      continue;
    }
    if ((c >= '1' && c <= '9') || c == '%') {
      if (prev == kNone) throw ParseError("ring closure without a preceding atom", pos);
      const std::size_t here = prev;
      int digit = c - '0';
      if (c == '%') {
        if (pos + 2 >= text.size() || !std::isdigit(static_cast<unsigned char>(text[pos + 1])) ||
            !std::isdigit(static_cast<unsigned char>(text[pos + 2]))) {
          throw ParseError("'%' must be followed by two digits", pos);
        }
        digit = (text[pos + 1] - '0') * 10 + (text[pos + 2] - '0');
        if (digit == 0) throw ParseError("ring label %00 is not allowed", pos);
        pos += 2;
      }
      auto it = rings.find(digit);
      if (it == rings.end()) {
        rings[digit] = OpenRing{here, pending, pos};
      } else {
        const OpenRing open = it->second;
        if (open.order && pending && open.order != pending) {
          throw ParseError("conflicting ring-closure bond orders", pos);
        }
        const int order = open.order ? open.order : (pending ? pending : 1);
        if (open.atom == here) throw ParseError("ring closure to the same atom", pos);
        if (mol.bond_order(open.atom, here) != 0) throw ParseError("ring closure duplicates a bond", pos);
        mol.add_bond(open.atom, here, order);
        rings.erase(it);
      }
      pending = 0;
      ++pos;
      continue;
    }
    if (c == '.') {
      if (pending) throw ParseError("bond to nothing", pending_at);
      if (!branches.empty()) throw ParseError("component separator inside a branch", pos);
      if (component_empty) throw ParseError("empty component", pos);
      prev = kNone;
      component_empty = true;
      ++pos;
      continue;
    }
    throw ParseError(std::string("unknown symbol '") + c + "'", pos);
  }
  if (pending) throw ParseError("bond to nothing", pending_at);
  if (!branches.empty()) throw ParseError("unmatched parenthesis", branches.back().second);
  if (!rings.empty()) throw ParseError("unmatched ring digit", rings.begin()->second.offset);
  if (component_empty) throw ParseError("empty component", text.size());
  return mol;
}

// ---- canonical ranking ---------------------------------------------------------

namespace {

using Adjacency = std::vector<std::vector<std::pair<std::size_t, int>>>;

Adjacency build_adjacency(const Molecule& mol) {
  Adjacency adj(mol.num_atoms());
  for (const Bond& b : mol.bonds()) {
    adj[b.a].emplace_back(b.b, b.order);
    adj[b.b].emplace_back(b.a, b.order);
  }
  return adj;
}

// Renumbers arbitrary comparable signatures into dense colours ordered by
// signature value.
template <typename Sig>
std::size_t densify(const std::vector<Sig>& sigs, std::vector<std::size_t>& colors) {
  std::vector<Sig> uniq = sigs;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  for (std::size_t i = 0; i < sigs.size(); ++i) {
    colors[i] = static_cast<std::size_t>(std::lower_bound(uniq.begin(), uniq.end(), sigs[i]) - uniq.begin());
  }
  return uniq.size();
}

// Iterated neighbourhood refinement (1-WL) to a stable partition.
std::size_t refine(const Adjacency& adj, std::vector<std::size_t>& colors) {
  const std::size_t n = colors.size();
  std::vector<std::size_t> tmp(n);
  std::size_t classes = densify(colors, tmp);
  colors = tmp;
  using Sig = std::pair<std::size_t, std::vector<std::pair<int, std::size_t>>>;
  std::vector<Sig> sigs(n);
  for (std::size_t round = 0; round <= n; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      sigs[i].first = colors[i];
      sigs[i].second.clear();
      for (const auto& [nbr, order] : adj[i]) sigs[i].second.emplace_back(order, colors[nbr]);
      std::sort(sigs[i].second.begin(), sigs[i].second.end());
    }
    const std::size_t next = densify(sigs, tmp);
    colors = tmp;
    if (next == classes) break;
    classes = next;
  }
  return classes;
}

class CanonicalSearch {
 public:
  CanonicalSearch(const Molecule& mol, const Adjacency& adj) : mol_(mol), adj_(adj) {}

  std::vector<std::size_t> run() {
    const std::size_t n = mol_.num_atoms();
    using Init = std::tuple<std::size_t, std::size_t, std::vector<int>>;
    std::vector<Init> init(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<int> orders;
      for (const auto& nb : adj_[i]) orders.push_back(nb.second);
      std::sort(orders.begin(), orders.end());
      init[i] = {static_cast<std::size_t>(mol_.atom(i)), adj_[i].size(), std::move(orders)};
    }
    std::vector<std::size_t> colors(n);
    densify(init, colors);
    search(std::move(colors));
    return best_ranks_;
  }

 private:
  // Leaves beyond this are not explored; only reachable by highly symmetric
  // multi-component inputs far outside the molecule sizes used here.
  static constexpr std::size_t kMaxLeaves = 20000;

  void search(std::vector<std::size_t> colors) {
    if (leaves_ >= kMaxLeaves) return;
    const std::size_t classes = refine(adj_, colors);
    const std::size_t n = colors.size();
    if (classes == n) {
      leaf(colors);
      return;
    }
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t c : colors) ++counts[c];
    std::size_t target = 0;
    while (counts[target] < 2) ++target;
    for (std::size_t v = 0; v < n; ++v) {
      if (colors[v] != target) continue;
      std::vector<std::size_t> next(n);
      for (std::size_t a = 0; a < n; ++a) {
        next[a] = 2 * colors[a] + ((colors[a] == target && a != v) ? 1 : 0);
      }
      search(std::move(next));
    }
  }

  void leaf(const std::vector<std::size_t>& ranks) {
    ++leaves_;
    const std::size_t n = ranks.size();
    std::vector<int> cert(n);
    for (std::size_t i = 0; i < n; ++i) cert[ranks[i]] = static_cast<int>(mol_.atom(i));
    std::vector<std::array<int, 3>> edges;
    for (const Bond& b : mol_.bonds()) {
      int ra = static_cast<int>(ranks[b.a]), rb = static_cast<int>(ranks[b.b]);
      if (ra > rb) std::swap(ra, rb);
      edges.push_back({ra, rb, b.order});
    }
    std::sort(edges.begin(), edges.end());
    cert.push_back(-1);
    for (const auto& e : edges) cert.insert(cert.end(), e.begin(), e.end());
    if (best_cert_.empty() || cert < best_cert_) {
      best_cert_ = std::move(cert);
      best_ranks_ = ranks;
    }
  }

  const Molecule& mol_;
  const Adjacency& adj_;
  std::size_t leaves_ = 0;
  std::vector<int> best_cert_;
  std::vector<std::size_t> best_ranks_;
};

char bond_char(int order) { return order == 2 ? '=' : order == 3 ? '#' : '\0'; }

class SmilesWriter {
 public:
  SmilesWriter(const Molecule& mol, const Adjacency& adj, const std::vector<std::size_t>& ranks)
      : mol_(mol), adj_(adj), ranks_(ranks), n_(mol.num_atoms()) {}

  std::string run() {
    dfs_index_.assign(n_, SIZE_MAX);
    children_.assign(n_, {});
    ring_.assign(n_, {});
    std::size_t start = 0;
    for (std::size_t i = 0; i < n_; ++i) {
      if (ranks_[i] == 0) start = i;
    }
    discover(start, SIZE_MAX);
    emit(start);
    return out_;
  }

 private:
  struct RingBond {
    std::size_t partner;
    int order;
    bool opening;
  };

  std::vector<std::pair<std::size_t, int>> sorted_neighbors(std::size_t u) const {
    auto nbrs = adj_[u];
    std::sort(nbrs.begin(), nbrs.end(), [&](const auto& a, const auto& b) { return ranks_[a.first] < ranks_[b.first]; });
    return nbrs;
  }

  void discover(std::size_t u, std::size_t parent) {
    dfs_index_[u] = counter_++;
    for (const auto& [v, order] : sorted_neighbors(u)) {
      if (v == parent) continue;
      if (dfs_index_[v] == SIZE_MAX) {
        children_[u].emplace_back(v, order);
        discover(v, u);
      } else if (dfs_index_[v] < dfs_index_[u]) {
        ring_[v].push_back({u, order, true});
        ring_[u].push_back({v, order, false});
      }
    }
  }

  void emit(std::size_t u) {
    out_ += element_symbol(mol_.atom(u));
    auto rings = ring_[u];
    std::sort(rings.begin(), rings.end(), [&](const RingBond& a, const RingBond& b) {
      if (a.opening != b.opening) return !a.opening;
      return dfs_index_[a.partner] < dfs_index_[b.partner];
    });
    for (const RingBond& r : rings) {
      if (r.opening) {
        int digit = 1;
        while (digit <= 99 && used_[digit]) ++digit;
        if (digit > 99) throw ContractError("write_smiles: more than 99 simultaneously open rings");
        used_[digit] = true;
        digit_of_[{u, r.partner}] = digit;
        if (char b = bond_char(r.order)) out_ += b;
        put_label(digit);
      } else {
        const int digit = digit_of_.at({r.partner, u});
        used_[digit] = false;
        put_label(digit);
      }
    }
    const auto& kids = children_[u];
    for (std::size_t k = 0; k < kids.size(); ++k) {
      const bool last = k + 1 == kids.size();
      if (!last) out_ += '(';
      if (char b = bond_char(kids[k].second)) out_ += b;
      emit(kids[k].first);
      if (!last) out_ += ')';
    }
  }

  void put_label(int label) {
    if (label >= 10) {
      out_ += '%';
      out_ += static_cast<char>('0' + label / 10);
      label %= 10;
    }
    out_ += static_cast<char>('0' + label);
  }

  const Molecule& mol_;
  const Adjacency& adj_;
  const std::vector<std::size_t>& ranks_;
  std::size_t n_;
  std::size_t counter_ = 0;
  std::vector<std::size_t> dfs_index_;
  std::vector<std::vector<std::pair<std::size_t, int>>> children_;
  std::vector<std::vector<RingBond>> ring_;
  std::array<bool, 100> used_{};
  std::map<std::pair<std::size_t, std::size_t>, int> digit_of_;
  std::string out_;
};

Molecule extract_component(const Molecule& mol, const std::vector<std::size_t>& comp, std::size_t id) {
  std::vector<std::size_t> remap(mol.num_atoms(), SIZE_MAX);
  Molecule out;
  for (std::size_t i = 0; i < mol.num_atoms(); ++i) {
    if (comp[i] == id) remap[i] = out.add_atom(mol.atom(i));
  }
  for (const Bond& b : mol.bonds()) {
    if (comp[b.a] == id) out.add_bond(remap[b.a], remap[b.b], b.order);
  }
  return out;
}

}  // namespace

std::vector<std::size_t> canonical_ranking(const Molecule& mol) {
  if (mol.num_atoms() == 0) return {};
  const Adjacency adj = build_adjacency(mol);
  return CanonicalSearch(mol, adj).run();
}

std::string write_smiles(const Molecule& mol) {
  const std::size_t comps = mol.count_components();
  if (comps != 1) {
    throw ContractError("write_smiles needs a connected molecule, got " + std::to_string(comps) +
                        " components");
  }
  const Adjacency adj = build_adjacency(mol);
  const auto ranks = CanonicalSearch(mol, adj).run();
  return SmilesWriter(mol, adj, ranks).run();
}

std::string write_smiles_components(const Molecule& mol) {
  if (mol.num_atoms() == 0) return "";
  const auto comp = mol.component_ids();
  const std::size_t count = *std::max_element(comp.begin(), comp.end()) + 1;
  std::vector<std::string> parts;
  for (std::size_t id = 0; id < count; ++id) parts.push_back(write_smiles(extract_component(mol, comp, id)));
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += '.';
    out += parts[i];
  }
  return out;
}

std::string canonical_key(const Molecule& mol) { return write_smiles_components(mol); }

bool isomorphic(const Molecule& a, const Molecule& b) {
  const std::size_t n = a.num_atoms();
  if (n != b.num_atoms() || a.num_bonds() != b.num_bonds()) return false;
  std::vector<std::vector<int>> ma(n, std::vector<int>(n, 0)), mb = ma;
  for (const Bond& bd : a.bonds()) ma[bd.a][bd.b] = ma[bd.b][bd.a] = bd.order;
  for (const Bond& bd : b.bonds()) mb[bd.a][bd.b] = mb[bd.b][bd.a] = bd.order;
  std::vector<std::size_t> map(n);
  std::vector<bool> used(n, false);
  // Backtracking over all atom assignments a[i] -> b[map[i]].
  auto assign = [&](auto&& self, std::size_t i) -> bool {
    if (i == n) return true;
    for (std::size_t j = 0; j < n; ++j) {
      if (used[j] || a.atom(i) != b.atom(j)) continue;
      bool ok = true;
      for (std::size_t k = 0; k < i && ok; ++k) ok = ma[i][k] == mb[j][map[k]];
      if (!ok) continue;
      used[j] = true;
      map[i] = j;
      if (self(self, i + 1)) return true;
      used[j] = false;
    }
    return false;
  };
  return assign(assign, 0);
}

}  // namespace gce
