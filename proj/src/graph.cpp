#include "gce/graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gce/error.hpp"
#include "gce/rng.hpp"

namespace gce {

using ordered_json = nlohmann::ordered_json;

// ---- codec -------------------------------------------------------------------

FeatureCodec::FeatureCodec(std::vector<std::string> node_categories,
                           std::vector<std::string> edge_categories)
    : node_categories_(std::move(node_categories)), edge_categories_(std::move(edge_categories)) {
  if (node_categories_.empty()) throw CodecError("codec needs at least one node category");
  std::set<std::string> seen(node_categories_.begin(), node_categories_.end());
  if (seen.size() != node_categories_.size()) throw CodecError("duplicate node category");
  seen = std::set<std::string>(edge_categories_.begin(), edge_categories_.end());
  if (seen.size() != edge_categories_.size()) throw CodecError("duplicate edge category");
  const auto no_bond = std::count(edge_categories_.begin(), edge_categories_.end(), kNoBond);
  const auto masked = std::count(edge_categories_.begin(), edge_categories_.end(), kMaskedBond);
  if (no_bond != 1 || masked != 1) {
    throw CodecError("edge categories must contain exactly one \"no_bond\" and one \"masked\"");
  }
  no_bond_ = *find_edge(kNoBond);
  masked_ = *find_edge(kMaskedBond);
}

FeatureCodec FeatureCodec::molecular() {
  return FeatureCodec({"C", "N", "O", "F", "S", "Cl", "Br", "P"},
                      {"single", "double", "triple", "no_bond", "masked"});
}

std::optional<std::size_t> FeatureCodec::find_node(std::string_view name) const {
  auto it = std::find(node_categories_.begin(), node_categories_.end(), name);
  if (it == node_categories_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - node_categories_.begin());
}

std::optional<std::size_t> FeatureCodec::find_edge(std::string_view name) const {
  auto it = std::find(edge_categories_.begin(), edge_categories_.end(), name);
  if (it == edge_categories_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - edge_categories_.begin());
}

std::size_t FeatureCodec::node_index(std::string_view name) const {
  if (auto i = find_node(name)) return *i;
  throw CodecError("unknown node category '" + std::string(name) + "'");
}

std::size_t FeatureCodec::edge_index(std::string_view name) const {
  if (auto i = find_edge(name)) return *i;
  throw CodecError("unknown edge category '" + std::string(name) + "'");
}

std::vector<double> encode_one_hot(std::size_t category_index, std::size_t codec_size) {
  if (category_index >= codec_size) {
    throw CodecError("category " + std::to_string(category_index) + " outside codec of size " +
                     std::to_string(codec_size));
  }
  std::vector<double> row(codec_size, 0.0);
  row[category_index] = 1.0;
  return row;
}

std::optional<std::size_t> decode_one_hot(std::span<const double> row) {
  std::optional<std::size_t> hot;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (row[i] == 1.0) {
      if (hot) return std::nullopt;
      hot = i;
    } else if (row[i] != 0.0) {
      return std::nullopt;
    }
  }
  return hot;
}

// ---- graph -------------------------------------------------------------------

Graph make_graph(std::size_t num_nodes, std::span<const std::pair<std::size_t, std::size_t>> undirected,
                 std::span<const std::size_t> node_categories, std::span<const std::size_t> edge_categories,
                 const FeatureCodec& codec, std::optional<int> label) {
  if (node_categories.size() != num_nodes) {
    throw ContractError("make_graph: " + std::to_string(node_categories.size()) +
                        " node categories for " + std::to_string(num_nodes) + " nodes");
  }
  if (edge_categories.size() != undirected.size()) {
    throw ContractError("make_graph: edge category count differs from edge count");
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t k = 0; k < undirected.size(); ++k) {
    const auto [a, b] = undirected[k];
    if (a >= num_nodes || b >= num_nodes) {
      throw BoundsError("make_graph: edge " + std::to_string(k) + " (" + std::to_string(a) + ", " +
                            std::to_string(b) + ") has an endpoint outside " + std::to_string(num_nodes) + " nodes",
                        k);
    }
    if (a == b) throw ContractError("make_graph: self-loop on node " + std::to_string(a));
    if (!seen.insert(std::minmax(a, b)).second) {
      throw ContractError("make_graph: duplicate edge (" + std::to_string(a) + ", " + std::to_string(b) + ")");
    }
  }
  Graph g;
  g.num_nodes = num_nodes;
  g.label = label;
  g.x = Tensor::zeros(num_nodes, codec.node_dim());
  for (std::size_t i = 0; i < num_nodes; ++i) {
    auto row = encode_one_hot(node_categories[i], codec.node_dim());
    std::copy(row.begin(), row.end(), g.x.row(i).begin());
  }
  g.e = Tensor::zeros(2 * undirected.size(), codec.edge_dim());
  for (std::size_t k = 0; k < undirected.size(); ++k) {
    const auto [a, b] = undirected[k];
    g.edges.push_back({a, b});
    g.edges.push_back({b, a});
    auto row = encode_one_hot(edge_categories[k], codec.edge_dim());
    std::copy(row.begin(), row.end(), g.e.row(2 * k).begin());
    std::copy(row.begin(), row.end(), g.e.row(2 * k + 1).begin());
  }
  return g;
}

std::vector<std::pair<std::size_t, std::size_t>> undirected_pairs(const Graph& g) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> position;
  for (std::size_t k = 0; k < g.edges.size(); ++k) position[{g.edges[k].src, g.edges[k].dst}] = k;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    const Edge& e = g.edges[k];
    if (e.src >= e.dst) continue;
    auto it = position.find({e.dst, e.src});
    if (it == position.end()) {
      throw ContractError("edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) +
                          ") has no reverse entry");
    }
    out.emplace_back(k, it->second);
  }
  return out;
}

GraphCheck check_graph(const Graph& g, const FeatureCodec& codec, bool allow_masked) {
  auto fail = [](std::string msg) { return GraphCheck{false, std::move(msg)}; };
  if (g.x.rank() != 2 || g.x.rows() != g.num_nodes || g.x.cols() != codec.node_dim()) {
    return fail("node feature matrix has shape " + shape_to_string(g.x.shape()));
  }
  if (g.e.rank() != 2 || g.e.rows() != g.edges.size() || g.e.cols() != codec.edge_dim()) {
    return fail("edge feature matrix has shape " + shape_to_string(g.e.shape()));
  }
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    auto row = g.x.row(i);
    if (decode_one_hot(row)) continue;
    const bool zero = std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; });
    if (!(allow_masked && zero)) return fail("node " + std::to_string(i) + " row is not one-hot");
  }
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> position;
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    const Edge& e = g.edges[k];
    if (e.src >= g.num_nodes || e.dst >= g.num_nodes) {
      return fail("edge " + std::to_string(k) + " (" + std::to_string(e.src) + "," +
                  std::to_string(e.dst) + ") has an endpoint outside [0, " +
                  std::to_string(g.num_nodes) + ")");
    }
    if (e.src == e.dst) return fail("edge " + std::to_string(k) + " is a self-loop");
    if (!position.emplace(std::make_pair(e.src, e.dst), k).second) {
      return fail("edge " + std::to_string(k) + " is duplicated");
    }
    auto cat = decode_one_hot(g.e.row(k));
    if (!cat) return fail("edge " + std::to_string(k) + " row is not one-hot");
    if (*cat == codec.masked_index() && !allow_masked) {
      return fail("edge " + std::to_string(k) + " carries the masked category");
    }
  }
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    const Edge& e = g.edges[k];
    auto it = position.find({e.dst, e.src});
    if (it == position.end()) return fail("edge " + std::to_string(k) + " has no reverse entry");
    if (!std::equal(g.e.row(k).begin(), g.e.row(k).end(), g.e.row(it->second).begin())) {
      return fail("edge " + std::to_string(k) + " and its reverse carry different features");
    }
  }
  return {};
}

void validate_graph(const Graph& g, const FeatureCodec& codec, bool allow_masked) {
  auto r = check_graph(g, codec, allow_masked);
  if (!r.ok) throw ContractError("invalid graph: " + r.message);
}

bool graphs_equal(const Graph& a, const Graph& b) {
  return a.num_nodes == b.num_nodes && a.edges == b.edges && bitwise_equal(a.x, b.x) &&
         bitwise_equal(a.e, b.e) && a.label == b.label;
}

// ---- batching ----------------------------------------------------------------

Batch batch_graphs(std::span<const Graph> graphs) {
  if (graphs.empty()) throw ContractError("batch_graphs: empty graph list");
  const std::size_t dn = graphs[0].x.cols();
  const std::size_t de = graphs[0].e.cols();
  std::size_t total_nodes = 0, total_edges = 0;
  for (const Graph& g : graphs) {
    if (g.x.cols() != dn || g.e.cols() != de) {
      throw ContractError("batch_graphs: graphs use different feature widths");
    }
    total_nodes += g.num_nodes;
    total_edges += g.edges.size();
  }
  Batch b;
  b.graph.num_nodes = total_nodes;
  b.graph.x = Tensor::zeros(total_nodes, dn);
  b.graph.e = Tensor::zeros(total_edges, de);
  b.graph.edges.reserve(total_edges);
  b.graph_of_node.reserve(total_nodes);
  std::size_t node_off = 0, edge_off = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = graphs[gi];
    b.node_offsets.push_back(node_off);
    b.edge_offsets.push_back(edge_off);
    std::copy(g.x.data().begin(), g.x.data().end(), b.graph.x.data().begin() + node_off * dn);
    std::copy(g.e.data().begin(), g.e.data().end(), b.graph.e.data().begin() + edge_off * de);
    for (const Edge& e : g.edges) b.graph.edges.push_back({e.src + node_off, e.dst + node_off});
    b.graph_of_node.insert(b.graph_of_node.end(), g.num_nodes, gi);
    b.labels.push_back(g.label);
    node_off += g.num_nodes;
    edge_off += g.edges.size();
  }
  if (graphs.size() == 1) b.graph.label = graphs[0].label;
  return b;
}

std::vector<Graph> unbatch(const Batch& batch) {
  const std::size_t count = batch.num_graphs();
  const std::size_t dn = batch.graph.x.cols();
  const std::size_t de = batch.graph.e.cols();
  std::vector<Graph> out;
  out.reserve(count);
  for (std::size_t gi = 0; gi < count; ++gi) {
    const std::size_t n0 = batch.node_offsets[gi];
    const std::size_t n1 = gi + 1 < count ? batch.node_offsets[gi + 1] : batch.graph.num_nodes;
    const std::size_t e0 = batch.edge_offsets[gi];
    const std::size_t e1 = gi + 1 < count ? batch.edge_offsets[gi + 1] : batch.graph.edges.size();
    Graph g;
    g.num_nodes = n1 - n0;
    g.x = Tensor({n1 - n0, dn}, std::vector<double>(batch.graph.x.data().begin() + n0 * dn,
                                                    batch.graph.x.data().begin() + n1 * dn));
    g.e = Tensor({e1 - e0, de}, std::vector<double>(batch.graph.e.data().begin() + e0 * de,
                                                    batch.graph.e.data().begin() + e1 * de));
    for (std::size_t k = e0; k < e1; ++k) {
      const Edge& e = batch.graph.edges[k];
      g.edges.push_back({e.src - n0, e.dst - n0});
    }
    g.label = batch.labels[gi];
    out.push_back(std::move(g));
  }
  return out;
}

// ---- dataset I/O -------------------------------------------------------------

namespace {

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

Graph graph_from_json(const ordered_json& j, const FeatureCodec& codec, std::size_t line) {
  const std::string where = at_line(line);
  if (!j.is_object()) throw LoadError(where + "graph record must be an object");
  for (const char* key : {"n", "edges", "x", "e"}) {
    if (!j.contains(key)) throw LoadError(where + "missing key '" + key + "'");
  }
  const auto n = j.at("n").get<long long>();
  if (n < 1) throw LoadError(where + "graph must have at least one node");
  const auto& xs = j.at("x");
  const auto& es = j.at("e");
  const auto& edges = j.at("edges");
  if (!xs.is_array() || xs.size() != static_cast<std::size_t>(n)) {
    throw LoadError(where + "'x' must list one category per node");
  }
  if (!edges.is_array() || !es.is_array() || es.size() != edges.size()) {
    throw LoadError(where + "'e' must list one category per edge");
  }
  std::vector<std::size_t> node_cats;
  for (const auto& v : xs) {
    const auto c = v.get<long long>();
    if (c < 0 || static_cast<std::size_t>(c) >= codec.node_dim()) {
      throw LoadError(where + "node category " + std::to_string(c) + " is not a one-hot index");
    }
    node_cats.push_back(static_cast<std::size_t>(c));
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> edge_cats;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& pr = edges[k];
    if (!pr.is_array() || pr.size() != 2) throw LoadError(where + "edge entries must be [i, j]");
    const auto a = pr[0].get<long long>();
    const auto b = pr[1].get<long long>();
    if (a < 0 || b < 0 || a >= n || b >= n) {
      throw LoadError(where + "edge [" + std::to_string(a) + "," + std::to_string(b) +
                      "] dangles outside " + std::to_string(n) + " nodes");
    }
    if (a >= b) throw LoadError(where + "edges must be listed once with i < j");
    const auto c = es[k].get<long long>();
    if (c < 0 || static_cast<std::size_t>(c) >= codec.edge_dim()) {
      throw LoadError(where + "edge category " + std::to_string(c) + " is not a one-hot index");
    }
    pairs.emplace_back(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
    edge_cats.push_back(static_cast<std::size_t>(c));
  }
  std::optional<int> label;
  if (j.contains("label") && !j.at("label").is_null()) label = j.at("label").get<int>();
  Graph g = make_graph(static_cast<std::size_t>(n), pairs, node_cats, edge_cats, codec, label);
  auto check = check_graph(g, codec);
  if (!check.ok) throw LoadError(where + check.message);
  return g;
}

}  // namespace

Dataset read_dataset(std::istream& in) {
  std::string text;
  std::size_t line_no = 0;
  Dataset ds;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& err) {
      throw LoadError(at_line(line_no) + "malformed JSON: " + err.what());
    }
    try {
      if (!have_header) {
        ds.codec = FeatureCodec(j.at("node_categories").get<std::vector<std::string>>(),
                                j.at("edge_categories").get<std::vector<std::string>>());
        have_header = true;
        continue;
      }
      Graph g = graph_from_json(j, ds.codec, line_no);
      ds.graphs.push_back(std::move(g));
    } catch (const nlohmann::json::exception& err) {
      throw LoadError(at_line(line_no) + err.what());
    } catch (const LoadError&) {
      throw;
    } catch (const Error& err) {
      throw LoadError(at_line(line_no) + err.what());
    }
  }
  if (!have_header) throw LoadError("dataset has no codec header line");
  return ds;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  ordered_json header;
  header["node_categories"] = dataset.codec.node_categories();
  header["edge_categories"] = dataset.codec.edge_categories();
  out << header.dump() << '\n';
  for (std::size_t gi = 0; gi < dataset.graphs.size(); ++gi) {
    const Graph& g = dataset.graphs[gi];
    validate_graph(g, dataset.codec);
    ordered_json j;
    j["n"] = g.num_nodes;
    auto edges = ordered_json::array();
    auto ecats = ordered_json::array();
    for (const auto& [fwd, rev] : undirected_pairs(g)) {
      edges.push_back({g.edges[fwd].src, g.edges[fwd].dst});
      ecats.push_back(*decode_one_hot(g.e.row(fwd)));
    }
    auto xcats = ordered_json::array();
    for (std::size_t i = 0; i < g.num_nodes; ++i) xcats.push_back(*decode_one_hot(g.x.row(i)));
    j["edges"] = std::move(edges);
    j["x"] = std::move(xcats);
    j["e"] = std::move(ecats);
    j["label"] = g.label ? ordered_json(*g.label) : ordered_json(nullptr);
    out << j.dump() << '\n';
  }
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write dataset '" + path + "'");
  write_dataset(out, dataset);
}

// ---- synthetic corpora -------------------------------------------------------

SynthKind synth_kind_from_string(std::string_view name) {
  if (name == "cycles_vs_paths") return SynthKind::kCyclesVsPaths;
  if (name == "two_motifs") return SynthKind::kTwoMotifs;
  throw ContractError("unknown synthetic dataset kind '" + std::string(name) + "'");
}

std::vector<Graph> synth_dataset(SynthKind kind, std::size_t n_graphs, std::size_t min_size,
                                 std::size_t max_size, std::uint64_t seed, const FeatureCodec& codec) {
  if (n_graphs < 2) throw ContractError("synth_dataset: need at least 2 graphs");
  const std::size_t smallest = kind == SynthKind::kCyclesVsPaths ? 3 : 5;
  if (min_size > max_size || min_size < smallest) {
    throw ContractError("synth_dataset: degenerate size range [" + std::to_string(min_size) + ", " +
                        std::to_string(max_size) + "], minimum size is " + std::to_string(smallest));
  }
  const std::size_t palette = std::min<std::size_t>(3, codec.node_dim());
  const std::size_t single = codec.find_edge("single").value_or(0);
  std::vector<Graph> out;
  out.reserve(n_graphs);
  for (std::size_t gi = 0; gi < n_graphs; ++gi) {
    Rng rng = make_rng(seed, {gi});
    const int label = static_cast<int>(gi % 2);
    const std::size_t n = min_size + uniform_index(rng, max_size - min_size + 1);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    if (kind == SynthKind::kCyclesVsPaths) {
      for (std::size_t i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
      if (label == 1) edges.emplace_back(0, n - 1);
    } else {
      const std::size_t ring = label == 0 ? 3 : 4;
      const std::size_t tree = n - ring;
      for (std::size_t v = 1; v < tree; ++v) edges.emplace_back(uniform_index(rng, v), v);
      for (std::size_t r = 0; r + 1 < ring; ++r) edges.emplace_back(tree + r, tree + r + 1);
      edges.emplace_back(tree, tree + ring - 1);
      edges.emplace_back(uniform_index(rng, tree), tree);
    }
    std::vector<std::size_t> cats(n);
    for (auto& c : cats) c = uniform_index(rng, palette);
    std::vector<std::size_t> ecats(edges.size(), single);
    out.push_back(make_graph(n, edges, cats, ecats, codec, label));
  }
  return out;
}

}  // namespace gce
