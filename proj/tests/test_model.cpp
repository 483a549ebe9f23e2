#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gce/error.hpp"
#include "gce/masking.hpp"
#include "gce/model.hpp"
#include "support.hpp"

using namespace gce;
using gce::test::random_graph;
using gce::test::random_tensor;

namespace {

Topology single_topology(std::size_t n, std::vector<Edge> edges) {
  Topology t;
  t.num_nodes = n;
  t.edges = std::move(edges);
  t.graph_of_node.assign(n, 0);
  t.num_graphs = 1;
  return t;
}

Topology topology_of_graph(const Graph& g) {
  const Graph one[] = {g};
  return topology_of(batch_graphs(one));
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor identity(std::size_t n) {
  Tensor t = Tensor::zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

// Linear map through a single-layer Mlp.
Mlp linear(Tape& tape, const Tensor& w) { return Mlp{tape.constant(w), tape.constant(Tensor::zeros(1, w.cols())), {}, {}}; }

GceConfig small_config(double rate = 0.5, std::size_t layers = 4, std::size_t hidden = 6) {
  GceConfig c = GceConfig::molecule_generation(FeatureCodec::molecular());
  c.num_layers = layers;
  c.hidden_channels = hidden;
  c.pooling_rate = rate;
  return c;
}

Batch single(const Graph& g) {
  const Graph one[] = {g};
  return batch_graphs(one);
}

bool scores_distinct(const ForwardTrace& trace) {
  for (const Tensor& y : trace.pool_scores) {
    std::set<double> seen(y.data().begin(), y.data().end());
    if (seen.size() != y.size()) return false;
  }
  return true;
}

// Reverse-mode gradient of `f` at `params` against central differences,
// with a mixed absolute/relative tolerance.
double max_gradient_error(const ScalarFunction& f, std::vector<Tensor> params, double eps) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (Tensor p : params) {
      p.set_requires_grad(true);
      vars.push_back(tape.leaf(std::move(p)));
    }
    Gradients g = tape.backward(f(tape, vars));
    for (std::size_t k = 0; k < vars.size(); ++k) analytic.push_back(g.has(vars[k]) ? g[vars[k]] : Tensor(params[k].shape()));
  }
  auto value = [&] {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.leaf(p));
    return f(tape, vars).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double saved = params[k][i];
      params[k][i] = saved + eps;
      const double up = value();
      params[k][i] = saved - eps;
      const double down = value();
      params[k][i] = saved;
      const double numeric = (up - down) / (2 * eps);
      worst = std::max(worst, std::abs(numeric - analytic[k][i]) / (1.0 + std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace

// ---- configuration -----------------------------------------------------------

TEST(Model, ConfigValidation) {
  const auto codec = FeatureCodec::molecular();
  GceConfig c = GceConfig::molecule_generation(codec);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.num_layers, 6u);
  EXPECT_EQ(c.encoder_layers(), 3u);
  EXPECT_EQ(c.hidden_channels, 50u);
  EXPECT_DOUBLE_EQ(c.pooling_rate, 0.5);
  EXPECT_DOUBLE_EQ(GceConfig::gine(codec).pooling_rate, 1.0);
  EXPECT_EQ(GceConfig::graph_mnist(codec).num_layers, 4u);

  auto bad = [&](auto mutate) {
    GceConfig b = c;
    mutate(b);
    return b;
  };
  EXPECT_THROW(bad([](GceConfig& b) { b.num_layers = 5; }).validate(), ConfigError);
  EXPECT_THROW(bad([](GceConfig& b) { b.num_layers = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](GceConfig& b) { b.hidden_channels = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](GceConfig& b) { b.pooling_rate = 0.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](GceConfig& b) { b.pooling_rate = 1.5; }).validate(), ConfigError);
  EXPECT_THROW(bad([](GceConfig& b) { b.node_in_dim = 0; }).validate(), ConfigError);
  EXPECT_THROW(GceModel(bad([](GceConfig& b) { b.num_layers = 3; }), 1), ConfigError);
}

TEST(Model, ParameterShapesAndInit) {
  const GceModel model(small_config(0.5, 6, 5), 3);
  std::size_t pools = 0;
  for (const auto& p : model.parameters()) {
    for (double v : p.value.data()) EXPECT_TRUE(std::isfinite(v)) << p.name;
    if (p.name.ends_with(".pool.p")) {
      ++pools;
      EXPECT_EQ(p.value.size(), 5u);
    }
    if (p.name.ends_with(".eps")) EXPECT_EQ(p.value.item(), 0.0);
    if (p.name.ends_with(".w1") || p.name.ends_with(".w2")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
      for (double v : p.value.data()) EXPECT_LE(std::abs(v), bound) << p.name;
    }
  }
  EXPECT_EQ(pools, 3u);
  ASSERT_NE(model.find("enc0.edge_update.w1"), nullptr);
  EXPECT_EQ(model.find("enc0.edge_update.w1")->value.rows(), 15u);
  // f_phi and f_phi' are separate parameter sets.
  EXPECT_NE(model.find("dec0.edge_embed.w1"), nullptr);
  EXPECT_NE(model.find("dec0.edge_update.w1"), nullptr);

  const GceModel again(small_config(0.5, 6, 5), 3), other(small_config(0.5, 6, 5), 4);
  EXPECT_EQ(values(again.parameters()[3].value), values(model.parameters()[3].value));
  EXPECT_NE(values(other.parameters()[3].value), values(model.parameters()[3].value));
}

// ---- gine_conv ----------------------------------------------------------------

TEST(Model, GineConvIsolatedNodeIdentity) {
  Tape tape;
  const Tensor x = Tensor::from_rows({{0.3, -1.2}});
  Var out = gine_conv(tape.constant(x), single_topology(1, {}), tape.constant(Tensor::zeros(0, 2)),
                      tape.constant(Tensor::scalar(0)), linear(tape, identity(2)));
  EXPECT_EQ(values(out.value()), values(x));
}

TEST(Model, GineConvSingleNeighbor) {
  Tape tape;
  const Tensor x = Tensor::from_rows({{1, 0}, {0, 1}});
  Var out = gine_conv(tape.constant(x), single_topology(2, {{1, 0}}), tape.constant(Tensor::zeros(1, 2)),
                      tape.constant(Tensor::scalar(0)), linear(tape, identity(2)));
  EXPECT_EQ(out.value()(0, 0), 1.0);
  EXPECT_EQ(out.value()(0, 1), 1.0);
  EXPECT_EQ(out.value()(1, 0), 0.0);
  EXPECT_EQ(out.value()(1, 1), 1.0);
}

TEST(Model, GineConvMatchesDirectSum) {
  Rng rng(10);
  const Graph g = random_graph(7, 3, rng);
  const Topology topo = topology_of_graph(g);
  const Tensor x = random_tensor(7, 4, rng), e = random_tensor(topo.edges.size(), 4, rng);
  const double eps = 0.37;
  Tape tape;
  Var out = gine_conv(tape.constant(x), topo, tape.constant(e), tape.constant(Tensor::scalar(eps)),
                      linear(tape, identity(4)));
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      double want = (1 + eps) * x(i, c);
      for (std::size_t k = 0; k < topo.edges.size(); ++k) {
        if (topo.edges[k].dst == i) want += std::max(0.0, x(topo.edges[k].src, c) + e(k, c));
      }
      EXPECT_NEAR(out.value()(i, c), want, 1e-12);
    }
  }
  EXPECT_THROW(gine_conv(tape.constant(x), topo, tape.constant(random_tensor(2, 4, rng)),
                         tape.constant(Tensor::scalar(0)), linear(tape, identity(4))),
               DimensionError);
  EXPECT_THROW(gine_conv(tape.constant(random_tensor(6, 4, rng)), topo, tape.constant(e),
                         tape.constant(Tensor::scalar(0)), linear(tape, identity(4))),
               DimensionError);
}

TEST(Model, GineConvPermutationEquivariant) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Graph g = random_graph(6, 2, rng);
    const auto perm = gce::test::random_permutation(6, rng);
    const Graph pg = gce::test::permute_graph(g, perm);
    const Tensor w1 = random_tensor(3, 3, rng), w2 = random_tensor(3, 3, rng);
    const Tensor x = random_tensor(6, 3, rng), e = random_tensor(g.edges.size(), 3, rng);
    Tensor px = Tensor::zeros(6, 3);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 3; ++c) px(perm[i], c) = x(i, c);
    Tape tape;
    const Mlp f{tape.constant(w1), tape.constant(Tensor::zeros(1, 3)), tape.constant(w2),
                tape.constant(Tensor::zeros(1, 3))};
    Var eps = tape.constant(Tensor::scalar(0.2));
    const Tensor a = gine_conv(tape.constant(x), topology_of_graph(g), tape.constant(e), eps, f).value();
    const Tensor b = gine_conv(tape.constant(px), topology_of_graph(pg), tape.constant(e), eps, f).value();
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a(i, c), b(perm[i], c), 1e-12);
  }
}

TEST(Model, GineConvGradients) {
  Rng rng(12);
  const Graph g = random_graph(5, 2, rng);
  const Topology topo = topology_of_graph(g);
  const std::size_t m = topo.edges.size();
  const ScalarFunction f = [&](Tape&, std::span<const Var> p) {
    return sum(gine_conv(p[0], topo, p[1], p[2], Mlp{p[3], p[4], p[5], p[6]}));
  };
  const std::vector<Tensor> params = {random_tensor(5, 3, rng), random_tensor(m, 3, rng),
                                      Tensor::scalar(0.1),      random_tensor(3, 4, rng),
                                      random_tensor(1, 4, rng), random_tensor(4, 3, rng),
                                      random_tensor(1, 3, rng)};
  EXPECT_LT(max_gradient_error(f, params, 1e-6), 1e-6);
}

// ---- topk_pool / unpool -------------------------------------------------------

TEST(Model, TopkPoolExample) {
  Tape tape;
  const Tensor x = Tensor::from_rows({{2, 0}, {1, 0}, {3, 0}});
  const Topology topo = single_topology(3, {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {0, 2}, {2, 0}});
  Rng rng(1);
  Var e = tape.constant(random_tensor(6, 2, rng));
  const PoolResult r = topk_pool(tape.constant(x), topo, e, tape.constant(Tensor::from_rows({{1}, {0}})), 0.5);
  EXPECT_EQ(r.record.selected, (std::vector<std::size_t>{0, 2}));
  ASSERT_EQ(r.x.value().rows(), 2u);
  EXPECT_NEAR(r.x.value()(0, 0), 2 * std::tanh(2.0), 1e-12);
  EXPECT_NEAR(r.x.value()(1, 0), 3 * std::tanh(3.0), 1e-12);
  EXPECT_NEAR(r.x.value()(0, 0), 1.92805, 1e-5);
  EXPECT_NEAR(r.x.value()(1, 0), 2.98516, 1e-5);
  EXPECT_EQ(r.x.value()(0, 1), 0.0);
  // Only the 0-2 pair survives, relabelled to 0-1.
  EXPECT_EQ(r.record.kept_edges, (std::vector<std::size_t>{4, 5}));
  ASSERT_EQ(r.topology.edges.size(), 2u);
  EXPECT_EQ(r.topology.edges[0].src, 0u);
  EXPECT_EQ(r.topology.edges[0].dst, 1u);
  EXPECT_EQ(r.e.value()(0, 0), e.value()(4, 0));
  EXPECT_EQ(r.record.pre_pool_nodes(), 3u);
}

TEST(Model, TopkPoolTiesGoToLowerIndex) {
  Tape tape;
  const Tensor x = Tensor::from_rows({{1, 0}, {5, 0}, {5, 0}, {5, 0}});
  const PoolResult r = topk_pool(tape.constant(x), single_topology(4, {}), tape.constant(Tensor::zeros(0, 2)),
                                 tape.constant(Tensor::from_rows({{1}, {0}})), 0.5);
  EXPECT_EQ(r.record.selected, (std::vector<std::size_t>{1, 2}));
}

TEST(Model, TopkPoolCountsAndErrors) {
  Tape tape;
  Rng rng(13);
  const Graph g = random_graph(7, 3, rng);
  const Topology topo = topology_of_graph(g);
  Var x = tape.constant(random_tensor(7, 3, rng));
  Var e = tape.constant(random_tensor(topo.edges.size(), 3, rng));
  Var p = tape.constant(random_tensor(3, 1, rng));
  for (double rate : {0.01, 0.3, 0.5, 0.99, 1.0}) {
    const auto r = topk_pool(x, topo, e, p, rate);
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(rate * 7 - 1e-9)));
    EXPECT_EQ(r.record.selected.size(), k) << rate;
    EXPECT_TRUE(std::is_sorted(r.record.selected.begin(), r.record.selected.end()));
  }
  EXPECT_THROW(topk_pool(x, topo, e, tape.constant(Tensor::zeros(3, 1)), 0.5), NumericError);
  EXPECT_THROW(topk_pool(x, topo, e, p, 0.0), ContractError);
  EXPECT_THROW(topk_pool(x, topo, e, tape.constant(random_tensor(2, 1, rng)), 0.5), DimensionError);
}

TEST(Model, TopkPoolRateOneKeepsEverything) {
  Tape tape;
  Rng rng(14);
  const Graph g = random_graph(6, 2, rng);
  const Topology topo = topology_of_graph(g);
  const Tensor x = random_tensor(6, 3, rng), p = random_tensor(3, 1, rng);
  const auto r = topk_pool(tape.constant(x), topo, tape.constant(random_tensor(topo.edges.size(), 3, rng)),
                           tape.constant(p), 1.0);
  EXPECT_EQ(r.record.selected.size(), 6u);
  EXPECT_EQ(r.topology.edges, topo.edges);
  const double norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  for (std::size_t i = 0; i < 6; ++i) {
    const double y = (x(i, 0) * p[0] + x(i, 1) * p[1] + x(i, 2) * p[2]) / norm;
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(r.x.value()(i, c), x(i, c) * std::tanh(y), 1e-12);
  }
}

TEST(Model, TopkPoolInducedSubgraph) {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = random_graph(3 + uniform_index(rng, 8), 4, rng);
    const Topology topo = topology_of_graph(g);
    Tape tape;
    const auto r = topk_pool(tape.constant(random_tensor(g.num_nodes, 3, rng)), topo,
                             tape.constant(random_tensor(topo.edges.size(), 2, rng)),
                             tape.constant(random_tensor(3, 1, rng)), 0.5);
    const std::set<std::size_t> kept(r.record.selected.begin(), r.record.selected.end());
    std::size_t survivors = 0;
    for (const Edge& edge : topo.edges) survivors += kept.count(edge.src) && kept.count(edge.dst);
    EXPECT_EQ(r.topology.edges.size(), survivors);
    for (std::size_t k = 0; k < r.topology.edges.size(); ++k) {
      const Edge& before = topo.edges[r.record.kept_edges[k]];
      EXPECT_EQ(r.record.selected[r.topology.edges[k].src], before.src);
      EXPECT_EQ(r.record.selected[r.topology.edges[k].dst], before.dst);
    }
  }
}

TEST(Model, TopkPoolPerGraphInBatch) {
  Rng rng(16);
  const Graph gs[] = {random_graph(4, 1, rng), random_graph(7, 2, rng), random_graph(1, 0, rng)};
  const Batch batch = batch_graphs(gs);
  const Topology topo = topology_of(batch);
  Tape tape;
  const auto r = topk_pool(tape.constant(random_tensor(12, 3, rng)), topo,
                           tape.constant(random_tensor(topo.edges.size(), 2, rng)),
                           tape.constant(random_tensor(3, 1, rng)), 0.5);
  std::vector<std::size_t> per_graph(3, 0);
  for (std::size_t g : r.topology.graph_of_node) ++per_graph[g];
  EXPECT_EQ(per_graph, (std::vector<std::size_t>{2, 4, 1}));
}

TEST(Model, UnpoolPlacesRowsAndRestoresStructure) {
  Tape tape;
  const Tensor x = Tensor::from_rows({{2, 0}, {1, 0}, {3, 0}});
  const Topology topo = single_topology(3, {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {0, 2}, {2, 0}});
  Rng rng(17);
  const Tensor e = random_tensor(6, 2, rng);
  const auto pooled = topk_pool(tape.constant(x), topo, tape.constant(e), tape.constant(Tensor::from_rows({{1}, {0}})), 0.5);
  const auto up = unpool(pooled.x, pooled.e, pooled.record);
  ASSERT_EQ(up.x.value().rows(), 3u);
  EXPECT_EQ(up.x.value()(1, 0), 0.0);
  EXPECT_EQ(up.x.value()(1, 1), 0.0);
  EXPECT_EQ(up.x.value()(0, 0), pooled.x.value()(0, 0));
  EXPECT_EQ(up.x.value()(2, 0), pooled.x.value()(1, 0));
  EXPECT_EQ(up.topology.edges, topo.edges);
  for (std::size_t k = 0; k < 6; ++k) {
    const bool kept = k == 4 || k == 5;
    EXPECT_EQ(up.e.value()(k, 0), kept ? e(k, 0) : 0.0);
  }

  EXPECT_THROW(unpool(tape.constant(Tensor::zeros(3, 2)), pooled.e, pooled.record), ContractError);
  EXPECT_THROW(unpool(pooled.x, tape.constant(Tensor::zeros(5, 2)), pooled.record), ContractError);
}

TEST(Model, UnpoolAfterFullPoolIsGatedIdentity) {
  Tape tape;
  Rng rng(18);
  const Graph g = random_graph(5, 1, rng);
  const Topology topo = topology_of_graph(g);
  const Tensor x = random_tensor(5, 3, rng), e = random_tensor(topo.edges.size(), 3, rng);
  const auto pooled = topk_pool(tape.constant(x), topo, tape.constant(e), tape.constant(random_tensor(3, 1, rng)), 1.0);
  const auto up = unpool(pooled.x, pooled.e, pooled.record);
  EXPECT_EQ(values(up.x.value()), values(pooled.x.value()));
  EXPECT_EQ(values(up.e.value()), values(e));
  EXPECT_EQ(up.topology.edges, topo.edges);
}

TEST(Model, PoolGradients) {
  Rng rng(19);
  const Graph g = random_graph(6, 2, rng);
  const Topology topo = topology_of_graph(g);
  const Tensor e = random_tensor(topo.edges.size(), 2, rng);
  const ScalarFunction f = [&](Tape& t, std::span<const Var> p) {
    const auto pooled = topk_pool(p[0], topo, t.constant(e), p[1], 0.5);
    const auto up = unpool(pooled.x, pooled.e, pooled.record);
    return add(sum(mul(up.x, up.x)), sum(up.e));
  };
  EXPECT_LT(max_gradient_error(f, {random_tensor(6, 3, rng), random_tensor(3, 1, rng)}, 1e-6), 1e-6);
}

// ---- edge_update ---------------------------------------------------------------

TEST(Model, EdgeUpdateExamples) {
  Rng rng(20);
  const Graph g = random_graph(5, 2, rng);
  const Topology topo = topology_of_graph(g);
  const std::size_t m = topo.edges.size();
  const Tensor e = random_tensor(m, 3, rng), x = random_tensor(5, 3, rng);
  Tape tape;
  const Mlp zero{tape.constant(Tensor::zeros(9, 3)), tape.constant(Tensor::zeros(1, 3)),
                 tape.constant(Tensor::zeros(3, 3)), tape.constant(Tensor::zeros(1, 3))};
  for (double v : edge_update(tape.constant(e), tape.constant(x), topo, zero).value().data()) EXPECT_EQ(v, 0.0);

  Tensor select = Tensor::zeros(9, 3);
  for (std::size_t c = 0; c < 3; ++c) select(c, c) = 1.0;
  const Tensor out = edge_update(tape.constant(e), tape.constant(x), topo, linear(tape, select)).value();
  EXPECT_EQ(values(out), values(e));

  // [e, x_src, x_dst] layout.
  Tensor pick_dst = Tensor::zeros(9, 3);
  for (std::size_t c = 0; c < 3; ++c) pick_dst(6 + c, c) = 1.0;
  const Tensor dst = edge_update(tape.constant(e), tape.constant(x), topo, linear(tape, pick_dst)).value();
  for (std::size_t k = 0; k < m; ++k) EXPECT_EQ(dst(k, 1), x(topo.edges[k].dst, 1));

  EXPECT_THROW(edge_update(tape.constant(random_tensor(m + 1, 3, rng)), tape.constant(x), topo, zero), DimensionError);
}

TEST(Model, EdgeUpdateGradientReachesEveryIncidentEdge) {
  Rng rng(21);
  const Graph g = random_graph(5, 3, rng);
  const Topology topo = topology_of_graph(g);
  const std::size_t m = topo.edges.size();
  const Tensor w1 = random_tensor(6, 4, rng), w2 = random_tensor(4, 2, rng);
  const ScalarFunction f = [&](Tape& t, std::span<const Var> p) {
    const Mlp mlp{t.constant(w1), p[2], t.constant(w2), t.constant(Tensor::zeros(1, 2))};
    return sum(mul(edge_update(p[0], p[1], topo, mlp), edge_update(p[0], p[1], topo, mlp)));
  };
  const std::vector<Tensor> params = {random_tensor(m, 2, rng), random_tensor(5, 2, rng), random_tensor(1, 4, rng)};
  EXPECT_LT(max_gradient_error(f, params, 1e-6), 1e-6);

  // Perturbing one node moves every edge that touches it and no other edge.
  Tape tape;
  const Mlp mlp{tape.constant(w1), tape.constant(Tensor::zeros(1, 4)), tape.constant(w2), tape.constant(Tensor::zeros(1, 2))};
  Tensor x = params[1];
  const Tensor before = edge_update(tape.constant(params[0]), tape.constant(x), topo, mlp).value();
  x(2, 0) += 0.5;
  x(2, 1) -= 0.5;
  const Tensor after = edge_update(tape.constant(params[0]), tape.constant(x), topo, mlp).value();
  for (std::size_t k = 0; k < m; ++k) {
    const bool incident = topo.edges[k].src == 2 || topo.edges[k].dst == 2;
    if (!incident) {
      EXPECT_EQ(after(k, 0), before(k, 0));
      EXPECT_EQ(after(k, 1), before(k, 1));
    }
  }
}

// ---- full model -----------------------------------------------------------------

TEST(Model, ForwardShapesAndDeterminism) {
  const auto codec = FeatureCodec::molecular();
  const GceModel model(small_config(), 5);
  Rng rng(22);
  for (std::size_t n : {1, 2, 5, 11}) {
    const Graph g = random_graph(n, n > 3 ? 2 : 0, rng);
    const auto pair = corrupt(g, MaskConfig{}, codec, n);
    const Batch b = single(pair.masked);
    const auto r1 = model.reconstruct(b);
    const auto r2 = model.reconstruct(b);
    EXPECT_EQ(r1.x_hat.rows(), pair.masked.num_nodes);
    EXPECT_EQ(r1.x_hat.cols(), codec.node_dim());
    EXPECT_EQ(r1.e_hat.rows(), pair.masked.edges.size());
    EXPECT_EQ(r1.e_hat.cols(), codec.edge_dim());
    EXPECT_EQ(values(r1.x_hat), values(r2.x_hat));
    EXPECT_EQ(values(r1.e_hat), values(r2.e_hat));
  }
}

TEST(Model, ForwardRejectsCodecMismatch) {
  const GceModel model(small_config(), 5);
  const FeatureCodec other({"A", "B"}, {"single", "no_bond", "masked"});
  const std::vector<std::pair<std::size_t, std::size_t>> pairs = {{0, 1}};
  const std::vector<std::size_t> nodes = {0, 1}, edges = {0};
  const Graph g = make_graph(2, pairs, nodes, edges, other);
  EXPECT_THROW(model.reconstruct(single(g)), ContractError);
}

TEST(Model, BatchedForwardMatchesPerGraph) {
  const GceModel model(small_config(0.5, 6, 8), 6);
  Rng rng(23);
  std::vector<Graph> gs;
  for (int i = 0; i < 6; ++i) gs.push_back(random_graph(1 + uniform_index(rng, 10), 2, rng));
  const Batch batch = batch_graphs(gs);
  const auto all = model.reconstruct(batch);
  std::size_t node_base = 0, edge_base = 0;
  for (const Graph& g : gs) {
    const auto one = model.reconstruct(single(g));
    for (std::size_t i = 0; i < g.num_nodes; ++i)
      for (std::size_t c = 0; c < one.x_hat.cols(); ++c)
        EXPECT_NEAR(all.x_hat(node_base + i, c), one.x_hat(i, c), 1e-9);
    for (std::size_t k = 0; k < g.edges.size(); ++k)
      for (std::size_t c = 0; c < one.e_hat.cols(); ++c)
        EXPECT_NEAR(all.e_hat(edge_base + k, c), one.e_hat(k, c), 1e-9);
    node_base += g.num_nodes;
    edge_base += g.edges.size();
  }
}

TEST(Model, ForwardPermutationEquivariant) {
  const GceModel model(small_config(0.5, 6, 8), 7);
  Rng rng(24);
  int checked = 0, skipped = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 3 + uniform_index(rng, 8);
    const Graph g = random_graph(n, 3, rng);
    const auto perm = gce::test::random_permutation(n, rng);
    const Graph pg = gce::test::permute_graph(g, perm);
    ForwardTrace trace;
    const auto a = model.reconstruct(single(g), &trace);
    if (!scores_distinct(trace)) {
      ++skipped;
      continue;
    }
    const auto b = model.reconstruct(single(pg));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < a.x_hat.cols(); ++c) EXPECT_NEAR(a.x_hat(i, c), b.x_hat(perm[i], c), 1e-9);
    // permute_graph keeps edge order, so edge rows line up directly.
    for (std::size_t k = 0; k < g.edges.size(); ++k)
      for (std::size_t c = 0; c < a.e_hat.cols(); ++c) EXPECT_NEAR(a.e_hat(k, c), b.e_hat(k, c), 1e-9);
    ++checked;
  }
  EXPECT_GE(checked, 20) << skipped << " graphs had tied scores";
}

TEST(Model, ForwardWithTiedScoresStillDeterministic) {
  const GceModel model(small_config(0.5, 4, 4), 8);
  // Identical atoms on a symmetric ring tie every pooling score.
  const std::vector<std::pair<std::size_t, std::size_t>> ring = {{0, 1}, {1, 2}, {2, 3}, {3, 0}};
  const std::vector<std::size_t> nodes(4, 0), edges(4, 0);
  const Graph g = make_graph(4, ring, nodes, edges, FeatureCodec::molecular());
  ForwardTrace trace;
  const auto a = model.reconstruct(single(g), &trace);
  EXPECT_FALSE(scores_distinct(trace));
  EXPECT_EQ(trace.records[0].selected, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(values(model.reconstruct(single(g)).x_hat), values(a.x_hat));
}

TEST(Model, RateOneNeverChangesStructure) {
  const GceModel model(small_config(1.0, 6, 5), 9);
  Rng rng(25);
  const Graph g = random_graph(8, 3, rng);
  ForwardTrace trace;
  model.reconstruct(single(g), &trace);
  ASSERT_EQ(trace.records.size(), 3u);
  for (const auto& r : trace.records) {
    EXPECT_EQ(r.selected.size(), 8u);
    EXPECT_EQ(r.kept_edges.size(), g.edges.size());
    EXPECT_EQ(r.before.edges, g.edges);
  }
}

TEST(Model, ForwardGradientsMatchFiniteDifferences) {
  GceModel model(small_config(0.5, 4, 3), 10);
  Rng rng(26);
  const Graph g = random_graph(5, 2, rng);
  const auto pair = corrupt(g, MaskConfig{0.2, 0.2, 2}, FeatureCodec::molecular(), 3);
  const Batch b = single(pair.masked);
  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.value);
  ForwardTrace trace;
  model.reconstruct(b, &trace);
  ASSERT_TRUE(scores_distinct(trace));
  const ScalarFunction f = [&](Tape&, std::span<const Var> p) {
    const auto out = model.forward(p, b);
    return reconstruction_loss(out.x_hat, out.e_hat, pair.ground_truth, 1.0);
  };
  EXPECT_LT(max_gradient_error(f, params, 1e-6), 1e-5);
}

TEST(Model, EveryParameterReceivesGradient) {
  const auto codec = FeatureCodec::molecular();
  GceModel model(small_config(0.5, 6, 6), 11);
  model.attach_head(2, 12);
  Rng rng(27);
  std::vector<bool> touched(model.parameters().size(), false);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<MaskedPair> pairs;
    std::vector<Graph> masked;
    for (int i = 0; i < 4; ++i) {
      pairs.push_back(corrupt(random_graph(3 + uniform_index(rng, 9), 2, rng), MaskConfig{}, codec, rng()));
      pairs.back().masked.label = i % 2;
      masked.push_back(pairs.back().masked);
    }
    const Batch batch = batch_graphs(masked);
    std::vector<Graph> truth;
    for (const auto& p : pairs) truth.push_back(p.ground_truth);
    const Batch gt = batch_graphs(truth);
    Tape tape;
    auto bound = model.bind(tape, true);
    const auto out = model.forward(bound, batch);
    const std::vector<std::size_t> labels = {0, 1, 0, 1};
    Var loss = add(reconstruction_loss(out.x_hat, out.e_hat, gt.graph, 1.0),
                   softmax_cross_entropy(model.classifier_forward(bound, batch), labels));
    const Gradients grads = tape.backward(loss);
    for (std::size_t k = 0; k < bound.size(); ++k) {
      if (!grads.has(bound[k])) continue;
      for (double v : grads[bound[k]].data()) {
        if (v != 0.0) touched[k] = true;
      }
    }
  }
  for (std::size_t k = 0; k < touched.size(); ++k) EXPECT_TRUE(touched[k]) << model.parameters()[k].name;
}

TEST(Model, EpsilonFrozenWhenNotTrainable) {
  GceConfig c = small_config(0.5, 4, 4);
  c.trainable_epsilon = false;
  const GceModel model(c, 13);
  Tape tape;
  auto bound = model.bind(tape, true);
  for (std::size_t k = 0; k < bound.size(); ++k) {
    EXPECT_EQ(bound[k].value().requires_grad(), !model.parameters()[k].name.ends_with(".eps"));
  }
}

// ---- classifier ----------------------------------------------------------------

TEST(Model, ClassifierExamples) {
  GceModel model(small_config(0.5, 4, 6), 14);
  Rng rng(28);
  const Graph g = random_graph(7, 2, rng), h = random_graph(4, 1, rng);
  EXPECT_THROW(model.classify(single(g)), ConfigError);
  EXPECT_THROW(model.attach_head(0, 1), ConfigError);
  model.attach_head(3, 15);
  const Tensor one = model.classify(single(g));
  EXPECT_EQ(one.rows(), 1u);
  EXPECT_EQ(one.cols(), 3u);

  const Graph trio[] = {g, h, g};
  const Tensor three = model.classify(batch_graphs(trio));
  ASSERT_EQ(three.rows(), 3u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(three(0, c), three(2, c), 1e-12);
    EXPECT_NEAR(three(0, c), one(0, c), 1e-9);
  }
}

TEST(Model, ClassifierPermutationInvariant) {
  GceModel model(small_config(0.5, 4, 6), 16);
  model.attach_head(2, 17);
  Rng rng(29);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + uniform_index(rng, 9);
    const Graph g = random_graph(n, 2, rng);
    ForwardTrace trace;
    model.reconstruct(single(g), &trace);
    if (!scores_distinct(trace)) continue;
    const Graph pg = gce::test::permute_graph(g, gce::test::random_permutation(n, rng));
    const Tensor a = model.classify(single(g)), b = model.classify(single(pg));
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(a(0, c), b(0, c), 1e-9);
    ++checked;
  }
  EXPECT_GE(checked, 15);
}

TEST(Model, HeadReattachReplacesParameters) {
  GceModel model(small_config(0.5, 4, 4), 18);
  const std::size_t base = model.parameters().size();
  model.attach_head(2, 1);
  EXPECT_EQ(model.parameters().size(), base + 4);
  model.attach_head(5, 1);
  EXPECT_EQ(model.parameters().size(), base + 4);
  EXPECT_EQ(model.num_classes(), 5u);
  EXPECT_EQ(model.find("head.b2")->value.cols(), 5u);
  EXPECT_TRUE(GceModel::is_encoder_parameter("enc1.conv.w1"));
  EXPECT_TRUE(GceModel::is_encoder_parameter("node_in.w"));
  EXPECT_FALSE(GceModel::is_encoder_parameter("dec0.conv.w1"));
  EXPECT_FALSE(GceModel::is_encoder_parameter("node_out.w1"));
  EXPECT_TRUE(GceModel::is_head_parameter("head.w1"));
}
