#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "kcln/network.hpp"
#include "test_util.hpp"

using namespace kcln;

namespace {

KnowledgeGraph make_graph(int n, int n_features, int n_labels,
                          std::vector<std::vector<std::pair<EntityId, EntityId>>> edges) {
  KnowledgeGraph g;
  g.n_entities = n;
  for (int f = 0; f < n_features; ++f) g.feature_names.push_back("f" + std::to_string(f));
  for (int l = 0; l < n_labels; ++l) g.label_names.push_back("c" + std::to_string(l));
  for (size_t r = 0; r < edges.size(); ++r) g.relation_names.push_back("r" + std::to_string(r));
  g.labels.assign(n, 0);
  g.features = Eigen::MatrixXd::Zero(n, n_features);
  g.edges = std::move(edges);
  build_neighbor_index(g);
  return g;
}

NetworkConfig small_config(const KnowledgeGraph& g, int layers = 1, int hidden = 2) {
  NetworkConfig cfg;
  cfg.n_layers = layers;
  cfg.hidden_dim = hidden;
  cfg.activation = Activation::identity;
  cfg.z = 1.0;
  cfg.input_dim = g.n_features();
  cfg.n_labels = g.n_labels();
  cfg.n_relations = g.n_relations();
  return cfg;
}

NetworkParams zero_params(const NetworkConfig& cfg) {
  return init_params(cfg, InitScheme::zeros, 0);
}

}  // namespace

TEST_CASE("context averages in-neighbor rows") {
  auto g = make_graph(3, 2, 2, {{{2, 1}}});
  Eigen::MatrixXd h(3, 2);
  h << 0.0, 0.0,
       9.0, 9.0,
       0.5, -1.0;
  Eigen::VectorXd c = context(g, h, 1, 0);
  CHECK(c(0) == 0.5);
  CHECK(c(1) == -1.0);
  CHECK(context(g, h, 0, 0).isZero());  // empty neighborhood

  auto g2 = make_graph(3, 2, 2, {{{0, 2}, {1, 2}}});
  Eigen::MatrixXd h2(3, 2);
  h2 << 1.0, 0.0,
        0.0, 1.0,
        0.0, 0.0;
  Eigen::VectorXd c2 = context(g2, h2, 2, 0);
  CHECK(c2(0) == 0.5);
  CHECK(c2(1) == 0.5);
}

TEST_CASE("hidden_layer basics") {
  auto g = make_graph(2, 2, 2, {{{0, 1}}});

  SUBCASE("all-zero parameters with relu stay zero") {
    auto cfg = small_config(g);
    cfg.activation = Activation::relu;
    auto p = zero_params(cfg);
    Eigen::MatrixXd h = Eigen::MatrixXd::Random(2, 2);
    CHECK(hidden_layer(cfg, p, g, h, 1).isZero());
  }

  SUBCASE("identity weights pass the previous layer through") {
    auto cfg = small_config(g);
    auto p = zero_params(cfg);
    p.layers[0].w = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd h(2, 2);
    h << 0.25, -3.0, 1.5, 2.0;
    CHECK(hidden_layer(cfg, p, g, h, 1) == h);
  }

  SUBCASE("bias plus relu") {
    auto g1 = make_graph(1, 2, 2, {});
    auto cfg = small_config(g1);
    cfg.activation = Activation::relu;
    auto p = zero_params(cfg);
    p.layers[0].b << 1.0, -1.0;
    Eigen::MatrixXd h = Eigen::MatrixXd::Ones(1, 2);
    Eigen::MatrixXd out = hidden_layer(cfg, p, g1, h, 1);
    CHECK(out(0, 0) == 1.0);
    CHECK(out(0, 1) == 0.0);
  }
}

TEST_CASE("gated_hidden_layer") {
  auto g = make_graph(2, 2, 2, {{{0, 1}}});
  auto cfg = small_config(g);
  auto p = init_params(cfg, InitScheme::uniform_scaled, 42);

  SUBCASE("unit gates reproduce the ungated layer bit for bit") {
    Eigen::MatrixXd h = Eigen::MatrixXd::Random(2, 2);
    auto gated = gated_hidden_layer(cfg, p, g, h, 1, unit_gates(2, 1));
    auto plain = hidden_layer(cfg, p, g, h, 1);
    CHECK(gated == plain);
  }

  SUBCASE("entity gate doubles the column path") {
    auto pz = zero_params(cfg);
    pz.layers[0].w << 1.0, 0.0, 0.0, 1.0;
    Gates gates = unit_gates(2, 1);
    gates.entity(1) = 2.0;
    Eigen::MatrixXd h(2, 2);
    h << 1.0, 2.0, 3.0, 4.0;
    auto out = gated_hidden_layer(cfg, pz, g, h, 1, gates);
    CHECK(out.row(0) == h.row(0));
    CHECK(out(1, 0) == 6.0);
    CHECK(out(1, 1) == 8.0);
  }

  SUBCASE("context gate scales only the context term of that entity") {
    auto pz = zero_params(cfg);
    pz.layers[0].v[0] << 1.0, 0.0, 0.0, 1.0;
    Gates gates = unit_gates(2, 1);
    gates.context(1, 0) = 0.5;
    Eigen::MatrixXd h(2, 2);
    h << 4.0, -2.0, 0.0, 0.0;
    auto out = gated_hidden_layer(cfg, pz, g, h, 1, gates);
    // entity 1 receives 0.5 * context([4,-2]) through identity V
    CHECK(out(1, 0) == 2.0);
    CHECK(out(1, 1) == -1.0);
    CHECK(out.row(0).isZero());  // entity 0 has no in-neighbors
  }

  SUBCASE("non-positive gates are rejected") {
    Gates gates = unit_gates(2, 1);
    gates.entity(0) = 0.0;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2, 2);
    CHECK_THROWS_AS(gated_hidden_layer(cfg, p, g, h, 1, gates), std::invalid_argument);
  }
}

TEST_CASE("forward output layer") {
  auto g = make_graph(3, 2, 4, {});
  auto cfg = small_config(g, 2, 3);
  auto p = zero_params(cfg);

  SUBCASE("zero output parameters give uniform probabilities") {
    auto tr = forward(cfg, p, g, g.features);
    for (int i = 0; i < 3; ++i)
      for (int l = 0; l < 4; ++l) CHECK(tr.probs(i, l) == 0.25);
  }

  SUBCASE("rows are normalized and finite on random parameters") {
    auto pr = init_params(cfg, InitScheme::uniform_scaled, 3);
    Eigen::MatrixXd feats = Eigen::MatrixXd::Random(3, 2);
    auto tr = forward(cfg, pr, g, feats);
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(tr.probs.row(i).sum() - 1.0) < 1e-9);
    CHECK(tr.probs.allFinite());
    CHECK(tr.hidden.size() == 3);  // input + 2 layers
  }

  SUBCASE("identical isolated entities produce identical rows") {
    auto pr = init_params(cfg, InitScheme::uniform_scaled, 4);
    Eigen::MatrixXd feats(3, 2);
    feats << 0.5, -1.0,
             0.5, -1.0,
             2.0, 0.0;
    auto tr = forward(cfg, pr, g, feats);
    CHECK(tr.probs.row(0) == tr.probs.row(1));
  }
}

TEST_CASE("forward permutation equivariance") {
  auto g = make_graph(4, 2, 2, {{{0, 1}, {2, 3}, {1, 2}}});
  auto cfg = small_config(g, 3, 3);
  cfg.activation = Activation::tanh;
  auto p = init_params(cfg, InitScheme::uniform_scaled, 9);
  Eigen::MatrixXd feats = Eigen::MatrixXd::Random(4, 2);
  auto base = forward(cfg, p, g, feats);

  const std::vector<int> perm = {2, 0, 3, 1};
  auto h = make_graph(4, 2, 2, {{}});
  h.edges[0].clear();
  for (auto [s, d] : g.edges[0]) h.edges[0].emplace_back(perm[s], perm[d]);
  build_neighbor_index(h);
  Eigen::MatrixXd pfeats(4, 2);
  for (int i = 0; i < 4; ++i) pfeats.row(perm[i]) = feats.row(i);
  auto permuted = forward(cfg, p, h, pfeats);
  for (int i = 0; i < 4; ++i)
    CHECK((permuted.probs.row(perm[i]) - base.probs.row(i)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("z scaling divides the context term") {
  auto g = make_graph(2, 2, 2, {{{0, 1}}});
  auto cfg = small_config(g);
  auto p = zero_params(cfg);
  p.layers[0].v[0] << 1.0, 0.0, 0.0, 1.0;
  Eigen::MatrixXd h(2, 2);
  h << 3.0, 9.0, 0.0, 0.0;

  cfg.z = 1.0;
  auto out1 = hidden_layer(cfg, p, g, h, 1);
  cfg.z = 3.0;
  auto out3 = hidden_layer(cfg, p, g, h, 1);
  CHECK(out1(1, 0) == 3.0);
  CHECK(out3(1, 0) == 1.0);
  CHECK(out3(1, 1) == 3.0);
}

TEST_CASE("compute_gates") {
  MaskMatrix ctx_flags = MaskMatrix::Zero(2, 1);
  ctx_flags(1, 0) = 1;
  std::vector<std::uint8_t> eflags = {1, 1};
  Eigen::VectorXd grad(2);

  SUBCASE("zero gradient gives unit gates") {
    grad << 0.0, 0.0;
    auto gates = compute_gates(eflags, ctx_flags, grad, 1.0);
    CHECK(gates.entity(0) == 1.0);
    CHECK(gates.entity(1) == 1.0);
    CHECK(gates.context(0, 0) == 1.0);
    CHECK(gates.context(1, 0) == 1.0);
  }

  SUBCASE("positive gradient amplifies, negative dampens") {
    grad << 0.7, -0.6;
    auto gates = compute_gates(eflags, ctx_flags, grad, 1.0);
    CHECK(gates.entity(0) == doctest::Approx(2.013752).epsilon(1e-6));
    auto half = compute_gates(eflags, ctx_flags, grad, 0.5);
    CHECK(half.entity(1) == doctest::Approx(0.740818).epsilon(1e-6));
    CHECK(half.entity(1) < 1.0);
  }

  SUBCASE("unflagged positions get exactly one") {
    grad << 0.9, 0.9;
    std::vector<std::uint8_t> off = {0, 1};
    auto gates = compute_gates(off, ctx_flags, grad, 1.0);
    CHECK(gates.entity(0) == 1.0);
    CHECK(gates.context(0, 0) == 1.0);
    CHECK(gates.entity(1) > 1.0);
    CHECK(gates.context(1, 0) > 1.0);
  }
}

TEST_CASE("parameter sharing shapes") {
  auto g = make_graph(2, 3, 2, {{{0, 1}}});
  auto cfg = small_config(g, 4, 5);
  cfg.share_parameters = true;
  auto shared = init_params(cfg, InitScheme::uniform_scaled, 1);
  CHECK(shared.layers.size() == 2);
  CHECK(shared.layers[0].w.cols() == 3);  // D
  CHECK(shared.layers[1].w.cols() == 5);  // K
  CHECK(layer_slot(cfg, 1) == 0);
  CHECK(layer_slot(cfg, 3) == 1);
  CHECK(layer_slot(cfg, 4) == 1);

  cfg.share_parameters = false;
  auto full = init_params(cfg, InitScheme::uniform_scaled, 1);
  CHECK(full.layers.size() == 4);
  CHECK(layer_slot(cfg, 3) == 2);
}

TEST_CASE("checkpoint round trip") {
  kcln_test::TempDir dir("kcln-net");
  auto g = make_graph(3, 2, 2, {{{0, 1}, {1, 2}}});
  auto cfg = small_config(g, 2, 3);
  cfg.activation = Activation::sigmoid;
  auto p = init_params(cfg, InitScheme::uniform_scaled, 77);
  Gates gates = unit_gates(3, 1);
  gates.entity(1) = 1.25;

  const std::string path = dir.file("model.kcln.json");
  save_checkpoint(path, cfg, p, &gates);
  auto ck = load_checkpoint(path);
  CHECK(ck.config.hidden_dim == 3);
  CHECK(ck.config.activation == Activation::sigmoid);
  REQUIRE(ck.params.layers.size() == p.layers.size());
  for (size_t i = 0; i < p.layers.size(); ++i) {
    CHECK(ck.params.layers[i].w == p.layers[i].w);
    CHECK(ck.params.layers[i].b == p.layers[i].b);
    for (size_t r = 0; r < p.layers[i].v.size(); ++r)
      CHECK(ck.params.layers[i].v[r] == p.layers[i].v[r]);
  }
  CHECK(ck.params.w_out == p.w_out);
  REQUIRE(ck.gates.has_value());
  CHECK(ck.gates->entity(1) == 1.25);

  // forward on the reloaded parameters matches exactly
  auto a = forward(cfg, p, g, g.features);
  auto b = forward(ck.config, ck.params, g, g.features);
  CHECK(a.probs == b.probs);

  kcln_test::write_file(dir.file("bogus.json"), "{\"magic\":\"nope\"}");
  CHECK_THROWS_AS(load_checkpoint(dir.file("bogus.json")), std::runtime_error);
}

TEST_CASE("non-finite parameters are reported") {
  auto g = make_graph(2, 2, 2, {});
  auto cfg = small_config(g);
  auto p = zero_params(cfg);
  p.layers[0].w(0, 0) = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd feats = Eigen::MatrixXd::Ones(2, 2);
  CHECK_THROWS_AS(forward(cfg, p, g, feats), std::runtime_error);
}
