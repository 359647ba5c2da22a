#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "kcln/training.hpp"
#include "random_instances.hpp"

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

AdviceMasks masks_with_preferred(const KnowledgeGraph& g, std::vector<std::pair<int, int>> prefs) {
  AdviceMasks m = zero_masks(g);
  for (auto [i, l] : prefs) {
    m.preferred_label[i] = l;
    m.label_mask(i, l) = 1;
  }
  return m;
}

// Applies fn to every parameter matrix/vector of both structures in lockstep.
template <typename F>
void zip_params(NetworkParams& a, const NetworkParams& b, F fn) {
  for (size_t i = 0; i < a.layers.size(); ++i) {
    fn(a.layers[i].w, b.layers[i].w);
    fn(a.layers[i].b, b.layers[i].b);
    for (size_t r = 0; r < a.layers[i].v.size(); ++r) fn(a.layers[i].v[r], b.layers[i].v[r]);
  }
  fn(a.w_out, b.w_out);
  fn(a.b_out, b.b_out);
}

double loss_at(const NetworkConfig& cfg, const NetworkParams& p, const KnowledgeGraph& g,
               const Gates& gates, const std::vector<EntityId>& ids) {
  auto tr = forward(cfg, p, g, g.features, &gates);
  return data_loss(tr.probs, g.labels, ids);
}

// Max relative error between analytic gradients and central finite
// differences over every parameter (measurement floor 1e-6).
double max_fd_error(const NetworkConfig& cfg, NetworkParams p, const KnowledgeGraph& g,
                    const Gates& gates, const std::vector<EntityId>& ids) {
  auto tr = forward(cfg, p, g, g.features, &gates);
  NetworkParams analytic = backward(cfg, p, g, tr, g.labels, ids, gates, 1.0);
  const double h = 1e-6;
  double worst = 0.0;
  zip_params(p, analytic, [&](auto& param, const auto& grad) {
    for (Eigen::Index k = 0; k < param.size(); ++k) {
      const double saved = param(k);
      param(k) = saved + h;
      const double up = loss_at(cfg, p, g, gates, ids);
      param(k) = saved - h;
      const double down = loss_at(cfg, p, g, gates, ids);
      param(k) = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = grad(k);
      const double rel =
          std::abs(fd - an) / std::max({1e-6, std::abs(fd), std::abs(an)});
      worst = std::max(worst, rel);
    }
  });
  return worst;
}

}  // namespace

TEST_CASE("advice_gradient log-likelihood form") {
  auto g = make_graph(3, 1, 3, {});
  Eigen::MatrixXd probs(3, 3);
  probs << 0.3, 0.4, 0.3,
           0.2, 0.5, 0.3,
           1.0, 0.0, 0.0;

  SUBCASE("preferred labels") {
    auto m = masks_with_preferred(g, {{0, 0}, {1, 1}, {2, 0}});
    auto grad = advice_gradient(probs, m);
    CHECK(grad(0) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(grad(1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(grad(2) == 0.0);  // saturated
  }

  SUBCASE("entities outside the advice set stay zero") {
    auto m = masks_with_preferred(g, {{0, 0}});
    auto grad = advice_gradient(probs, m);
    CHECK(grad(1) == 0.0);
    CHECK(grad(2) == 0.0);
  }

  SUBCASE("non-preferred-only advice demotes") {
    auto m = zero_masks(g);
    m.nonpreferred[1] = {1};
    auto grad = advice_gradient(probs, m);
    CHECK(grad(1) == doctest::Approx(-0.5).epsilon(1e-12));
    m.nonpreferred[1] = {1, 2};
    CHECK(advice_gradient(probs, m)(1) == doctest::Approx(-0.8).epsilon(1e-12));
  }

  SUBCASE("gradient stays in [-1, 1]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::MatrixXd pr(3, 3);
      for (int i = 0; i < 3; ++i) {
        double a = u(rng), b = u(rng), c = u(rng), s = a + b + c;
        pr.row(i) << a / s, b / s, c / s;
      }
      auto m = masks_with_preferred(g, {{0, 1}, {2, 2}});
      m.nonpreferred[1] = {0, 2};
      auto grad = advice_gradient(pr, m);
      for (int i = 0; i < 3; ++i) {
        CHECK(grad(i) >= -1.0);
        CHECK(grad(i) <= 1.0);
      }
    }
  }

  SUBCASE("unnormalized rows are rejected") {
    Eigen::MatrixXd bad = Eigen::MatrixXd::Constant(3, 3, 0.5);
    CHECK_THROWS_AS(advice_gradient(bad, zero_masks(g)), std::invalid_argument);
  }
}

TEST_CASE("advice_gradient squared form") {
  auto g = make_graph(3, 1, 2, {});
  Eigen::MatrixXd probs(3, 2);
  probs << 0.5, 0.5,
           1.0, 0.0,
           0.5, 0.5;

  auto m = masks_with_preferred(g, {{0, 0}, {1, 0}});
  m.nonpreferred[2] = {0};
  auto grad = advice_gradient_squared(probs, m);
  CHECK(grad(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(grad(1) == 0.0);
  CHECK(grad(2) == doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("data_loss") {
  auto g = make_graph(2, 1, 2, {});
  g.labels = {0, 1};
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(2, 2, 0.5);
  const std::vector<EntityId> ids = {0, 1};

  CHECK(data_loss(uniform, g.labels, ids) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Eigen::MatrixXd perfect(2, 2);
  perfect << 1.0, 0.0, 0.0, 1.0;
  CHECK(data_loss(perfect, g.labels, ids) == doctest::Approx(0.0));

  // clipping keeps the zero-probability case finite
  Eigen::MatrixXd wrong(2, 2);
  wrong << 0.0, 1.0, 1.0, 0.0;
  CHECK(std::isfinite(data_loss(wrong, g.labels, ids)));

  CHECK(data_loss(uniform, g.labels, ids, 0.25, LossScaling::data_tradeoff) ==
        doctest::Approx(0.75 * std::log(2.0)).epsilon(1e-12));
  CHECK(data_loss(uniform, g.labels, ids, 1.0, LossScaling::data_tradeoff) == 0.0);
  CHECK(data_loss(uniform, g.labels, ids, 1.0, LossScaling::none) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(data_loss(uniform, g.labels, {}), std::invalid_argument);
}

TEST_CASE("modified_gradient_check combiner") {
  CHECK(modified_gradient_check(0.4, 0.8, 0.0) == 0.4);
  CHECK(modified_gradient_check(0.4, 0.8, 1.0) == 0.8);
  CHECK(modified_gradient_check(0.4, 0.8, 0.5) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("backward matches finite differences on the documented instance") {
  // 4 entities, one relation, T=2, K=3
  auto g = make_graph(4, 2, 2, {{{0, 1}, {1, 2}, {3, 2}, {2, 0}}});
  g.labels = {0, 1, 0, 1};
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < 4; ++i)
    for (int f = 0; f < 2; ++f) g.features(i, f) = nd(rng);

  NetworkConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = 3;
  cfg.activation = Activation::tanh;
  cfg.z = 1.5;
  cfg.input_dim = 2;
  cfg.n_labels = 2;
  cfg.n_relations = 1;
  auto p = init_params(cfg, InitScheme::uniform_scaled, 5);

  const std::vector<EntityId> ids = {0, 1, 2, 3};
  CHECK(max_fd_error(cfg, p, g, unit_gates(4, 1), ids) < 1e-4);

  // gated variant
  Gates gates = unit_gates(4, 1);
  gates.entity << 1.3, 0.8, 1.0, 1.6;
  gates.context.col(0) << 0.7, 1.0, 1.4, 0.9;
  CHECK(max_fd_error(cfg, p, g, gates, ids) < 1e-4);
}

TEST_CASE("gradient of a relation without edges is zero") {
  auto g = make_graph(3, 2, 2, {{{0, 1}}, {}});
  g.features << 0.5, -1.0, 2.0, 0.3, -0.7, 1.1;
  g.labels = {0, 1, 0};
  auto cfg = NetworkConfig{};
  cfg.n_layers = 2;
  cfg.hidden_dim = 2;
  cfg.activation = Activation::tanh;
  cfg.z = 1.0;
  cfg.input_dim = 2;
  cfg.n_labels = 2;
  cfg.n_relations = 2;
  auto p = init_params(cfg, InitScheme::uniform_scaled, 8);
  auto tr = forward(cfg, p, g, g.features);
  auto grads = backward(cfg, p, g, tr, g.labels, {0, 1, 2}, unit_gates(3, 2), 1.0);
  for (const auto& lw : grads.layers) CHECK(lw.v[1].isZero());
  CHECK(!grads.w_out.isZero());
}

TEST_CASE("identical isolated entities contribute identical gradients") {
  auto single = make_graph(1, 2, 2, {});
  single.features << 0.4, -0.9;
  single.labels = {1};
  auto pair = make_graph(2, 2, 2, {});
  pair.features << 0.4, -0.9, 0.4, -0.9;
  pair.labels = {1, 1};

  NetworkConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = 3;
  cfg.activation = Activation::sigmoid;
  cfg.z = 1.0;
  cfg.input_dim = 2;
  cfg.n_labels = 2;
  cfg.n_relations = 0;
  auto p = init_params(cfg, InitScheme::uniform_scaled, 21);

  auto tr1 = forward(cfg, p, single, single.features);
  auto tr2 = forward(cfg, p, pair, pair.features);
  auto g1 = backward(cfg, p, single, tr1, single.labels, {0}, unit_gates(1, 0), 1.0);
  auto g2 = backward(cfg, p, pair, tr2, pair.labels, {0, 1}, unit_gates(2, 0), 1.0);
  // mean loss over two identical entities equals the single-entity loss
  zip_params(g1, g2, [](const auto& a, const auto& b) {
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-15);
  });
}

TEST_CASE("finite-difference property over random gated instances") {
  std::mt19937_64 rng(20240813);
  std::uniform_int_distribution<int> layers(1, 3), hidden(1, 4);
  std::uniform_real_distribution<double> gate_log(-1.0, 1.0);
  for (int trial = 0; trial < 8; ++trial) {
    auto g = kcln_test::random_graph(rng, 6, 2);
    NetworkConfig cfg;
    cfg.n_layers = layers(rng);
    cfg.hidden_dim = hidden(rng);
    cfg.activation = trial % 2 ? Activation::tanh : Activation::sigmoid;
    cfg.z = average_degree(g);
    cfg.input_dim = g.n_features();
    cfg.n_labels = g.n_labels();
    cfg.n_relations = g.n_relations();
    cfg.share_parameters = trial % 3 != 0;
    auto p = init_params(cfg, InitScheme::uniform_scaled, rng());

    Gates gates = unit_gates(g.n_entities, g.n_relations());
    if (trial % 2) {
      for (int i = 0; i < g.n_entities; ++i) {
        gates.entity(i) = std::exp(gate_log(rng));
        for (int r = 0; r < g.n_relations(); ++r) gates.context(i, r) = std::exp(gate_log(rng));
      }
    }
    std::vector<EntityId> ids;
    for (int i = 0; i < g.n_entities; i += 2) ids.push_back(i);
    CHECK(max_fd_error(cfg, p, g, gates, ids) < 1e-4);
  }
}

namespace {

// 30 entities, two well-separated classes plus homophilous edges.
KnowledgeGraph separable_graph(int n = 30) {
  auto g = make_graph(n, 2, 2, {{}});
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (int i = 0; i < n; ++i) {
    g.labels[i] = i % 2;
    g.features(i, 0) = (g.labels[i] == 0 ? 1.0 : -1.0) + nd(rng);
    g.features(i, 1) = (g.labels[i] == 1 ? 1.0 : -1.0) + nd(rng);
  }
  for (int i = 2; i < n; ++i) g.edges[0].emplace_back(i - 2, i);  // same-parity chain
  build_neighbor_index(g);
  return g;
}

SplitSpec full_split(const KnowledgeGraph& g, int n_test) {
  SplitSpec s;
  for (int i = 0; i < g.n_entities - n_test; ++i) s.train_ids.push_back(i);
  for (int i = g.n_entities - n_test; i < g.n_entities; ++i) s.test_ids.push_back(i);
  return s;
}

NetworkConfig train_net_config(const KnowledgeGraph& g) {
  NetworkConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = 4;
  cfg.activation = Activation::relu;
  cfg.z = average_degree(g);
  cfg.input_dim = g.n_features();
  cfg.n_labels = g.n_labels();
  cfg.n_relations = g.n_relations();
  return cfg;
}

}  // namespace

TEST_CASE("training reduces the loss on a separable benchmark") {
  auto g = separable_graph();
  auto split = full_split(g, 6);
  TrainConfig tc;
  tc.alpha = 0.0;
  tc.learning_rate = 0.05;
  tc.max_epochs = 40;
  tc.patience = 0;  // run all epochs
  tc.seed = 3;
  auto result = train(g, split, zero_masks(g), train_net_config(g), tc);
  REQUIRE(result.curve.size() > 5);
  CHECK(result.curve.back().train_loss < result.curve.front().train_loss);
  CHECK(result.epochs_run == 40);
  CHECK(result.best_epoch == 40);
}

TEST_CASE("empty ruleset trajectory equals the vanilla trajectory bitwise") {
  auto g = separable_graph(20);
  auto split = full_split(g, 5);
  TrainConfig tc;
  tc.alpha = 0.5;
  tc.learning_rate = 0.05;
  tc.max_epochs = 12;
  tc.seed = 11;

  auto vanilla = train(g, split, zero_masks(g), train_net_config(g), tc);
  auto empty_rules = train(g, split, create_masks(g, RuleSet{}, 0.0), train_net_config(g), tc);
  REQUIRE(vanilla.curve.size() == empty_rules.curve.size());
  for (size_t e = 0; e < vanilla.curve.size(); ++e) {
    CHECK(vanilla.curve[e].train_loss == empty_rules.curve[e].train_loss);
    CHECK(vanilla.curve[e].val_loss == empty_rules.curve[e].val_loss);
  }
  CHECK(vanilla.probs == empty_rules.probs);
  zip_params(vanilla.params, empty_rules.params,
             [](const auto& a, const auto& b) { CHECK(a == b); });
}

TEST_CASE("alpha zero reproduces vanilla bitwise even with advice") {
  auto g = separable_graph(20);
  auto split = full_split(g, 5);
  auto masks = masks_with_preferred(g, {{0, 1}, {2, 1}, {4, 0}});

  TrainConfig tc;
  tc.alpha = 0.0;
  tc.learning_rate = 0.05;
  tc.max_epochs = 10;
  tc.seed = 5;
  auto advised = train(g, split, masks, train_net_config(g), tc);
  auto vanilla = train(g, split, zero_masks(g), train_net_config(g), tc);
  CHECK(advised.probs == vanilla.probs);
  for (size_t e = 0; e < advised.curve.size(); ++e)
    CHECK(advised.curve[e].train_loss == vanilla.curve[e].train_loss);
}

TEST_CASE("epoch one is ungated, epoch two reacts to advice") {
  auto g = separable_graph(20);
  auto split = full_split(g, 5);
  auto masks = masks_with_preferred(g, {{0, 1}, {2, 1}});
  // mark the entities so the gate applies to the column path
  masks.entity_mask(0, 0) = 1;
  masks.entity_mask(0, 2) = 1;

  TrainConfig tc;
  tc.alpha = 0.8;
  tc.learning_rate = 0.05;
  tc.max_epochs = 3;
  tc.seed = 7;

  std::vector<Eigen::MatrixXd> probs_kcln, probs_vanilla;
  auto grab = [](std::vector<Eigen::MatrixXd>& sink) {
    return [&sink](int, const Eigen::MatrixXd& p, double, double) { sink.push_back(p); };
  };
  train(g, split, masks, train_net_config(g), tc, grab(probs_kcln));
  train(g, split, zero_masks(g), train_net_config(g), tc, grab(probs_vanilla));

  REQUIRE(probs_kcln.size() >= 2);
  CHECK(probs_kcln[0] == probs_vanilla[0]);  // epoch 1: stored gradients are zero
  bool differs = false;
  for (EntityId i : {0, 2})
    if (probs_kcln[1].row(i) != probs_vanilla[1].row(i)) differs = true;
  CHECK(differs);
}

TEST_CASE("training is deterministic per seed") {
  auto g = separable_graph(16);
  auto split = full_split(g, 4);
  auto masks = masks_with_preferred(g, {{1, 0}});
  masks.entity_mask(0, 1) = 1;
  TrainConfig tc;
  tc.alpha = 0.6;
  tc.learning_rate = 0.05;
  tc.max_epochs = 8;
  tc.seed = 99;
  auto a = train(g, split, masks, train_net_config(g), tc);
  auto b = train(g, split, masks, train_net_config(g), tc);
  CHECK(a.probs == b.probs);
  CHECK(a.state.advice_grad == b.state.advice_grad);
  for (size_t e = 0; e < a.curve.size(); ++e)
    CHECK(a.curve[e].train_loss == b.curve[e].train_loss);

  tc.seed = 100;
  auto c = train(g, split, masks, train_net_config(g), tc);
  CHECK(a.probs != c.probs);
}

TEST_CASE("divergence aborts with a diagnostic") {
  auto g = separable_graph(10);
  auto split = full_split(g, 2);
  TrainConfig tc;
  tc.alpha = 0.0;
  tc.learning_rate = 1e155;
  tc.max_epochs = 30;
  tc.seed = 0;
  auto cfg = train_net_config(g);
  cfg.activation = Activation::identity;
  CHECK_THROWS_AS(train(g, split, zero_masks(g), cfg, tc), std::runtime_error);
}

TEST_CASE("f32 precision path trains") {
  auto g = separable_graph(16);
  auto split = full_split(g, 4);
  TrainConfig tc;
  tc.alpha = 0.0;
  tc.learning_rate = 0.05;
  tc.max_epochs = 6;
  tc.seed = 1;
  tc.precision = Precision::f32;
  auto result = train(g, split, zero_masks(g), train_net_config(g), tc);
  CHECK(result.epochs_run >= 1);
  CHECK(result.probs.allFinite());
  CHECK(std::isfinite(result.curve.back().train_loss));
}

TEST_CASE("gates stay positive and saturate at perfect advice") {
  auto g = separable_graph(12);
  auto masks = masks_with_preferred(g, {{0, 0}});
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(12, 2);
  for (int i = 0; i < 12; ++i) onehot(i, 0) = 1.0;
  auto grad = advice_gradient(onehot, masks);
  CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
  auto gates = compute_gates(entity_gate_flags(masks), context_gate_flags(masks, g), grad, 1.0);
  CHECK(gates.entity.minCoeff() == 1.0);
  CHECK(gates.entity.maxCoeff() == 1.0);
}

TEST_CASE("config validation") {
  TrainConfig tc;
  tc.alpha = 1.5;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc.alpha = 0.5;
  tc.learning_rate = 0.0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}
