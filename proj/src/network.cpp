#include "kcln/network.hpp"

#include <fstream>
#include <random>

#include <json.hpp>

namespace kcln {

using nlohmann::json;

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

void NetworkConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("n_layers must be >= 1");
  if (hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
  if (!(z > 0.0)) throw std::invalid_argument("z must be positive");
  if (input_dim < 1) throw std::invalid_argument("input_dim must be >= 1");
  if (n_labels < 2) throw std::invalid_argument("n_labels must be >= 2");
  if (n_relations < 0) throw std::invalid_argument("n_relations must be >= 0");
}

Gates unit_gates(int n_entities, int n_relations) {
  Gates g;
  g.entity = Eigen::VectorXd::Ones(n_entities);
  g.context = Eigen::MatrixXd::Ones(n_entities, n_relations);
  return g;
}

Gates compute_gates(const std::vector<std::uint8_t>& entity_flags,
                    const MaskMatrix& context_flags, const Eigen::VectorXd& advice_grad,
                    double alpha) {
  const auto n = static_cast<Eigen::Index>(entity_flags.size());
  if (advice_grad.size() != n || context_flags.rows() != n)
    throw std::invalid_argument("compute_gates: size mismatch");
  Gates g;
  g.entity.resize(n);
  g.context.resize(n, context_flags.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    g.entity[i] = std::exp(alpha * advice_grad[i] * entity_flags[i]);
    for (Eigen::Index r = 0; r < context_flags.cols(); ++r)
      g.context(i, r) = std::exp(alpha * advice_grad[i] * context_flags(i, r));
  }
  return g;
}

NetworkParams init_params(const NetworkConfig& cfg, InitScheme scheme, std::uint64_t seed) {
  cfg.validate();
  NetworkParams p;
  p.layers.resize(n_layer_slots(cfg));
  std::mt19937_64 rng(seed);
  auto fill = [&](Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
    m.resize(rows, cols);
    if (scheme == InitScheme::zeros) {
      m.setZero();
      return;
    }
    const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-s, s);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  };
  for (int slot = 0; slot < n_layer_slots(cfg); ++slot) {
    const int prev = slot == 0 ? cfg.input_dim : cfg.hidden_dim;
    auto& lw = p.layers[slot];
    fill(lw.w, cfg.hidden_dim, prev);
    lw.v.resize(cfg.n_relations);
    for (int r = 0; r < cfg.n_relations; ++r) fill(lw.v[r], cfg.hidden_dim, prev);
    lw.b = Eigen::VectorXd::Zero(cfg.hidden_dim);
  }
  fill(p.w_out, cfg.n_labels, cfg.hidden_dim);
  p.b_out = Eigen::VectorXd::Zero(cfg.n_labels);
  return p;
}

Eigen::VectorXd context(const KnowledgeGraph& g, const Eigen::MatrixXd& h_prev,
                        EntityId i, int r) {
  const auto& nb = neighbors(g, i, r);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(h_prev.cols());
  if (nb.empty()) return c;
  for (EntityId j : nb) c += h_prev.row(j).transpose();
  c /= static_cast<double>(nb.size());
  return c;
}

Eigen::MatrixXd gated_hidden_layer(const NetworkConfig& cfg, const NetworkParams& params,
                                   const KnowledgeGraph& g, const Eigen::MatrixXd& h_prev,
                                   int t, const Gates& gates) {
  if (t < 1 || t > cfg.n_layers) throw std::out_of_range("layer index out of range");
  net::check_gates(gates);
  Eigen::MatrixXd a =
      net::layer_preactivation<double>(cfg, params.layers[layer_slot(cfg, t)], g, h_prev, gates);
  net::apply_activation<double>(cfg.activation, a);
  if (!a.allFinite())
    throw std::runtime_error("non-finite activations at hidden layer " + std::to_string(t));
  return a;
}

Eigen::MatrixXd hidden_layer(const NetworkConfig& cfg, const NetworkParams& params,
                             const KnowledgeGraph& g, const Eigen::MatrixXd& h_prev, int t) {
  return gated_hidden_layer(cfg, params, g, h_prev, t,
                            unit_gates(g.n_entities, cfg.n_relations));
}

ForwardTrace forward(const NetworkConfig& cfg, const NetworkParams& params,
                     const KnowledgeGraph& g, const Eigen::MatrixXd& features,
                     const Gates* gates) {
  if (features.rows() != g.n_entities || features.cols() != cfg.input_dim)
    throw std::invalid_argument("forward: features shape mismatch");
  if (gates) return net::forward_pass<double>(cfg, params, g, features, *gates);
  return net::forward_pass<double>(cfg, params, g, features,
                                   unit_gates(g.n_entities, cfg.n_relations));
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  Eigen::MatrixXd m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != m.size())
    throw std::runtime_error("checkpoint matrix size mismatch");
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index jj = 0; jj < m.cols(); ++jj) m(i, jj) = data[k++].get<double>();
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json data = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) data.push_back(v[i]);
  return data;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

json config_to_json(const NetworkConfig& cfg) {
  return json{{"n_layers", cfg.n_layers},
              {"hidden_dim", cfg.hidden_dim},
              {"activation", to_string(cfg.activation)},
              {"share_parameters", cfg.share_parameters},
              {"z", cfg.z},
              {"input_dim", cfg.input_dim},
              {"n_labels", cfg.n_labels},
              {"n_relations", cfg.n_relations}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.activation = activation_from_string(j.at("activation").get<std::string>());
  cfg.share_parameters = j.at("share_parameters").get<bool>();
  cfg.z = j.at("z").get<double>();
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.n_labels = j.at("n_labels").get<int>();
  cfg.n_relations = j.at("n_relations").get<int>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkConfig& cfg,
                     const NetworkParams& params, const Gates* gates) {
  json j;
  j["magic"] = "KCLN1";
  j["config"] = config_to_json(cfg);
  json layers = json::array();
  for (const auto& lw : params.layers) {
    json v = json::array();
    for (const auto& m : lw.v) v.push_back(matrix_to_json(m));
    layers.push_back(
        json{{"w", matrix_to_json(lw.w)}, {"v", std::move(v)}, {"b", vector_to_json(lw.b)}});
  }
  j["layers"] = std::move(layers);
  j["w_out"] = matrix_to_json(params.w_out);
  j["b_out"] = vector_to_json(params.b_out);
  if (gates) {
    j["gates"] = json{{"entity", vector_to_json(gates->entity)},
                      {"context", matrix_to_json(gates->context)}};
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump();
  out << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json j = json::parse(in);
  if (j.value("magic", "") != std::string("KCLN1"))
    throw std::runtime_error("not a KCLN1 checkpoint: " + path);
  Checkpoint ck;
  ck.config = config_from_json(j.at("config"));
  for (const auto& lj : j.at("layers")) {
    LayerWeightsT<double> lw;
    lw.w = matrix_from_json(lj.at("w"));
    for (const auto& vj : lj.at("v")) lw.v.push_back(matrix_from_json(vj));
    lw.b = vector_from_json(lj.at("b"));
    ck.params.layers.push_back(std::move(lw));
  }
  ck.params.w_out = matrix_from_json(j.at("w_out"));
  ck.params.b_out = vector_from_json(j.at("b_out"));
  if (j.contains("gates")) {
    Gates gt;
    gt.entity = vector_from_json(j.at("gates").at("entity"));
    gt.context = matrix_from_json(j.at("gates").at("context"));
    ck.gates = std::move(gt);
  }
  return ck;
}

}  // namespace kcln
