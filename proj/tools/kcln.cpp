// kcln -- knowledge-augmented column network trainer and experiment runner.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kcln/datagen.hpp"
#include "kcln/experiment.hpp"
#include "kcln/graph.hpp"
#include "kcln/grounding.hpp"
#include "kcln/metrics.hpp"
#include "kcln/network.hpp"
#include "kcln/rules.hpp"
#include "kcln/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

kcln::RuleSet load_rules_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open rules file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return kcln::parse_rules(ss.str());
}

void write_mask_csv(const kcln::MaskMatrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << int(m(i, j));
    }
    out << '\n';
  }
}

struct TrainFlags {
  std::string entities, edges, rules, out_dir = ".";
  double split_fraction = 0.6;
  double sample_fraction = 1.0;
  double threshold = 0.0;
  double z = 0.0;  // 0 = derive from graph
  std::string activation = "relu";
  std::string loss_scaling = "data_tradeoff";
  std::string advice_form = "log_likelihood";
  std::string init = "uniform_scaled";
  std::string precision = "f64";
  bool no_share = false;
  kcln::NetworkConfig net;
  kcln::TrainConfig train;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--entities", f.entities, "entities CSV");
  cmd->add_option("--edges", f.edges, "edges TSV");
  cmd->add_option("--rules", f.rules, "advice rules file");
  cmd->add_option("--out-dir", f.out_dir, "output directory");
  cmd->add_option("--split-fraction", f.split_fraction, "train share of the split");
  cmd->add_option("--sample-fraction", f.sample_fraction, "fraction of train ids kept");
  cmd->add_option("--threshold", f.threshold, "attribute-atom grounding threshold");
  cmd->add_option("--layers", f.net.n_layers, "hidden layers");
  cmd->add_option("--hidden", f.net.hidden_dim, "hidden units per layer");
  cmd->add_option("--activation", f.activation, "relu|tanh|sigmoid|identity");
  cmd->add_flag("--no-share", f.no_share, "per-layer parameters instead of shared");
  cmd->add_option("--z", f.z, "context scaling constant (default: average degree)");
  cmd->add_option("--alpha", f.train.alpha, "advice trade-off in [0,1]");
  cmd->add_option("--lr", f.train.learning_rate, "learning rate");
  cmd->add_option("--momentum", f.train.momentum, "momentum in [0,1)");
  cmd->add_option("--epochs", f.train.max_epochs, "max epochs");
  cmd->add_option("--patience", f.train.patience, "early-stopping patience (0 = off)");
  cmd->add_option("--seed", f.train.seed, "run seed");
  cmd->add_option("--loss-scaling", f.loss_scaling, "data_tradeoff|none");
  cmd->add_option("--advice-form", f.advice_form, "log_likelihood|squared");
  cmd->add_option("--init", f.init, "uniform_scaled|zeros");
  cmd->add_option("--precision", f.precision, "f64|f32");
}

void apply_train_flags(TrainFlags& f) {
  f.net.activation = kcln::activation_from_string(f.activation);
  f.net.share_parameters = !f.no_share;
  f.train.loss_scaling =
      f.loss_scaling == "none" ? kcln::LossScaling::none : kcln::LossScaling::data_tradeoff;
  f.train.advice_loss_form = f.advice_form == "squared" ? kcln::AdviceLossForm::squared
                                                        : kcln::AdviceLossForm::log_likelihood;
  f.train.init =
      f.init == "zeros" ? kcln::InitScheme::zeros : kcln::InitScheme::uniform_scaled;
  f.train.precision = f.precision == "f32" ? kcln::Precision::f32 : kcln::Precision::f64;
}

int cmd_train(TrainFlags& f, const std::string& experiment_path) {
  if (!experiment_path.empty()) {
    auto cfg = kcln::load_experiment_config(experiment_path);
    auto rows = kcln::run_experiment(cfg);
    const auto out = (fs::path(cfg.output_dir) / "results.csv").string();
    kcln::write_results_csv(rows, out);
    std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
    return 0;
  }
  apply_train_flags(f);
  auto g = kcln::load_graph(f.entities, f.edges);
  f.net.input_dim = g.n_features();
  f.net.n_labels = g.n_labels();
  f.net.n_relations = g.n_relations();
  f.net.z = f.z > 0.0 ? f.z : kcln::average_degree(g);

  kcln::RuleSet rules;
  if (!f.rules.empty()) {
    rules = load_rules_file(f.rules);
    for (const auto& w : kcln::validate_against(rules, g))
      std::cerr << "warning: " << w << '\n';
  }
  auto masks = kcln::create_masks(g, rules, f.threshold);

  auto base = kcln::split(g, f.split_fraction, f.train.seed);
  auto sub = kcln::subsample(base, f.sample_fraction, f.train.seed);
  const auto task = g.n_labels() == 2 ? kcln::Task::binary : kcln::Task::multiclass;

  fs::create_directories(f.out_dir);
  std::ofstream curve(fs::path(f.out_dir) / "curve.csv");
  curve << "epoch,split,metric,value\n";
  char buf[64];
  auto put = [&](int epoch, const char* split_name, const std::string& metric, double v) {
    std::snprintf(buf, sizeof buf, "%.12g", v);
    curve << epoch << ',' << split_name << ',' << metric << ',' << buf << '\n';
  };
  kcln::EpochHook hook = [&](int epoch, const Eigen::MatrixXd& probs, double train_loss,
                             double val_loss) {
    put(epoch, "train", "loss", train_loss);
    if (std::isfinite(val_loss)) put(epoch, "validation", "loss", val_loss);
    for (const auto& [name, value] : kcln::evaluate(probs, g, sub, task).metrics)
      put(epoch, "test", name, value);
  };
  auto result = kcln::train(g, sub, masks, f.net, f.train, hook);

  const auto ckpt = (fs::path(f.out_dir) / "model.kcln.json").string();
  kcln::save_checkpoint(ckpt, f.net, result.params, &result.gates);

  auto report = kcln::evaluate(result.probs, g, sub, task);
  json summary{{"epochs_run", result.epochs_run},
               {"best_epoch", result.best_epoch},
               {"final_train_loss", result.curve.back().train_loss},
               {"metrics", report.metrics},
               {"checkpoint", ckpt}};
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_eval(const std::string& entities, const std::string& edges,
             const std::string& checkpoint, double split_fraction, std::uint64_t seed,
             bool no_gates, const std::string& curve_out, int curve_epoch) {
  auto g = kcln::load_graph(entities, edges);
  auto ck = kcln::load_checkpoint(checkpoint);
  ck.config.validate();
  if (ck.config.input_dim != g.n_features() || ck.config.n_labels != g.n_labels() ||
      ck.config.n_relations != g.n_relations())
    throw std::runtime_error("checkpoint does not match the graph shape");

  const kcln::Gates* gates = nullptr;
  if (!no_gates && ck.gates && ck.gates->entity.size() == g.n_entities)
    gates = &*ck.gates;
  auto trace = kcln::forward(ck.config, ck.params, g, g.features, gates);
  auto s = kcln::split(g, split_fraction, seed);
  const auto task = g.n_labels() == 2 ? kcln::Task::binary : kcln::Task::multiclass;
  auto report = kcln::evaluate(trace, g, s, task);

  json conf = json::array();
  for (Eigen::Index i = 0; i < report.confusion.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < report.confusion.cols(); ++j)
      row.push_back(report.confusion(i, j));
    conf.push_back(row);
  }
  json out{{"metrics", report.metrics},
           {"n_evaluated", report.n_evaluated},
           {"confusion", conf},
           {"gated", gates != nullptr}};
  std::cout << out.dump(2) << '\n';

  if (!curve_out.empty()) {
    const bool fresh = !fs::exists(curve_out);
    std::ofstream c(curve_out, std::ios::app);
    if (fresh) c << "epoch,split,metric,value\n";
    char buf[64];
    for (const auto& [name, value] : report.metrics) {
      std::snprintf(buf, sizeof buf, "%.12g", value);
      c << curve_epoch << ",test," << name << ',' << buf << '\n';
    }
  }
  return 0;
}

int cmd_ground(const std::string& entities, const std::string& edges,
               const std::string& rules_path, double threshold, const std::string& out_dir) {
  auto g = kcln::load_graph(entities, edges);
  auto rules = load_rules_file(rules_path);
  for (const auto& w : kcln::validate_against(rules, g))
    std::cerr << "warning: " << w << '\n';
  auto masks = kcln::create_masks(g, rules, threshold);

  fs::create_directories(out_dir);
  write_mask_csv(masks.entity_mask, (fs::path(out_dir) / "mask_entity.csv").string());
  write_mask_csv(masks.context_mask, (fs::path(out_dir) / "mask_context.csv").string());
  write_mask_csv(masks.label_mask, (fs::path(out_dir) / "mask_label.csv").string());

  auto eflags = kcln::entity_gate_flags(masks);
  json flags = json::array();
  for (auto v : eflags) flags.push_back(int(v));
  json preferred = json::array();
  for (int i = 0; i < g.n_entities; ++i) {
    if (masks.preferred_label[i] < 0)
      preferred.push_back(nullptr);
    else
      preferred.push_back(g.label_names[masks.preferred_label[i]]);
  }
  json summary{{"entity_flags", flags}, {"preferred_labels", preferred}};
  std::ofstream out(fs::path(out_dir) / "summary.json");
  out << summary.dump(2) << '\n';
  std::cout << "wrote masks and summary to " << out_dir << '\n';
  return 0;
}

int cmd_gen_data(kcln::GenConfig& gen, int k_rules, const std::string& out_dir) {
  auto bench = kcln::generate(gen);
  if (gen.noise_rate > 0.0)
    bench = kcln::inject_noise(bench, gen.noise_rate, gen.noise_predicate, gen.seed + 1);
  bench.rules_true = kcln::derive_true_advice(bench, gen, k_rules);
  bench.rules_corrupt =
      kcln::corrupt_advice(bench.rules_true, bench.graph.label_names, gen.seed + 2);
  kcln::write_bench(bench, gen, out_dir);
  std::cout << "wrote benchmark to " << out_dir << '\n';
  return 0;
}

int cmd_sweep(kcln::Protocol protocol, const std::string& experiment_path,
              const std::string& out_name) {
  auto cfg = kcln::load_experiment_config(experiment_path);
  cfg.protocol = protocol;
  auto rows = kcln::run_experiment(cfg);
  const auto out = (fs::path(cfg.output_dir) / out_name).string();
  kcln::write_results_csv(rows, out);
  std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge-augmented column networks"};
  app.require_subcommand(1);

  TrainFlags tf;
  std::string experiment_path;
  auto* train_cmd = app.add_subcommand("train", "train one model or run an experiment config");
  train_cmd->add_option("--experiment", experiment_path,
                        "experiment config JSON (overrides direct flags)");
  add_train_flags(train_cmd, tf);

  std::string ev_entities, ev_edges, ev_checkpoint, ev_curve;
  double ev_fraction = 0.6;
  std::uint64_t ev_seed = 0;
  bool ev_no_gates = false;
  int ev_epoch = 0;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a graph");
  eval_cmd->add_option("--entities", ev_entities)->required();
  eval_cmd->add_option("--edges", ev_edges)->required();
  eval_cmd->add_option("--checkpoint", ev_checkpoint)->required();
  eval_cmd->add_option("--split-fraction", ev_fraction, "train share of the split");
  eval_cmd->add_option("--split-seed", ev_seed, "seed the split was drawn with");
  eval_cmd->add_flag("--no-gates", ev_no_gates, "ignore gates stored in the checkpoint");
  eval_cmd->add_option("--append-curve", ev_curve, "learning-curve CSV to append to");
  eval_cmd->add_option("--epoch", ev_epoch, "epoch column for --append-curve");

  std::string gr_entities, gr_edges, gr_rules, gr_out = ".";
  double gr_threshold = 0.0;
  auto* ground_cmd = app.add_subcommand("ground", "dump advice masks for inspection");
  ground_cmd->add_option("--entities", gr_entities)->required();
  ground_cmd->add_option("--edges", gr_edges)->required();
  ground_cmd->add_option("--rules", gr_rules)->required();
  ground_cmd->add_option("--threshold", gr_threshold, "attribute-atom threshold");
  ground_cmd->add_option("--out-dir", gr_out);

  kcln::GenConfig gen;
  int k_rules = 3;
  std::string gen_out = ".";
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic benchmark");
  gen_cmd->add_option("--entities", gen.n_entities);
  gen_cmd->add_option("--features", gen.n_features);
  gen_cmd->add_option("--labels", gen.n_labels);
  gen_cmd->add_option("--relations", gen.n_relations);
  gen_cmd->add_option("--homophily", gen.homophily);
  gen_cmd->add_option("--edges-per-entity", gen.edges_per_entity);
  gen_cmd->add_option("--signal", gen.feature_signal);
  gen_cmd->add_option("--noise-rate", gen.noise_rate);
  gen_cmd->add_option("--noise-predicate", gen.noise_predicate);
  gen_cmd->add_flag("--symmetric", gen.symmetric_edges,
                    "store the reverse of every drawn edge too");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--k-rules", k_rules, "advice rules to derive");
  gen_cmd->add_option("--out-dir", gen_out);

  std::string ss_config, sa_config;
  auto* ss_cmd = app.add_subcommand("sweep-samples", "sample-size sweep from a config");
  ss_cmd->add_option("--config", ss_config, "experiment config JSON")->required();
  auto* sa_cmd = app.add_subcommand("sweep-alpha", "alpha robustness sweep from a config");
  sa_cmd->add_option("--config", sa_config, "experiment config JSON")->required();

  std::string pd_in, pd_out = "aggregate.csv";
  auto* pd_cmd = app.add_subcommand("plot-data", "aggregate results to mean and sd");
  pd_cmd->add_option("--input", pd_in, "results CSV")->required();
  pd_cmd->add_option("--output", pd_out, "aggregate CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (train_cmd->parsed()) {
      if (experiment_path.empty() && (tf.entities.empty() || tf.edges.empty()))
        throw std::invalid_argument("train needs --experiment or --entities/--edges");
      return cmd_train(tf, experiment_path);
    }
    if (eval_cmd->parsed())
      return cmd_eval(ev_entities, ev_edges, ev_checkpoint, ev_fraction, ev_seed,
                      ev_no_gates, ev_curve, ev_epoch);
    if (ground_cmd->parsed())
      return cmd_ground(gr_entities, gr_edges, gr_rules, gr_threshold, gr_out);
    if (gen_cmd->parsed()) return cmd_gen_data(gen, k_rules, gen_out);
    if (ss_cmd->parsed()) return cmd_sweep(kcln::Protocol::sample_sweep, ss_config, "samples.csv");
    if (sa_cmd->parsed()) return cmd_sweep(kcln::Protocol::alpha_sweep, sa_config, "alpha.csv");
    if (pd_cmd->parsed()) {
      auto rows = kcln::read_results_csv(pd_in);
      kcln::write_aggregate_csv(kcln::aggregate_results(rows), pd_out);
      std::cout << "wrote " << pd_out << '\n';
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const kcln::ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
