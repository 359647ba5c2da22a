#include "kcln/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

namespace kcln {

using nlohmann::json;

Protocol protocol_from_string(const std::string& s) {
  if (s == "epochs") return Protocol::epochs;
  if (s == "sample_sweep") return Protocol::sample_sweep;
  if (s == "alpha_sweep") return Protocol::alpha_sweep;
  throw std::invalid_argument("unknown protocol '" + s + "'");
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::epochs: return "epochs";
    case Protocol::sample_sweep: return "sample_sweep";
    case Protocol::alpha_sweep: return "alpha_sweep";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  train.validate();
  if (entities_path.empty() || edges_path.empty())
    throw std::invalid_argument("entities and edges paths are required");
  if (n_seeds < 1) throw std::invalid_argument("n_seeds must be >= 1");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw std::invalid_argument("split_fraction must be in (0,1)");
  for (double f : sample_fractions)
    if (!(f > 0.0 && f <= 1.0))
      throw std::invalid_argument("sample fractions must be in (0,1]");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("alphas must be in [0,1]");
  if (protocol == Protocol::alpha_sweep && rules_path.empty())
    throw std::invalid_argument("alpha_sweep needs a rules file");
}

namespace {

std::vector<double> default_fractions(Protocol p) {
  if (p == Protocol::epochs) return {0.4};
  return {0.05, 0.1, 0.2, 0.4, 0.6, 0.8};
}

std::vector<double> default_alphas() { return {0.2, 0.4, 0.6, 0.8, 1.0}; }

struct Workspace {
  KnowledgeGraph graph;
  RuleSet rules;
  AdviceMasks masks;        // from the rules file
  AdviceMasks no_advice;    // all-zero
  NetworkConfig net;
  Task task = Task::multiclass;
};

Workspace prepare(const ExperimentConfig& cfg) {
  Workspace ws;
  ws.graph = load_graph(cfg.entities_path, cfg.edges_path);
  if (!cfg.rules_path.empty()) {
    std::ifstream in(cfg.rules_path);
    if (!in) throw std::runtime_error("cannot open rules file: " + cfg.rules_path);
    std::stringstream ss;
    ss << in.rdbuf();
    ws.rules = parse_rules(ss.str());
  }
  ws.masks = create_masks(ws.graph, ws.rules, cfg.ground_threshold);
  ws.no_advice = zero_masks(ws.graph);
  ws.net = cfg.net;
  ws.net.input_dim = ws.graph.n_features();
  ws.net.n_labels = ws.graph.n_labels();
  ws.net.n_relations = ws.graph.n_relations();
  if (cfg.z_from_graph) ws.net.z = average_degree(ws.graph);
  ws.net.validate();
  ws.task = ws.graph.n_labels() == 2 ? Task::binary : Task::multiclass;
  return ws;
}

int thread_budget(size_t n_jobs) {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("KCLN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<unsigned>(v);
  }
  return static_cast<int>(std::min<size_t>(n, n_jobs));
}

// Runs jobs on a small pool; results land in job order so the output never
// depends on scheduling.
template <typename Job>
std::vector<std::vector<ResultRow>> run_pool(const std::vector<Job>& jobs) {
  std::vector<std::vector<ResultRow>> results(jobs.size());
  std::atomic<size_t> next{0};
  std::vector<std::thread> workers;
  std::atomic<bool> failed{false};
  std::string error;
  std::mutex error_mutex;
  const int n_threads = thread_budget(jobs.size());
  for (int w = 0; w < n_threads; ++w) {
    workers.emplace_back([&]() {
      for (;;) {
        const size_t k = next.fetch_add(1);
        if (k >= jobs.size() || failed.load()) return;
        try {
          results[k] = jobs[k]();
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(error_mutex);
          failed.store(true);
          if (error.empty()) error = e.what();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failed.load()) throw std::runtime_error("experiment job failed: " + error);
  return results;
}

void sort_rows(std::vector<ResultRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.protocol, a.model, a.alpha, a.sample_fraction, a.seed, a.epoch,
                    a.metric) < std::tie(b.protocol, b.model, b.alpha, b.sample_fraction,
                                         b.seed, b.epoch, b.metric);
  });
}

void append_metric_rows(std::vector<ResultRow>& rows, const ResultRow& key,
                        const EvalReport& report) {
  for (const auto& [name, value] : report.metrics) {
    ResultRow row = key;
    row.metric = name;
    row.value = value;
    rows.push_back(row);
  }
}

struct RunSpec {
  bool advice = false;
  double alpha = 0.0;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  bool per_epoch = false;
};

std::vector<ResultRow> run_one(const Workspace& ws, const ExperimentConfig& cfg,
                               const RunSpec& spec, const std::string& protocol_name) {
  SplitSpec base = split(ws.graph, cfg.split_fraction, spec.seed);
  SplitSpec sub = subsample(base, spec.fraction, spec.seed);

  TrainConfig tc = cfg.train;
  tc.seed = spec.seed;
  tc.alpha = spec.alpha;
  const AdviceMasks& masks = spec.advice ? ws.masks : ws.no_advice;

  ResultRow key;
  key.protocol = protocol_name;
  key.model = spec.advice ? "kcln" : "vanilla";
  key.alpha = spec.alpha;
  key.sample_fraction = spec.fraction;
  key.seed = spec.seed;

  std::vector<ResultRow> rows;
  EpochHook hook;
  if (spec.per_epoch) {
    hook = [&](int epoch, const Eigen::MatrixXd& probs, double train_loss, double val_loss) {
      ResultRow k = key;
      k.epoch = epoch;
      append_metric_rows(rows, k, evaluate(probs, ws.graph, sub, ws.task));
      k.metric = "train_loss";
      k.value = train_loss;
      rows.push_back(k);
      if (std::isfinite(val_loss)) {
        k.metric = "val_loss";
        k.value = val_loss;
        rows.push_back(k);
      }
    };
  }
  TrainResult result = train(ws.graph, sub, masks, ws.net, tc, hook);
  if (!spec.per_epoch) {
    ResultRow k = key;
    k.epoch = result.epochs_run;
    append_metric_rows(rows, k, evaluate(result.probs, ws.graph, sub, ws.task));
  }
  return rows;
}

std::vector<ResultRow> flatten(std::vector<std::vector<ResultRow>> parts) {
  std::vector<ResultRow> rows;
  for (auto& p : parts) rows.insert(rows.end(), p.begin(), p.end());
  sort_rows(rows);
  return rows;
}

}  // namespace

std::vector<ResultRow> run_epochs(const ExperimentConfig& cfg) {
  cfg.validate();
  Workspace ws = prepare(cfg);
  const auto fractions =
      cfg.sample_fractions.empty() ? default_fractions(Protocol::epochs) : cfg.sample_fractions;
  std::vector<std::function<std::vector<ResultRow>()>> jobs;
  for (double f : fractions) {
    for (int rep = 0; rep < cfg.n_seeds; ++rep) {
      const std::uint64_t seed = cfg.train.seed + rep;
      for (bool advice : {false, true}) {
        RunSpec spec{advice, cfg.train.alpha, f, seed, true};
        jobs.emplace_back([&ws, &cfg, spec]() { return run_one(ws, cfg, spec, "epochs"); });
      }
    }
  }
  return flatten(run_pool(jobs));
}

std::vector<ResultRow> run_sample_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  Workspace ws = prepare(cfg);
  auto fractions = cfg.sample_fractions.empty() ? default_fractions(Protocol::sample_sweep)
                                                : cfg.sample_fractions;
  std::sort(fractions.begin(), fractions.end());
  std::vector<std::function<std::vector<ResultRow>()>> jobs;
  for (double f : fractions) {
    for (int rep = 0; rep < cfg.n_seeds; ++rep) {
      const std::uint64_t seed = cfg.train.seed + rep;
      for (bool advice : {false, true}) {
        RunSpec spec{advice, cfg.train.alpha, f, seed, false};
        jobs.emplace_back(
            [&ws, &cfg, spec]() { return run_one(ws, cfg, spec, "sample_sweep"); });
      }
    }
  }
  return flatten(run_pool(jobs));
}

std::vector<ResultRow> run_alpha_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  Workspace ws = prepare(cfg);
  const auto alphas = cfg.alphas.empty() ? default_alphas() : cfg.alphas;
  const auto fractions = cfg.sample_fractions.empty()
                             ? default_fractions(Protocol::sample_sweep)
                             : cfg.sample_fractions;
  std::vector<std::function<std::vector<ResultRow>()>> jobs;
  for (double f : fractions) {
    for (int rep = 0; rep < cfg.n_seeds; ++rep) {
      const std::uint64_t seed = cfg.train.seed + rep;
      // no-advice baseline at full data weight
      RunSpec vanilla{false, 0.0, f, seed, false};
      jobs.emplace_back(
          [&ws, &cfg, vanilla]() { return run_one(ws, cfg, vanilla, "alpha_sweep"); });
      for (double a : alphas) {
        RunSpec spec{true, a, f, seed, false};
        jobs.emplace_back(
            [&ws, &cfg, spec]() { return run_one(ws, cfg, spec, "alpha_sweep"); });
      }
    }
  }
  return flatten(run_pool(jobs));
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.protocol) {
    case Protocol::epochs: return run_epochs(cfg);
    case Protocol::sample_sweep: return run_sample_sweep(cfg);
    case Protocol::alpha_sweep: return run_alpha_sweep(cfg);
  }
  throw std::logic_error("unknown protocol");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

std::string write_results_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write results: " + path);
  out << "protocol,model,alpha,sample_fraction,seed,epoch,metric,value\n";
  for (const auto& r : rows) {
    out << r.protocol << ',' << r.model << ',' << fmt_double(r.alpha) << ','
        << fmt_double(r.sample_fraction) << ',' << r.seed << ',' << r.epoch << ','
        << r.metric << ',' << fmt_double(r.value) << '\n';
  }
  return path;
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty results file: " + path);
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    ResultRow r;
    std::getline(ss, r.protocol, ',');
    std::getline(ss, r.model, ',');
    std::getline(ss, field, ',');
    r.alpha = std::stod(field);
    std::getline(ss, field, ',');
    r.sample_fraction = std::stod(field);
    std::getline(ss, field, ',');
    r.seed = std::stoull(field);
    std::getline(ss, field, ',');
    r.epoch = std::stoi(field);
    std::getline(ss, r.metric, ',');
    std::getline(ss, field, ',');
    r.value = std::stod(field);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<AggregateRow> aggregate_results(const std::vector<ResultRow>& rows) {
  std::map<std::tuple<std::string, std::string, double, double, int, std::string>,
           std::vector<double>>
      groups;
  for (const auto& r : rows)
    groups[{r.protocol, r.model, r.alpha, r.sample_fraction, r.epoch, r.metric}].push_back(
        r.value);
  std::vector<AggregateRow> out;
  for (const auto& [key, values] : groups) {
    AggregateRow a;
    std::tie(a.protocol, a.model, a.alpha, a.sample_fraction, a.epoch, a.metric) = key;
    a.n = static_cast<int>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    a.mean = sum / a.n;
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.sd = a.n > 1 ? std::sqrt(ss / (a.n - 1)) : 0.0;
    out.push_back(std::move(a));
  }
  return out;
}

void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write aggregate: " + path);
  out << "protocol,model,alpha,sample_fraction,epoch,metric,mean,sd,n\n";
  for (const auto& r : rows) {
    out << r.protocol << ',' << r.model << ',' << fmt_double(r.alpha) << ','
        << fmt_double(r.sample_fraction) << ',' << r.epoch << ',' << r.metric << ','
        << fmt_double(r.mean) << ',' << fmt_double(r.sd) << ',' << r.n << '\n';
  }
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open experiment config: " + path);
  json j = json::parse(in);
  ExperimentConfig cfg;
  cfg.entities_path = j.value("entities", "");
  cfg.edges_path = j.value("edges", "");
  cfg.rules_path = j.value("rules", "");
  cfg.protocol = protocol_from_string(j.value("protocol", "epochs"));
  cfg.sample_fractions = j.value("sample_fractions", std::vector<double>{});
  cfg.alphas = j.value("alphas", std::vector<double>{});
  cfg.n_seeds = j.value("n_seeds", 5);
  cfg.split_fraction = j.value("split_fraction", 0.6);
  cfg.ground_threshold = j.value("ground_threshold", 0.0);
  cfg.output_dir = j.value("output_dir", ".");
  if (j.contains("net")) {
    const auto& n = j["net"];
    cfg.net.n_layers = n.value("n_layers", cfg.net.n_layers);
    cfg.net.hidden_dim = n.value("hidden_dim", cfg.net.hidden_dim);
    if (n.contains("activation"))
      cfg.net.activation = activation_from_string(n["activation"].get<std::string>());
    cfg.net.share_parameters = n.value("share_parameters", cfg.net.share_parameters);
    if (n.contains("z")) {
      cfg.net.z = n["z"].get<double>();
      cfg.z_from_graph = false;
    }
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.alpha = t.value("alpha", cfg.train.alpha);
    if (t.contains("loss_scaling"))
      cfg.train.loss_scaling = t["loss_scaling"].get<std::string>() == "none"
                                   ? LossScaling::none
                                   : LossScaling::data_tradeoff;
    if (t.contains("advice_loss_form"))
      cfg.train.advice_loss_form = t["advice_loss_form"].get<std::string>() == "squared"
                                       ? AdviceLossForm::squared
                                       : AdviceLossForm::log_likelihood;
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.momentum = t.value("momentum", cfg.train.momentum);
    cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
    cfg.train.patience = t.value("patience", cfg.train.patience);
    cfg.train.validation_fraction =
        t.value("validation_fraction", cfg.train.validation_fraction);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    if (t.contains("init"))
      cfg.train.init = t["init"].get<std::string>() == "zeros" ? InitScheme::zeros
                                                               : InitScheme::uniform_scaled;
    if (t.contains("precision"))
      cfg.train.precision =
          t["precision"].get<std::string>() == "f32" ? Precision::f32 : Precision::f64;
  }
  return cfg;
}

}  // namespace kcln
