// deeppce: data generation, training, prediction, exact inference and
// Monte Carlo validation from the command line.
//
// Variable indices on the command line are 1-based (x_1 .. x_D), matching
// the CSV header. Errors print one line "error: <category>: <message>".

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "deeppce.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace deeppce;

namespace {

constexpr const char* kVersion = "1.0.0";

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, sep);) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidArgument, "bad number '" + text + "' in " + what);
}

int parse_variable(const std::string& text, const std::string& what) {
  const double v = parse_number(text, what);
  if (v != std::floor(v) || v < 1 || v > 1e9) {
    throw Error(ErrorCode::InvalidArgument, "variable index '" + text + "' in " + what + " must be an integer >= 1");
  }
  return static_cast<int>(v) - 1;
}

/// "i=v,j=w" with 1-based indices.
ConditionSpec parse_condition(const std::string& text) {
  ConditionSpec spec;
  for (const auto& item : split_list(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--condition entry '" + item + "' lacks '='");
    const int i = parse_variable(trim(item.substr(0, eq)), "--condition");
    if (!spec.fixed.emplace(i, parse_number(trim(item.substr(eq + 1)), "--condition")).second) {
      throw Error(ErrorCode::InvalidArgument, "--condition fixes x_" + std::to_string(i + 1) + " twice");
    }
  }
  require(!spec.empty(), ErrorCode::InvalidArgument, "--condition is empty");
  return spec;
}

IndexSet parse_set(const std::string& text) {
  std::vector<int> v;
  for (const auto& item : split_list(text, ',')) v.push_back(parse_variable(item, "--set"));
  return IndexSet(std::move(v));
}

std::size_t parse_count(const std::string& text, const std::string& what) {
  const double v = parse_number(text, what);
  if (v < 0 || v != std::floor(v) || v > 1e15) throw Error(ErrorCode::InvalidArgument, what + " must be a count");
  return static_cast<std::size_t>(v);
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json condition_json(const ConditionSpec& spec) {
  json out = json::object();
  for (const auto& [i, v] : spec.fixed) out["x_" + std::to_string(i + 1)] = v;
  return out;
}

json set_json(const IndexSet& set) {
  json out = json::array();
  for (int i : set) out.push_back(i + 1);
  return out;
}

/// Run directory bookkeeping: every file written goes through here and is
/// listed in manifest.json.
class RunDir {
 public:
  RunDir(fs::path dir, std::string command, json echo) : dir_(std::move(dir)), command_(std::move(command)), echo_(std::move(echo)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create run directory '" + dir_.string() + "': " + ec.message());
  }

  std::string path(const std::string& name) {
    files_.push_back(name);
    return (dir_ / name).string();
  }

  void write_json(const std::string& name, const json& j) {
    std::ofstream out(path(name));
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + (dir_ / name).string() + "'");
    out << j.dump(2) << '\n';
  }

  const json& echo() const { return echo_; }

  void finish() {
    json files = json::array();
    for (const auto& name : files_) {
      const std::string bytes = detail::read_file((dir_ / name).string());
      files.push_back({{"name", name}, {"bytes", bytes.size()}, {"crc32", detail::crc32_of(bytes.data(), bytes.size())}});
    }
    json manifest = {{"tool", "deeppce"}, {"version", kVersion}, {"command", command_}, {"config", echo_}, {"files", files}};
    std::ofstream out(dir_ / "manifest.json");
    if (!out) throw Error(ErrorCode::Io, "cannot write manifest in '" + dir_.string() + "'");
    out << manifest.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::string command_;
  json echo_;
  std::vector<std::string> files_;
};

void write_dataset(const Dataset& ds, const std::string& path, const std::string& format) {
  if (format == "csv") {
    save_csv(ds, path);
  } else {
    save_tensor(ds, path);
  }
}

// ---------------------------------------------------------------- gen-data

struct GenOptions {
  std::string problem = "100d";
  std::string n = "10000";
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "csv";
  int d_in = 0;
  int d_out = 0;
};

int run_gen_data(const GenOptions& o) {
  const std::size_t n = parse_count(o.n, "--n");
  require(n >= 1, ErrorCode::InvalidArgument, "--n must be >= 1");
  json echo = {{"problem", o.problem}, {"n", n}, {"seed", o.seed}, {"format", o.format}};
  Dataset ds;
  std::optional<CircuitModel> planted;
  if (o.problem == "100d") {
    ds = gen_100d(n, o.seed);
  } else if (o.problem == "planted") {
    const int d_in = o.d_in > 0 ? o.d_in : 4;
    const int d_out = o.d_out > 0 ? o.d_out : 1;
    PlantedProblem p = gen_planted(n, o.seed, d_in, d_out);
    ds = std::move(p.data);
    planted = std::move(p.model);
    echo["d_in"] = d_in;
    echo["d_out"] = d_out;
  } else if (o.problem == "quadratic-map") {
    const int d_in = o.d_in > 0 ? o.d_in : 64;
    const int d_out = o.d_out > 0 ? o.d_out : 16;
    ds = gen_quadratic_map(n, o.seed, d_in, d_out);
    echo["d_in"] = d_in;
    echo["d_out"] = d_out;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown problem '" + o.problem + "' (100d, planted, quadratic-map)");
  }
  ds.provenance = echo.dump();
  RunDir run(o.out, "gen-data", echo);
  write_dataset(ds, run.path(o.format == "csv" ? "data.csv" : "data.tensor"), o.format);
  if (planted) save(*planted, run.path("planted_model.bin"), echo);
  run.write_json("marginals.json", marginals_to_json(ds.marginals));
  run.finish();
  std::cout << "wrote " << ds.size() << " samples (" << ds.input_dim() << " -> " << ds.output_dim() << ") to "
            << o.out << '\n';
  return 0;
}

// ------------------------------------------------------------------- train

/// Run configuration file (JSON). Unknown keys are rejected.
struct RunConfig {
  int scope_size = 1;
  int max_order = 3;
  int n_nodes = 8;
  bool batch_norm = true;
  std::uint64_t model_seed = 0;
  std::vector<PolyFamily> marginals;  // empty: taken from the data file
  TrainConfig train;
  std::string data;
  std::string val_data;
  double val_fraction = 0.2;
  std::uint64_t split_seed = 0;
  std::string output_dir;
};

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw Error(ErrorCode::InvalidArgument, "config: unknown key '" + where + key + "'");
    }
  }
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  reject_unknown(j, "", {"model", "train", "data", "output_dir", "seed"});
  try {
    if (j.contains("seed")) {
      c.model_seed = j["seed"].get<std::uint64_t>();
      c.train.seed = c.model_seed;
      c.split_seed = c.model_seed;
    }
    if (j.contains("model")) {
      const json& m = j["model"];
      reject_unknown(m, "model.", {"scope_size", "max_order", "n_nodes", "batch_norm", "seed", "marginals"});
      c.scope_size = m.value("scope_size", c.scope_size);
      c.max_order = m.value("max_order", c.max_order);
      c.n_nodes = m.value("n_nodes", c.n_nodes);
      c.batch_norm = m.value("batch_norm", c.batch_norm);
      c.model_seed = m.value("seed", c.model_seed);
      if (m.contains("marginals")) {
        for (const auto& item : m["marginals"]) c.marginals.push_back(parse_marginal(item.get<std::string>()));
      }
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      reject_unknown(t, "train.", {"learning_rate", "batch_size", "max_epochs", "early_stop_patience", "init_base_std",
                                   "init_decay", "init_norm_scale", "init_norm_shift", "n_restarts", "seed", "optimizer",
                                   "standardize_targets"});
      TrainConfig& tc = c.train;
      tc.learning_rate = t.value("learning_rate", tc.learning_rate);
      tc.batch_size = t.value("batch_size", tc.batch_size);
      tc.max_epochs = t.value("max_epochs", tc.max_epochs);
      tc.early_stop_patience = t.value("early_stop_patience", tc.early_stop_patience);
      tc.init_base_std = t.value("init_base_std", tc.init_base_std);
      tc.init_decay = t.value("init_decay", tc.init_decay);
      tc.init_norm_scale = t.value("init_norm_scale", tc.init_norm_scale);
      tc.init_norm_shift = t.value("init_norm_shift", tc.init_norm_shift);
      tc.n_restarts = t.value("n_restarts", tc.n_restarts);
      tc.seed = t.value("seed", tc.seed);
      tc.standardize_targets = t.value("standardize_targets", tc.standardize_targets);
      if (t.contains("optimizer")) tc.optimizer = optimizer_from_string(t["optimizer"].get<std::string>());
    }
    if (j.contains("data")) {
      const json& d = j["data"];
      reject_unknown(d, "data.", {"path", "val_path", "val_fraction", "split_seed"});
      c.data = d.value("path", c.data);
      c.val_data = d.value("val_path", c.val_data);
      c.val_fraction = d.value("val_fraction", c.val_fraction);
      c.split_seed = d.value("split_seed", c.split_seed);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  require(c.val_fraction > 0.0 && c.val_fraction < 1.0, ErrorCode::InvalidArgument,
          "config: data.val_fraction must lie in (0, 1)");
  return c;
}

json echo_run_config(const RunConfig& c) {
  json marginals = json::array();
  for (const auto& m : c.marginals) marginals.push_back(to_json(m));
  return {{"model",
           {{"scope_size", c.scope_size},
            {"max_order", c.max_order},
            {"n_nodes", c.n_nodes},
            {"batch_norm", c.batch_norm},
            {"seed", c.model_seed},
            {"marginals", marginals}}},
          {"train", to_json(c.train)},
          {"data", {{"path", c.data}, {"val_path", c.val_data}, {"val_fraction", c.val_fraction}, {"split_seed", c.split_seed}}},
          {"output_dir", c.output_dir}};
}

struct TrainOptions {
  std::string config;
  std::string data;
  std::string out_model;
  int restarts = 0;
  std::string seed;
};

int run_train(const TrainOptions& o) {
  json raw;
  {
    std::ifstream in(o.config);
    if (!in) throw Error(ErrorCode::Io, "cannot open config '" + o.config + "'");
    try {
      raw = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, "config '" + o.config + "' is not valid JSON: " + e.what());
    }
  }
  RunConfig cfg = parse_run_config(raw);
  if (!o.data.empty()) cfg.data = o.data;
  if (o.restarts > 0) cfg.train.n_restarts = o.restarts;
  if (!o.seed.empty()) {
    const auto s = static_cast<std::uint64_t>(parse_count(o.seed, "--seed"));
    cfg.train.seed = cfg.model_seed = cfg.split_seed = s;
  }
  fs::path model_path = o.out_model;
  if (model_path.empty()) {
    require(!cfg.output_dir.empty(), ErrorCode::InvalidArgument, "train: need --out-model or output_dir in the config");
    model_path = fs::path(cfg.output_dir) / "model.bin";
  }
  if (cfg.output_dir.empty()) cfg.output_dir = model_path.has_parent_path() ? model_path.parent_path().string() : ".";
  require(!cfg.data.empty(), ErrorCode::InvalidArgument, "train: no data file (--data or data.path)");
  require(fs::exists(cfg.data), ErrorCode::Io, "train: data file '" + cfg.data + "' not found");
  require(cfg.val_data.empty() || fs::exists(cfg.val_data), ErrorCode::Io,
          "train: validation file '" + cfg.val_data + "' not found");
  cfg.train.validate();

  if (cfg.marginals.empty()) {
    // CSV files carry no marginals; gen-data leaves them next to the data.
    const fs::path sidecar = fs::path(cfg.data).parent_path() / "marginals.json";
    std::ifstream probe(cfg.data, std::ios::binary);
    std::string magic(std::char_traits<char>::length(kTensorMagic), '\0');
    probe.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (magic != kTensorMagic && fs::exists(sidecar)) {
      std::ifstream in(sidecar);
      try {
        cfg.marginals = marginals_from_json(json::parse(in));
      } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedFile, "'" + sidecar.string() + "': " + e.what());
      }
    }
  }
  Dataset all = load_dataset(cfg.data, cfg.marginals);
  if (!cfg.marginals.empty()) all.marginals = cfg.marginals;
  all.validate();
  Dataset train_set, val_set;
  if (!cfg.val_data.empty()) {
    train_set = std::move(all);
    val_set = load_dataset(cfg.val_data, train_set.marginals);
    val_set.marginals = train_set.marginals;
  } else {
    auto parts = split(all, {1.0 - cfg.val_fraction, cfg.val_fraction}, cfg.split_seed);
    train_set = std::move(parts[0]);
    val_set = std::move(parts[1]);
  }
  require(val_set.input_dim() == train_set.input_dim() && val_set.output_dim() == train_set.output_dim(),
          ErrorCode::DimensionMismatch, "train: validation data shape differs from training data");

  CircuitConfig cc;
  cc.d_in = train_set.input_dim();
  cc.d_out = train_set.output_dim();
  cc.scope_size = cfg.scope_size;
  cc.max_order = cfg.max_order;
  cc.width = cfg.n_nodes;
  cc.seed = cfg.model_seed;
  cc.batch_norm = cfg.batch_norm;
  cc.marginals = train_set.marginals;
  const CircuitModel prototype = build(cc);

  const json echo = echo_run_config(cfg);
  RunDir run(cfg.output_dir, "train", echo);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainReport report = train(prototype, cfg.train, train_set, val_set);
  const double elapsed = seconds_since(t0);

  json metadata = {{"run_config", echo}, {"train_report", to_json(report)}};
  {
    const std::string rel = fs::relative(model_path, cfg.output_dir).string();
    const bool inside = !rel.empty() && rel.rfind("..", 0) != 0;
    save(report.best_model, inside ? run.path(rel) : model_path.string(), metadata);
  }
  json report_json = to_json(report);
  report_json["config"] = echo;
  report_json["seconds"] = elapsed;
  report_json["n_train"] = train_set.size();
  report_json["n_val"] = val_set.size();
  report_json["parameters"] = parameter_count(prototype);
  run.write_json("train_report.json", report_json);
  {
    std::ofstream csv(run.path("restarts.csv"));
    csv << "restart,failed,best_val_mse,best_val_relative_mse,best_epoch,epochs_run\n";
    for (const auto& r : report.restarts) {
      csv << r.index << ',' << (r.failed ? 1 : 0) << ',' << std::setprecision(17) << r.best_val_mse << ','
          << r.best_val_relative_mse << ',' << r.best_epoch << ',' << r.epochs_run << '\n';
    }
  }
  run.finish();
  const auto& best = report.restarts[static_cast<std::size_t>(report.best_restart)];
  std::cout << "best restart " << report.best_restart << " of " << report.restarts.size()
            << ": val relative MSE " << std::setprecision(6) << best.best_val_relative_mse << " (" << elapsed
            << " s)\n";
  return 0;
}

// ----------------------------------------------------------------- predict

struct PredictOptions {
  std::string model;
  std::string data;
  std::string out;
  std::string format = "csv";
};

int run_predict(const PredictOptions& o) {
  const LoadedModel loaded = load_with_metadata(o.model);
  const CircuitModel& model = loaded.model;
  const Dataset ds = load_dataset(o.data, model.config.marginals);
  require(ds.input_dim() == model.input_dim(), ErrorCode::DimensionMismatch,
          "predict: data has " + std::to_string(ds.input_dim()) + " inputs, model expects " +
              std::to_string(model.input_dim()));
  require(ds.output_dim() == model.output_dim(), ErrorCode::DimensionMismatch,
          "predict: data has " + std::to_string(ds.output_dim()) + " targets, model produces " +
              std::to_string(model.output_dim()));
  Dataset pred = ds;
  pred.targets = forward_chunked(model, ds.inputs);
  const double rel = relative_mse(pred.targets, ds.targets);
  const json echo = {{"model", o.model}, {"data", o.data}, {"model_metadata", loaded.metadata}};
  pred.provenance = json{{"predictions_of", o.model}, {"data", o.data}}.dump();
  RunDir run(o.out, "predict", echo);
  write_dataset(pred, run.path(o.format == "csv" ? "predictions.csv" : "predictions.tensor"), o.format);
  run.write_json("predict_report.json",
                 {{"relative_mse", rel}, {"mse", loss_mse(pred.targets, ds.targets)}, {"n", ds.size()}, {"config", echo}});
  run.finish();
  std::cout << "relative_mse " << std::setprecision(10) << rel << '\n';
  return 0;
}

// ----------------------------------------------------------------- moments

CircuitModel load_folded(const std::string& path, json* metadata = nullptr) {
  LoadedModel loaded = load_with_metadata(path);
  if (metadata != nullptr) *metadata = loaded.metadata;
  if (!loaded.model.folded()) fold_batchnorm(loaded.model);
  return std::move(loaded.model);
}

void print_labeled(std::ostream& os, const std::string& name, const Eigen::MatrixXd& m) {
  os << name << " [" << m.rows() << " x " << m.cols() << "]\n";
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << "  y_" << i + 1 << ':';
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << ' ' << m(i, j);
    os << '\n';
  }
}

struct MomentsOptions {
  std::string model;
  std::string query = "mean";
  std::string condition;
  std::string set;
  std::string out;
};

int run_moments(const MomentsOptions& o) {
  const CircuitModel model = load_folded(o.model);
  json echo = {{"model", o.model}, {"query", o.query}};
  auto need_condition = [&]() {
    if (o.condition.empty()) throw Error(ErrorCode::InvalidArgument, "--query " + o.query + " needs --condition");
    ConditionSpec spec = parse_condition(o.condition);
    spec.check_range(model.input_dim());
    echo["condition"] = condition_json(spec);
    return spec;
  };
  auto need_set = [&]() {
    if (o.set.empty()) throw Error(ErrorCode::InvalidArgument, "--query " + o.query + " needs --set");
    IndexSet set = parse_set(o.set);
    set.check_range(model.input_dim());
    echo["set"] = set_json(set);
    return set;
  };
  Eigen::MatrixXd result;
  if (o.query == "mean") {
    result = mean(model);
  } else if (o.query == "cov") {
    result = covariance(model);
  } else if (o.query == "cond-mean") {
    result = conditional_mean(model, need_condition());
  } else if (o.query == "cond-cov") {
    result = conditional_covariance(model, need_condition());
  } else if (o.query == "cov-cond-exp") {
    result = covariance_of_conditional_expectation(model, need_set());
  } else if (o.query == "exp-cond-cov") {
    result = expected_conditional_covariance(model, need_set());
  } else {
    throw Error(ErrorCode::InvalidArgument,
                "unknown query '" + o.query + "' (mean, cov, cond-mean, cond-cov, cov-cond-exp, exp-cond-cov)");
  }
  print_labeled(std::cout, o.query, result);
  if (!o.out.empty()) {
    RunDir run(o.out, "moments", echo);
    run.write_json("moments.json", {{"query", o.query}, {"result", matrix_json(result)}, {"config", echo}});
    run.finish();
  }
  return 0;
}

// ------------------------------------------------------------------- sobol

struct SobolOptions {
  std::string model;
  bool normalize_sum = false;
  std::string out;
  std::string mc_baseline;
  std::uint64_t seed = 0;
};

void write_sobol_csv(const std::string& path, const Eigen::MatrixXd& s, const std::vector<bool>& zero_variance) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << "output";
  for (Eigen::Index i = 0; i < s.cols(); ++i) out << ",x_" << i + 1;
  out << ",zero_variance\n" << std::setprecision(17);
  for (Eigen::Index o = 0; o < s.rows(); ++o) {
    out << "y_" << o + 1;
    for (Eigen::Index i = 0; i < s.cols(); ++i) out << ',' << s(o, i);
    out << ',' << (zero_variance[static_cast<std::size_t>(o)] ? 1 : 0) << '\n';
  }
}

Eigen::MatrixXd normalize_rows(Eigen::MatrixXd s) {
  for (Eigen::Index o = 0; o < s.rows(); ++o) {
    const double total = s.row(o).sum();
    if (total > 0.0) s.row(o) /= total;
  }
  return s;
}

int run_sobol(const SobolOptions& o) {
  const CircuitModel model = load_folded(o.model);
  json echo = {{"model", o.model}, {"normalize_sum", o.normalize_sum}, {"seed", o.seed}};
  const auto t0 = std::chrono::steady_clock::now();
  const SobolIndices exact = sobol_first_order(model);
  const double exact_seconds = seconds_since(t0);
  const Eigen::MatrixXd shown = o.normalize_sum ? normalize_rows(exact.first_order) : exact.first_order;
  json report = {{"analytic_seconds", exact_seconds}, {"normalized_by_sum", o.normalize_sum}};

  RunDir run(o.out, "sobol", echo);
  write_sobol_csv(run.path("sobol.csv"), shown, exact.zero_variance);
  std::cout << "analytic first-order indices in " << std::setprecision(4) << exact_seconds << " s\n";
  if (!o.mc_baseline.empty()) {
    const std::size_t evaluations = parse_count(o.mc_baseline, "--mc-baseline");
    const std::size_t base = evaluations / static_cast<std::size_t>(model.input_dim() + 2);
    require(base >= 2, ErrorCode::InvalidArgument, "--mc-baseline too small for this input dimension");
    echo["mc_baseline"] = evaluations;
    const McSobolResult mc = mc_sobol_on_function(as_function(model), model.config.marginals, base, o.seed);
    const Eigen::MatrixXd mc_shown = o.normalize_sum ? normalize_rows(mc.indices.first_order) : mc.indices.first_order;
    write_sobol_csv(run.path("sobol_mc.csv"), mc_shown, mc.indices.zero_variance);
    const double ratio = mc.seconds / std::max(exact_seconds, 1e-9);
    report["mc_seconds"] = mc.seconds;
    report["mc_base_samples"] = mc.base_samples;
    report["mc_evaluations"] = mc.evaluations;
    report["speedup"] = ratio;
    report["mc_std_error"] = matrix_json(mc.std_error);
    std::cout << "Monte Carlo baseline (" << mc.evaluations << " evaluations) in " << mc.seconds << " s, ratio "
              << ratio << '\n';
  }
  report["config"] = echo;
  report["first_order"] = matrix_json(shown);
  run.write_json("sobol_report.json", report);
  run.finish();
  print_labeled(std::cout, o.normalize_sum ? "first_order_normalized" : "first_order", shown);
  return 0;
}

// ---------------------------------------------------------------- mc-check

struct McCheckOptions {
  std::string model;
  int runs = 30;
  std::vector<std::string> sizes{"1e5"};
  std::string condition;
  std::string set;
  std::uint64_t seed = 0;
  std::string nested = "1000x100";
  std::string out;
};

int run_mc_check(const McCheckOptions& o) {
  require(o.runs >= 2, ErrorCode::InvalidArgument, "--runs must be >= 2 for a t-test");
  const CircuitModel model = load_folded(o.model);
  const int dim = model.input_dim();
  ConditionSpec spec;
  if (o.condition.empty()) {
    const PolyFamily& m = model.config.marginals[0];
    spec.fixed[0] = m.location() + 0.5 * m.scale();
  } else {
    spec = parse_condition(o.condition);
  }
  spec.check_range(dim);
  IndexSet set;
  if (o.set.empty()) {
    std::vector<int> v;
    for (int i = 0; i < (dim + 1) / 2; ++i) v.push_back(i);
    set = IndexSet(std::move(v));
  } else {
    set = parse_set(o.set);
  }
  set.check_range(dim);
  std::vector<std::size_t> sizes;
  for (const auto& s : o.sizes) sizes.push_back(parse_count(s, "--sizes"));
  const auto nested_parts = split_list(o.nested, 'x');
  require(nested_parts.size() == 2, ErrorCode::InvalidArgument, "--nested must look like OUTERxINNER");
  const std::size_t n_outer = parse_count(nested_parts[0], "--nested");
  const std::size_t n_inner = parse_count(nested_parts[1], "--nested");

  json echo = {{"model", o.model}, {"runs", o.runs}, {"sizes", sizes}, {"condition", condition_json(spec)},
               {"set", set_json(set)}, {"seed", o.seed}, {"nested", {n_outer, n_inner}}};
  McConfig mc;
  mc.sample_sizes = sizes;
  mc.n_runs = o.runs;
  mc.seed = o.seed;
  mc.validate();

  const Eigen::VectorXd exact_mean = mean(model);
  const Eigen::VectorXd exact_var = variance(model);
  const Eigen::VectorXd exact_cmean = conditional_mean(model, spec);
  const Eigen::VectorXd exact_cvar = conditional_covariance(model, spec).diagonal();
  const Eigen::VectorXd exact_ecc = expected_conditional_covariance(model, set).diagonal();
  const Eigen::VectorXd exact_cce = covariance_of_conditional_expectation(model, set).diagonal();
  const BatchFunction f = as_function(model);

  RunDir run(o.out, "mc-check", echo);
  std::ofstream csv(run.path("mc_check.csv"));
  csv << "query,samples,output,exact,mc_mean,std_error,t,p_value\n" << std::setprecision(17);
  json rows = json::array();
  double min_p = 1.0;
  auto emit = [&](const std::string& query, std::size_t samples, const McRuns& runs, const Eigen::VectorXd& exact,
                  bool diagonal) {
    for (Eigen::Index i = 0; i < exact.size(); ++i) {
      const auto values = diagonal ? runs.entry(i, i) : runs.entry(i, 0);
      const TTestResult t = one_sample_ttest(values, exact[i]);
      min_p = std::min(min_p, t.p_value);
      csv << query << ',' << samples << ",y_" << i + 1 << ',' << exact[i] << ',' << t.sample_mean << ','
          << t.std_error << ',' << t.t << ',' << t.p_value << '\n';
      rows.push_back({{"query", query}, {"samples", samples}, {"output", i + 1}, {"exact", exact[i]},
                      {"mc_mean", t.sample_mean}, {"std_error", t.std_error}, {"t", t.t}, {"p_value", t.p_value}});
    }
  };
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const std::uint64_t seed = derive_seed(o.seed, s);
    const McMomentRuns plain = mc_moments(f, model.config.marginals, sizes[s], o.runs, seed);
    emit("mean", sizes[s], plain.mean, exact_mean, false);
    emit("var", sizes[s], plain.covariance, exact_var, true);
    const McMomentRuns cond = mc_moments(f, model.config.marginals, sizes[s], o.runs, seed, &spec);
    emit("cond-mean", sizes[s], cond.mean, exact_cmean, false);
    emit("cond-var", sizes[s], cond.covariance, exact_cvar, true);
  }
  const McNestedRuns nested = mc_nested(f, model.config.marginals, set, n_outer, n_inner, o.runs, o.seed);
  emit("exp-cond-var", n_outer * n_inner, nested.expected_conditional_covariance, exact_ecc, true);
  emit("var-cond-exp", n_outer * n_inner, nested.covariance_of_conditional_expectation, exact_cce, true);
  csv.close();
  run.write_json("mc_check.json", {{"rows", rows}, {"min_p_value", min_p}, {"config", echo}});
  run.finish();
  std::cout << "checked " << rows.size() << " estimates; smallest p-value " << std::setprecision(4) << min_p << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep polynomial chaos surrogates with exact moments and Sobol indices", "deeppce"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a benchmark dataset");
  gen_cmd->add_option("--problem", gen.problem, "100d, planted or quadratic-map")->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "Number of samples")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Run directory")->required();
  gen_cmd->add_option("--format", gen.format, "csv or tensor")
      ->check(CLI::IsMember({"csv", "tensor"}))
      ->capture_default_str();
  gen_cmd->add_option("--d-in", gen.d_in, "Input dimension (planted, quadratic-map)");
  gen_cmd->add_option("--d-out", gen.d_out, "Output dimension (planted, quadratic-map)");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a run configuration");
  train_cmd->add_option("--config", tr.config, "JSON run configuration")->required();
  train_cmd->add_option("--data", tr.data, "Training data (overrides data.path)");
  train_cmd->add_option("--out-model", tr.out_model, "Model file (default: <output_dir>/model.bin)");
  train_cmd->add_option("--restarts", tr.restarts, "Number of restarts (overrides train.n_restarts)")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.seed, "Seed for model, split and training");

  PredictOptions pr;
  auto* predict_cmd = app.add_subcommand("predict", "Evaluate a model on a dataset");
  predict_cmd->add_option("--model", pr.model, "Model file")->required();
  predict_cmd->add_option("--data", pr.data, "Dataset with targets")->required();
  predict_cmd->add_option("--out", pr.out, "Run directory")->required();
  predict_cmd->add_option("--format", pr.format, "csv or tensor")
      ->check(CLI::IsMember({"csv", "tensor"}))
      ->capture_default_str();

  MomentsOptions mo;
  auto* moments_cmd = app.add_subcommand("moments", "Exact moments of a model");
  moments_cmd->add_option("--model", mo.model, "Model file")->required();
  moments_cmd->add_option("--query", mo.query, "mean, cov, cond-mean, cond-cov, cov-cond-exp or exp-cond-cov")
      ->capture_default_str();
  moments_cmd->add_option("--condition", mo.condition, "Fixed inputs, e.g. \"1=0.5,3=-1\"");
  moments_cmd->add_option("--set", mo.set, "Index set, e.g. \"1,2,4\"");
  moments_cmd->add_option("--out", mo.out, "Optional run directory");

  SobolOptions so;
  auto* sobol_cmd = app.add_subcommand("sobol", "Exact first-order Sobol indices");
  sobol_cmd->add_option("--model", so.model, "Model file")->required();
  sobol_cmd->add_flag("--normalize-sum", so.normalize_sum, "Rescale each output row to sum to one");
  sobol_cmd->add_option("--out", so.out, "Run directory")->required();
  sobol_cmd->add_option("--mc-baseline", so.mc_baseline,
                        "Also run pick-and-freeze Monte Carlo with this many model evaluations");
  sobol_cmd->add_option("--seed", so.seed, "Seed for the Monte Carlo baseline")->capture_default_str();

  McCheckOptions mc;
  auto* mc_cmd = app.add_subcommand("mc-check", "Compare exact moments with repeated Monte Carlo runs");
  mc_cmd->add_option("--model", mc.model, "Model file")->required();
  mc_cmd->add_option("--runs", mc.runs, "Independent runs per estimate")->capture_default_str();
  mc_cmd->add_option("--sizes", mc.sizes, "Samples per run, one or more")->capture_default_str();
  mc_cmd->add_option("--condition", mc.condition, "Fixed inputs (default: x_1 at location + scale/2)");
  mc_cmd->add_option("--set", mc.set, "Index set for nested estimates (default: first half)");
  mc_cmd->add_option("--nested", mc.nested, "Nested sample counts OUTERxINNER")->capture_default_str();
  mc_cmd->add_option("--seed", mc.seed, "Seed")->capture_default_str();
  mc_cmd->add_option("--out", mc.out, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*predict_cmd) return run_predict(pr);
    if (*moments_cmd) return run_moments(mo);
    if (*sobol_cmd) return run_sobol(so);
    if (*mc_cmd) return run_mc_check(mc);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out-of-memory: allocation failed\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
