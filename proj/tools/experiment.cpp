#include "experiment.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "lmdan/oracle/verify_suite.hpp"

namespace lmdan::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void bad_key(const std::string& key, const std::string& expected) {
  throw ConfigError("config key '" + key + "': expected " + expected);
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) bad_key(key, "a number");
  return v.get<double>();
}

std::uint64_t as_u64(const json& v, const std::string& key) {
  // Parsed text yields unsigned numbers; programmatic json may hold signed ones.
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) bad_key(key, "a nonnegative integer");
  return v.get<std::uint64_t>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) bad_key(key, "true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) bad_key(key, "a string");
  return v.get<std::string>();
}

template <class T, class F>
std::vector<T> as_list(const json& v, const std::string& key, F element) {
  if (!v.is_array()) bad_key(key, "a list");
  std::vector<T> out;
  for (const auto& e : v) out.push_back(element(e, key));
  return out;
}

std::vector<std::size_t> as_sizes(const json& v, const std::string& key) {
  return as_list<std::size_t>(v, key, [](const json& e, const std::string& k) {
    return static_cast<std::size_t>(as_u64(e, k));
  });
}

train::Method as_method(const json& v, const std::string& key) {
  try {
    return train::parse_method(as_string(v, key));
  } catch (const InvalidArgument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::optional<fs::path> as_optional_path(const json& v, const std::string& key) {
  if (v.is_null()) return std::nullopt;
  return fs::path(as_string(v, key));
}

using Setter = std::function<void(const json&, ExperimentConfig&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](const json& v, ExperimentConfig& c) { c.seed = as_u64(v, "seed"); }},
      {"method", [](const json& v, ExperimentConfig& c) { c.method = as_method(v, "method"); }},
      {"out", [](const json& v, ExperimentConfig& c) { c.out = as_string(v, "out"); }},
      {"source_csv",
       [](const json& v, ExperimentConfig& c) { c.source_csv = as_optional_path(v, "source_csv"); }},
      {"target_csv",
       [](const json& v, ExperimentConfig& c) { c.target_csv = as_optional_path(v, "target_csv"); }},
      {"source_rate", [](const json& v, ExperimentConfig& c) { c.source_rate = as_double(v, "source_rate"); }},
      {"target_rate", [](const json& v, ExperimentConfig& c) { c.target_rate = as_double(v, "target_rate"); }},
      {"rates", [](const json& v, ExperimentConfig& c) { c.rates = as_list<double>(v, "rates", as_double); }},
      {"seeds", [](const json& v, ExperimentConfig& c) { c.seeds = as_list<std::uint64_t>(v, "seeds", as_u64); }},
      {"methods",
       [](const json& v, ExperimentConfig& c) { c.methods = as_list<train::Method>(v, "methods", as_method); }},
      {"alphas", [](const json& v, ExperimentConfig& c) { c.alphas = as_list<double>(v, "alphas", as_double); }},
      {"jobs", [](const json& v, ExperimentConfig& c) { c.jobs = as_u64(v, "jobs"); }},
      {"class_count", [](const json& v, ExperimentConfig& c) { c.blobs.class_count = as_u64(v, "class_count"); }},
      {"per_class", [](const json& v, ExperimentConfig& c) { c.blobs.per_class = as_u64(v, "per_class"); }},
      {"dim", [](const json& v, ExperimentConfig& c) { c.blobs.dim = as_u64(v, "dim"); }},
      {"radius", [](const json& v, ExperimentConfig& c) { c.blobs.radius = as_double(v, "radius"); }},
      {"stddev", [](const json& v, ExperimentConfig& c) { c.blobs.stddev = as_double(v, "stddev"); }},
      {"shift", [](const json& v, ExperimentConfig& c) { c.blobs.shift = as_list<double>(v, "shift", as_double); }},
      {"rotation_deg",
       [](const json& v, ExperimentConfig& c) { c.blobs.rotation_deg = as_double(v, "rotation_deg"); }},
      {"epochs", [](const json& v, ExperimentConfig& c) { c.train.epochs = as_u64(v, "epochs"); }},
      {"batch", [](const json& v, ExperimentConfig& c) { c.train.batch = as_u64(v, "batch"); }},
      {"lr", [](const json& v, ExperimentConfig& c) { c.train.lr = as_double(v, "lr"); }},
      {"lambda", [](const json& v, ExperimentConfig& c) { c.train.lambda = as_double(v, "lambda"); }},
      {"alpha", [](const json& v, ExperimentConfig& c) { c.train.alpha = as_double(v, "alpha"); }},
      {"momentum", [](const json& v, ExperimentConfig& c) { c.train.momentum = as_double(v, "momentum"); }},
      {"ot_mode",
       [](const json& v, ExperimentConfig& c) {
         try {
           c.train.ot_mode = train::parse_ot_mode(as_string(v, "ot_mode"));
         } catch (const InvalidArgument& e) {
           throw ConfigError(std::string("config key 'ot_mode': ") + e.what());
         }
       }},
      {"sinkhorn_eps", [](const json& v, ExperimentConfig& c) { c.train.sinkhorn_eps = as_double(v, "sinkhorn_eps"); }},
      {"sinkhorn_max_iter",
       [](const json& v, ExperimentConfig& c) { c.train.sinkhorn_max_iter = as_u64(v, "sinkhorn_max_iter"); }},
      {"sinkhorn_tol", [](const json& v, ExperimentConfig& c) { c.train.sinkhorn_tol = as_double(v, "sinkhorn_tol"); }},
      {"normalize_weights",
       [](const json& v, ExperimentConfig& c) { c.train.normalize_weights = as_bool(v, "normalize_weights"); }},
      {"dataset_class_counts",
       [](const json& v, ExperimentConfig& c) { c.train.dataset_class_counts = as_bool(v, "dataset_class_counts"); }},
      {"weight_floor", [](const json& v, ExperimentConfig& c) { c.train.weight_floor = as_double(v, "weight_floor"); }},
      {"encoder_hidden",
       [](const json& v, ExperimentConfig& c) { c.train.arch.encoder_hidden = as_sizes(v, "encoder_hidden"); }},
      {"discriminator_hidden",
       [](const json& v, ExperimentConfig& c) {
         c.train.arch.discriminator_hidden = as_sizes(v, "discriminator_hidden");
       }},
  };
  return table;
}

json path_or_null(const std::optional<fs::path>& p) { return p ? json(p->generic_string()) : json(nullptr); }

json optional_list(const std::vector<std::optional<double>>& values) {
  json out = json::array();
  for (const auto& v : values) out.push_back(v ? json(*v) : json(nullptr));
  return out;
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw ConfigError("cannot create output directory '" + dir.string() + "'" +
                      (ec ? ": " + ec.message() : ""));
}

void write_config(const ExperimentConfig& cfg) {
  write_text(cfg.out / "config.json", to_json(cfg).dump(2) + "\n");
}

data::LabeledDataset load_input(const fs::path& path, data::Domain domain) {
  if (!fs::exists(path)) throw ConfigError("input file not found: " + path.string());
  try {
    return data::load_feature_csv(path, domain);
  } catch (const data::DataError& e) {
    throw ConfigError(e.what());
  }
}

// Source and target for `train`, read from files or generated.
std::pair<data::LabeledDataset, data::LabeledDataset> training_data(const ExperimentConfig& cfg) {
  if (cfg.source_csv.has_value() != cfg.target_csv.has_value())
    throw ConfigError("source_csv and target_csv must be given together");
  if (!cfg.source_csv) {
    const auto spec = data::DriftSpec::halves(cfg.blobs.class_count, cfg.source_rate, cfg.target_rate);
    return train::drifted_blobs(cfg.blobs, spec, cfg.seed);
  }
  auto src = load_input(*cfg.source_csv, data::Domain::source);
  auto tgt = load_input(*cfg.target_csv, data::Domain::target);
  if (src.dim() != tgt.dim())
    throw ConfigError("feature dimension differs: " + std::to_string(src.dim()) + " in " +
                      cfg.source_csv->string() + ", " + std::to_string(tgt.dim()) + " in " +
                      cfg.target_csv->string());
  const std::size_t classes = std::max(src.class_count, tgt.class_count);
  src.class_count = classes;
  tgt.class_count = classes;
  return {std::move(src), std::move(tgt)};
}

json class_counts_json(const data::LabeledDataset& ds) { return json(ds.class_counts()); }

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    blobs.validate();
    train.validate();
    data::DriftSpec::halves(blobs.class_count, source_rate, target_rate).validate(blobs.class_count);
    for (double r : rates)
      if (!(r >= 0.0 && r < 1.0)) throw ConfigError("rates: each drop rate must lie in [0, 1)");
    for (double a : alphas)
      if (!(a >= 0.0)) throw ConfigError("alphas: each alpha must be >= 0");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (train.arch.encoder_hidden.empty()) throw ConfigError("encoder_hidden must not be empty");
    for (std::size_t h : train.arch.encoder_hidden)
      if (h == 0) throw ConfigError("encoder_hidden: layer sizes must be positive");
    for (std::size_t h : train.arch.discriminator_hidden)
      if (h == 0) throw ConfigError("discriminator_hidden: layer sizes must be positive");
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["method"] = train::to_string(c.method);
  j["out"] = c.out.generic_string();
  j["source_csv"] = path_or_null(c.source_csv);
  j["target_csv"] = path_or_null(c.target_csv);
  j["source_rate"] = c.source_rate;
  j["target_rate"] = c.target_rate;
  j["rates"] = c.rates;
  j["seeds"] = c.seeds;
  json methods = json::array();
  for (auto m : c.methods) methods.push_back(train::to_string(m));
  j["methods"] = methods;
  j["alphas"] = c.alphas;
  j["jobs"] = c.jobs;
  j["class_count"] = c.blobs.class_count;
  j["per_class"] = c.blobs.per_class;
  j["dim"] = c.blobs.dim;
  j["radius"] = c.blobs.radius;
  j["stddev"] = c.blobs.stddev;
  j["shift"] = c.blobs.shift;
  j["rotation_deg"] = c.blobs.rotation_deg;
  j["epochs"] = c.train.epochs;
  j["batch"] = c.train.batch;
  j["lr"] = c.train.lr;
  j["lambda"] = c.train.lambda;
  j["alpha"] = c.train.alpha;
  j["momentum"] = c.train.momentum;
  j["ot_mode"] = train::to_string(c.train.ot_mode);
  j["sinkhorn_eps"] = c.train.sinkhorn_eps;
  j["sinkhorn_max_iter"] = c.train.sinkhorn_max_iter;
  j["sinkhorn_tol"] = c.train.sinkhorn_tol;
  j["normalize_weights"] = c.train.normalize_weights;
  j["dataset_class_counts"] = c.train.dataset_class_counts;
  j["weight_floor"] = c.train.weight_floor;
  j["encoder_hidden"] = c.train.arch.encoder_hidden;
  j["discriminator_hidden"] = c.train.arch.discriminator_hidden;
  return j;
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(value, base);
  }
  return base;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json to_json(const train::RunReport& r, const ExperimentConfig& cfg) {
  json j;
  j["format"] = "lmdan-run-report";
  j["version"] = 1;
  j["method"] = train::to_string(r.method);
  j["config"] = to_json(cfg);
  j["training_seed"] = r.config.seed;
  j["aborted"] = r.aborted;
  j["diagnostic"] = r.diagnostic;
  j["target"] = {{"accuracy", r.target.accuracy},
                 {"macro_accuracy", r.target.macro_accuracy},
                 {"per_class", optional_list(r.target.per_class)}};
  json weights = json::object();
  for (const auto& [k, w] : r.final_weights) weights[std::to_string(k)] = w;
  j["final_weights"] = weights;
  j["effective_label_distribution"] = r.effective_label_distribution;
  j["target_label_distribution"] = r.target_label_distribution;
  j["source_target_label_kl"] = r.source_target_label_kl;
  j["label_kl_trajectory"] = r.label_kl_trajectory;
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"classification_loss", e.classification_loss},
                      {"domain_loss", e.domain_loss},
                      {"target_accuracy", e.target_accuracy},
                      {"weighted_label_distribution", e.weighted_label_distribution},
                      {"weighted_label_kl", e.weighted_label_kl}});
  }
  j["epochs"] = epochs;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw ComputeFailure("failed to write " + path.string());
}

int cmd_gen(const ExperimentConfig& cfg) {
  cfg.validate();
  ensure_directory(cfg.out);
  const auto seeds = train::expand_seed(cfg.seed);
  const auto [src_full, tgt_full] = data::gen_blob_pair(cfg.blobs, seeds.blobs);
  const auto spec = data::DriftSpec::halves(cfg.blobs.class_count, cfg.source_rate, cfg.target_rate);
  const auto src = data::apply_drift(src_full, spec, seeds.source_drift);
  const auto tgt = data::apply_drift(tgt_full, spec, seeds.target_drift);

  const std::map<std::string, const data::LabeledDataset*> files = {
      {"source_full.csv", &src_full}, {"target_full.csv", &tgt_full},
      {"source.csv", &src},           {"target.csv", &tgt}};
  for (const auto& [name, ds] : files) data::save_feature_csv(*ds, cfg.out / name);

  const double pre_smoothing = data::default_smoothing(src_full, tgt_full);
  const double post_smoothing = data::default_smoothing(src, tgt);
  json manifest;
  manifest["format"] = "lmdan-gen-manifest";
  manifest["version"] = 1;
  manifest["config"] = to_json(cfg);
  manifest["seeds"] = {{"replicate", cfg.seed},
                       {"blobs", seeds.blobs},
                       {"source_drift", seeds.source_drift},
                       {"target_drift", seeds.target_drift},
                       {"training", seeds.training}};
  manifest["drift"] = {{"source_rate", spec.source_drop_rate},
                       {"target_rate", spec.target_drop_rate},
                       {"source_classes", spec.source_classes},
                       {"target_classes", spec.target_classes}};
  manifest["label_kl"] = {
      {"direction", "KL(source || target)"},
      {"pre_drift", data::label_kl(src_full, tgt_full, pre_smoothing)},
      {"pre_drift_smoothing", pre_smoothing},
      {"post_drift", data::label_kl(src, tgt, post_smoothing)},
      {"post_drift_smoothing", post_smoothing},
  };
  json counts;
  json names = json::object();
  for (const auto& [name, ds] : files) {
    const std::string stem = fs::path(name).stem().string();
    counts[stem] = class_counts_json(*ds);
    names[stem] = name;
  }
  manifest["class_counts"] = counts;
  manifest["files"] = names;
  write_text(cfg.out / "manifest.json", manifest.dump(2) + "\n");
  write_config(cfg);
  std::cout << "wrote " << files.size() << " CSV files and manifest.json to " << cfg.out.string()
            << " (label KL " << fixed(manifest["label_kl"]["post_drift"].get<double>()) << ")\n";
  return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  auto [src, tgt] = training_data(cfg);
  ensure_directory(cfg.out);

  train::TrainConfig tc = cfg.train;
  tc.seed = train::expand_seed(cfg.seed).training;
  const train::RunReport report = train::train(cfg.method, src, tgt, tc);

  write_text(cfg.out / "report.json", to_json(report, cfg).dump(2) + "\n");
  nn::save_checkpoint(report.models, cfg.out / "models.json");
  write_config(cfg);
  if (report.aborted) {
    std::cerr << "error: training aborted: " << report.diagnostic << "\n";
    return kExitFailure;
  }
  std::cout << train::to_string(cfg.method) << ": target accuracy " << fixed(report.target.accuracy)
            << " (macro " << fixed(report.target.macro_accuracy) << ") on " << tgt.size()
            << " samples\n";
  return kExitOk;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.seeds.empty()) throw ConfigError("sweep needs at least one seed");
  if (cfg.rates.empty()) throw ConfigError("sweep needs at least one rate");
  if (cfg.methods.empty()) throw ConfigError("sweep needs at least one method");
  if (cfg.alphas.empty()) throw ConfigError("sweep needs at least one alpha");
  ensure_directory(cfg.out);

  train::SweepConfig sc;
  sc.blobs = cfg.blobs;
  sc.rates = cfg.rates;
  sc.seeds = cfg.seeds;
  sc.methods = cfg.methods;
  sc.alphas = cfg.alphas;
  sc.train = cfg.train;
  sc.jobs = cfg.jobs;
  const auto rows = train::drift_sweep(sc);

  std::ostringstream csv;
  train::write_sweep_csv(rows, cfg.blobs.class_count, csv);
  write_text(cfg.out / "sweep.csv", csv.str());
  write_config(cfg);

  // Seed means per (method, rate), in first-seen order.
  std::vector<std::pair<std::string, double>> keys;
  std::map<std::pair<std::string, double>, std::pair<double, std::size_t>> sums;
  std::size_t aborted = 0;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.method, r.rate);
    if (!sums.count(key)) keys.push_back(key);
    sums[key].first += r.accuracy;
    sums[key].second += 1;
    aborted += r.aborted ? 1 : 0;
  }
  for (const auto& key : keys) {
    const auto& [sum, n] = sums[key];
    std::cout << key.first << " rate " << data::format_double(key.second) << ": mean accuracy "
              << fixed(sum / static_cast<double>(n)) << " over " << n << " seeds\n";
  }
  if (aborted > 0) {
    std::cerr << "error: " << aborted << " sweep cells aborted on non-finite losses\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_verify(const ExperimentConfig& cfg, bool inject_cost_bug) {
  oracle::VerifyOptions options;
  options.seed = cfg.seed;
  options.inject_cost_bug = inject_cost_bug;
  const auto results = oracle::run_verify_suite(options);
  bool ok = true;
  json report = json::array();
  for (const auto& r : results) {
    ok = ok && r.passed;
    std::ostringstream err;
    err.precision(3);
    err << std::scientific << r.max_error;
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  max_error=" << err.str()
              << "  tolerance=" << data::format_double(r.tolerance) << "  cases=" << r.cases
              << "  time=" << fixed(r.seconds, 2) << "s";
    if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
    std::cout << "\n";
    report.push_back({{"name", r.name},
                      {"passed", r.passed},
                      {"max_error", std::isfinite(r.max_error) ? json(r.max_error) : json("inf")},
                      {"tolerance", r.tolerance},
                      {"cases", r.cases},
                      {"detail", r.detail}});
  }
  std::cout << (ok ? "all checks passed" : "verification FAILED") << "\n";
  if (!cfg.out.empty()) {
    ensure_directory(cfg.out);
    write_text(cfg.out / "verify.json", json{{"seed", cfg.seed}, {"checks", report}}.dump(2) + "\n");
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace lmdan::cli
