// Command-line front end: gen, train, sweep, verify.

#include <CLI11.hpp>

#include <charconv>
#include <iostream>
#include <sstream>

#include "experiment.hpp"

using namespace lmdan;
using namespace lmdan::cli;

namespace {

// Raw flag values; applied over the config file only when given.
struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string method;
  std::string out;
  std::vector<double> rates;
  double alpha = 0.0;
  std::vector<double> alphas;
  double lambda = 0.0;
  std::string seeds;
  std::vector<std::string> methods;
  std::size_t jobs = 1;
  std::size_t epochs = 0;
  std::string source_csv;
  std::string target_csv;
  bool inject_cost_bug = false;
};

struct Options {
  CLI::Option* config = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* method = nullptr;
  CLI::Option* out = nullptr;
  CLI::Option* rates = nullptr;
  CLI::Option* alpha = nullptr;
  CLI::Option* alphas = nullptr;
  CLI::Option* lambda = nullptr;
  CLI::Option* seeds = nullptr;
  CLI::Option* methods = nullptr;
  CLI::Option* jobs = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* source_csv = nullptr;
  CLI::Option* target_csv = nullptr;
};

// Kept as text so that an explicitly empty list reaches validation.
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || end != item.data() + item.size()) {
      throw ConfigError("--seeds: '" + item + "' is not a nonnegative integer");
    }
    out.push_back(v);
  }
  return out;
}

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

Options add_common(CLI::App* app, Flags& f) {
  Options o;
  o.config = app->add_option("--config", f.config, "JSON config file (flat keys; flags override it)");
  o.seed = app->add_option("--seed", f.seed, "top-level seed");
  o.out = app->add_option("--out", f.out, "output directory");
  o.alpha = app->add_option("--alpha", f.alpha, "class-count exponent of the LMDAN weights");
  o.lambda = app->add_option("--lambda", f.lambda, "adversarial trade-off");
  o.epochs = app->add_option("--epochs", f.epochs, "training epochs");
  return o;
}

ExperimentConfig resolve(const Flags& f, const Options& o, const std::string& command) {
  ExperimentConfig cfg = given(o.config) ? load_config(f.config) : ExperimentConfig{};
  if (given(o.seed)) cfg.seed = f.seed;
  if (given(o.out)) cfg.out = f.out;
  if (given(o.lambda)) cfg.train.lambda = f.lambda;
  if (given(o.epochs)) cfg.train.epochs = f.epochs;
  if (given(o.alpha)) {
    cfg.train.alpha = f.alpha;
    if (command == "sweep") cfg.alphas = {f.alpha};
  }
  if (given(o.alphas)) cfg.alphas = f.alphas;
  try {
    if (given(o.method)) cfg.method = train::parse_method(f.method);
    if (given(o.methods)) {
      cfg.methods.clear();
      for (const auto& m : f.methods) cfg.methods.push_back(train::parse_method(m));
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (given(o.rates)) {
    if (command == "sweep") {
      cfg.rates = f.rates;
    } else if (f.rates.size() == 1) {
      cfg.source_rate = cfg.target_rate = f.rates[0];
    } else if (f.rates.size() == 2) {
      cfg.source_rate = f.rates[0];
      cfg.target_rate = f.rates[1];
    } else {
      throw ConfigError("--rates for " + command + " takes one rate or a source,target pair");
    }
  }
  if (given(o.seeds)) cfg.seeds = parse_seed_list(f.seeds);
  if (given(o.jobs)) cfg.jobs = f.jobs;
  if (given(o.source_csv)) cfg.source_csv = f.source_csv;
  if (given(o.target_csv)) cfg.target_csv = f.target_csv;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-matching domain adaptation experiments"};
  app.require_subcommand(1);

  Flags f;
  auto* gen = app.add_subcommand("gen", "generate the drifted blob benchmark as CSV files");
  auto* trn = app.add_subcommand("train", "train one method and write a run report");
  auto* swp = app.add_subcommand("sweep", "accuracy over drift rates, seeds and methods");
  auto* ver = app.add_subcommand("verify", "run the oracle checks");

  Options og = add_common(gen, f);
  og.rates = gen->add_option("--rates", f.rates, "drop rate, or source,target pair")->delimiter(',');

  Options ot = add_common(trn, f);
  ot.method = trn->add_option("--method", f.method, "lmdan, dann or source_only");
  ot.rates = trn->add_option("--rates", f.rates, "drop rate, or source,target pair")->delimiter(',');
  ot.source_csv = trn->add_option("--source", f.source_csv, "source feature CSV");
  ot.target_csv = trn->add_option("--target", f.target_csv, "target feature CSV");

  Options os = add_common(swp, f);
  os.rates = swp->add_option("--rates", f.rates, "drop rates")->delimiter(',');
  os.seeds = swp->add_option("--seeds", f.seeds, "replicate seeds, comma separated");
  os.methods = swp->add_option("--methods", f.methods, "methods")->delimiter(',');
  os.alphas = swp->add_option("--alphas", f.alphas, "alpha grid for lmdan")->delimiter(',');
  os.jobs = swp->add_option("--jobs", f.jobs, "parallel cells");

  Options ov;
  ov.config = ver->add_option("--config", f.config, "JSON config file");
  ov.seed = ver->add_option("--seed", f.seed, "seed for the random instances");
  ov.out = ver->add_option("--out", f.out, "directory for verify.json");
  ver->add_flag("--inject-cost-bug", f.inject_cost_bug, "negative control: corrupt the solver's cost matrix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  ExperimentConfig cfg;
  std::string command;
  try {
    if (gen->parsed()) {
      command = "gen";
      cfg = resolve(f, og, command);
    } else if (trn->parsed()) {
      command = "train";
      cfg = resolve(f, ot, command);
      const bool lambda_given = given(ot.lambda);
      if (cfg.method == train::Method::source_only && lambda_given)
        std::cerr << "warning: --lambda is ignored by source_only\n";
    } else if (swp->parsed()) {
      command = "sweep";
      cfg = resolve(f, os, command);
    } else {
      command = "verify";
      cfg = resolve(f, ov, command);
      if (!given(ov.out)) cfg.out.clear();
    }
    cfg.validate();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (command == "gen") return cmd_gen(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "sweep") return cmd_sweep(cfg);
    return cmd_verify(cfg, f.inject_cost_bug);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
