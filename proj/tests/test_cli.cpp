#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "experiment.hpp"
#include "lmdan/data.hpp"

using namespace lmdan;
using namespace lmdan::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("lmdan_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Run run(const std::string& args) {
  const auto dir = fs::temp_directory_path();
  const auto out = dir / "lmdan_cli_stdout.txt", err = dir / "lmdan_cli_stderr.txt";
  const std::string cmd = std::string(LMDAN_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

fs::path write_json(const fs::path& dir, const json& j) {
  const auto p = dir / "input_config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

// Small and fast settings for command-level tests.
json fast_config() {
  return {{"per_class", 40}, {"epochs", 2}, {"batch", 16}, {"encoder_hidden", {8, 8}}, {"discriminator_hidden", {4}}};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config json round trip keeps every key") {
  ExperimentConfig c;
  c.seed = 9;
  c.method = train::Method::dann;
  c.rates = {0.5};
  c.train.alpha = 1.5;
  c.blobs.shift = {1.0, -1.0};
  c.source_csv = "a.csv";
  const json j = to_json(c);
  CHECK(to_json(config_from_json(j)) == j);
  CHECK(j["source_csv"] == "a.csv");
  CHECK(j["target_csv"].is_null());
}

TEST_CASE("config rejects unknown keys and bad types") {
  CHECK_THROWS_AS(config_from_json(json{{"epoch", 3}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"epochs", "3"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"seed", -1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"method", "jan"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);
  try {
    config_from_json(json{{"learning_rate", 0.1}});
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
  const auto c = config_from_json(json{{"epochs", 7}, {"methods", {"source_only"}}});
  CHECK(c.train.epochs == 7);
  CHECK(c.methods == std::vector<train::Method>{train::Method::source_only});
  CHECK(c.train.batch == train::TrainConfig{}.batch);
}

TEST_CASE("config validation catches bad values before compute") {
  ExperimentConfig c;
  c.rates = {1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.train.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.blobs.shift = {1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(ExperimentConfig{}.validate());
}

TEST_CASE("gen writes four csv files and a manifest whose KL matches the files") {
  const auto dir = scratch("gen");
  const Run r = run("gen --seed 3 --out " + dir.string());
  REQUIRE(r.status == 0);
  for (const char* f : {"source_full.csv", "target_full.csv", "source.csv", "target.csv", "manifest.json", "config.json"})
    CHECK(fs::exists(dir / f));
  const json m = json::parse(slurp(dir / "manifest.json"));
  const auto s = data::load_feature_csv(dir / "source.csv", data::Domain::source, 4);
  const auto t = data::load_feature_csv(dir / "target.csv", data::Domain::target, 4);
  CHECK(m["label_kl"]["post_drift"].get<double>() == data::label_kl(s, t, data::default_smoothing(s, t)));
  const auto sf = data::load_feature_csv(dir / "source_full.csv", data::Domain::source, 4);
  const auto tf = data::load_feature_csv(dir / "target_full.csv", data::Domain::target, 4);
  CHECK(m["label_kl"]["pre_drift"].get<double>() == data::label_kl(sf, tf, 0.0));
  CHECK(m["seeds"]["replicate"] == 3);
  CHECK(m["config"]["seed"] == 3);
  CHECK(s.class_counts() == std::vector<std::size_t>{125, 125, 500, 500});
}

TEST_CASE("gen at rate zero keeps the same rows") {
  const auto dir = scratch("gen0");
  REQUIRE(run("gen --rates 0 --out " + dir.string()).status == 0);
  auto rows = [&](const char* f) {
    std::istringstream in(slurp(dir / f));
    std::multiset<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.insert(line);
    return lines;
  };
  CHECK(rows("source_full.csv") == rows("source.csv"));
  CHECK(rows("target_full.csv") == rows("target.csv"));
}

TEST_CASE("gen is byte-identical across runs") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  REQUIRE(run("gen --seed 5 --out " + a.string()).status == 0);
  REQUIRE(run("gen --seed 5 --out " + b.string()).status == 0);
  for (const char* f : {"source_full.csv", "target_full.csv", "source.csv", "target.csv"})
    CHECK(slurp(a / f) == slurp(b / f));
}

TEST_CASE("train on generated files writes a full report") {
  const auto dir = scratch("train");
  REQUIRE(run("gen --out " + (dir / "data").string()).status == 0);
  const auto cfg = write_json(dir, fast_config());
  const Run r = run("train --config " + cfg.string() + " --method lmdan --source " + (dir / "data/source.csv").string() +
                    " --target " + (dir / "data/target.csv").string() + " --out " + (dir / "run").string());
  REQUIRE(r.status == 0);
  CHECK(r.out.find("target accuracy") != std::string::npos);
  const json rep = json::parse(slurp(dir / "run/report.json"));
  for (const char* key : {"method", "config", "target", "final_weights", "effective_label_distribution",
                          "label_kl_trajectory", "epochs", "target_label_distribution"})
    CHECK(rep.contains(key));
  CHECK(rep["epochs"].size() == 2);
  CHECK(rep["target"]["per_class"].size() == 4);
  CHECK_FALSE(rep["final_weights"].empty());
  CHECK(rep["config"]["epochs"] == 2);
  CHECK(fs::exists(dir / "run/models.json"));
}

TEST_CASE("source-only warns that lambda is ignored") {
  const auto dir = scratch("so");
  const auto cfg = write_json(dir, fast_config());
  const Run r = run("train --config " + cfg.string() + " --method source_only --lambda 0.5 --out " + dir.string());
  CHECK(r.status == 0);
  CHECK(r.err.find("ignored") != std::string::npos);
}

TEST_CASE("missing inputs and bad usage exit with status 2") {
  const auto dir = scratch("missing");
  const Run missing = run("train --source /nonexistent/src.csv --target /nonexistent/tgt.csv --out " + dir.string());
  CHECK(missing.status == 2);
  CHECK(missing.err.find("/nonexistent/src.csv") != std::string::npos);

  const Run no_config = run("train --config /nonexistent/cfg.json");
  CHECK(no_config.status == 2);
  CHECK(no_config.err.find("/nonexistent/cfg.json") != std::string::npos);

  const auto bad = write_json(dir, json{{"epochz", 1}});
  const Run unknown = run("train --config " + bad.string());
  CHECK(unknown.status == 2);
  CHECK(unknown.err.find("epochz") != std::string::npos);

  CHECK(run("train --method jan").status == 2);
  CHECK(run("frobnicate").status == 2);
  CHECK(run("train --bogus-flag").status == 2);
  CHECK(run("sweep --seeds \"\" --out " + dir.string()).status == 2);
}

TEST_CASE("sweep writes one row per cell") {
  const auto dir = scratch("sweep");
  const auto cfg = write_json(dir, fast_config());
  const Run r = run("sweep --config " + cfg.string() + " --rates 0.75 --seeds 0,1,2,3,4 --methods lmdan,dann --out " +
                    dir.string());
  REQUIRE(r.status == 0);
  std::istringstream in(slurp(dir / "sweep.csv"));
  std::string header;
  std::getline(in, header);
  CHECK(header == "method,rate,seed,kl,accuracy,per_class_0,per_class_1,per_class_2,per_class_3");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 10);
}

TEST_CASE("alpha sweep emits the alpha grid") {
  const auto dir = scratch("alpha");
  const auto cfg = write_json(dir, fast_config());
  REQUIRE(run("sweep --config " + cfg.string() + " --rates 0.75 --seeds 0,1 --methods lmdan --alphas 0,1,2,4 --out " +
              dir.string())
              .status == 0);
  const std::string csv = slurp(dir / "sweep.csv");
  for (const char* label : {"lmdan@alpha=0,", "lmdan@alpha=1,", "lmdan@alpha=2,", "lmdan@alpha=4,"})
    CHECK(csv.find(label) != std::string::npos);
}

TEST_CASE("train and sweep reruns from the emitted config are byte-identical") {
  const auto dir = scratch("rerun");
  const auto cfg = write_json(dir, fast_config());
  REQUIRE(run("train --config " + cfg.string() + " --seed 4 --out " + (dir / "t1").string()).status == 0);
  REQUIRE(run("train --config " + (dir / "t1/config.json").string() + " --out " + (dir / "t2").string()).status == 0);
  CHECK(slurp(dir / "t1/models.json") == slurp(dir / "t2/models.json"));
  // Reports differ only in the echoed output path.
  json r1 = json::parse(slurp(dir / "t1/report.json")), r2 = json::parse(slurp(dir / "t2/report.json"));
  r1["config"].erase("out");
  r2["config"].erase("out");
  CHECK(r1 == r2);

  REQUIRE(run("sweep --config " + cfg.string() + " --rates 0,0.75 --seeds 1 --out " + (dir / "s1").string()).status == 0);
  REQUIRE(run("sweep --config " + (dir / "s1/config.json").string() + " --jobs 2 --out " + (dir / "s2").string()).status ==
          0);
  CHECK(slurp(dir / "s1/sweep.csv") == slurp(dir / "s2/sweep.csv"));
}

TEST_CASE("verify passes and the injected cost bug fails it") {
  const auto dir = scratch("verify");
  const Run ok = run("verify --out " + dir.string());
  CHECK(ok.status == 0);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  CHECK(ok.out.find("max_error=") != std::string::npos);
  CHECK(fs::exists(dir / "verify.json"));
  const Run bug = run("verify --inject-cost-bug");
  CHECK(bug.status == 1);
  CHECK(bug.out.find("FAIL ot_exact_vs_enumeration") != std::string::npos);
}

}  // TEST_SUITE
