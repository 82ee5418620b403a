#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmdan/data.hpp"
#include "lmdan/trainer.hpp"

namespace lmdan::cli {

/// Bad flags, bad config files, missing inputs. Maps to exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation ran but did not succeed (aborted run, failed check).
/// Maps to exit status 1.
class ComputeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Every knob of every command, as one flat record. The JSON form uses the
/// member names below as keys; see README for the table.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  train::Method method = train::Method::lmdan;
  std::filesystem::path out = "out";

  // Inputs for `train`; when both are absent the blob benchmark is generated.
  std::optional<std::filesystem::path> source_csv;
  std::optional<std::filesystem::path> target_csv;

  // Drift applied by `gen` and by `train` on generated data.
  double source_rate = 0.75;
  double target_rate = 0.75;

  // Sweep grid.
  std::vector<double> rates{0.0, 0.25, 0.5, 0.625, 0.75};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<train::Method> methods{train::Method::lmdan, train::Method::dann};
  std::vector<double> alphas{2.0};
  std::size_t jobs = 1;

  data::BlobConfig blobs;
  /// `train.seed` is not a key: it is derived from `seed`.
  train::TrainConfig train;

  /// Rejects anything that would fail later, before any compute starts.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Starts from defaults and overlays the keys in `j`. Unknown keys, wrong
/// types and malformed values raise ConfigError naming the key.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const train::RunReport& report, const ExperimentConfig& cfg);

/// Command bodies. Each writes into cfg.out, including config.json with the
/// resolved config, and returns the process exit status.
int cmd_gen(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_sweep(const ExperimentConfig& cfg);
int cmd_verify(const ExperimentConfig& cfg, bool inject_cost_bug);

/// Writes `text` to `path`, throwing ComputeFailure if the write fails.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace lmdan::cli
