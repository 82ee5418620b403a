#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lmdan/data.hpp"
#include "lmdan/nn.hpp"
#include "lmdan/ot.hpp"
#include "lmdan/weighting.hpp"

namespace lmdan::train {

enum class Method { lmdan, dann, source_only };
enum class OtMode { exact, sinkhorn };

std::string to_string(Method m);
Method parse_method(const std::string& name);
std::string to_string(OtMode m);
OtMode parse_ot_mode(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch = 64;
  double lr = 0.01;
  double lambda = 1.0;
  double alpha = 2.0;
  OtMode ot_mode = OtMode::exact;
  double sinkhorn_eps = 1e-2;
  std::size_t sinkhorn_max_iter = 100000;
  // Marginal L1 error accepted from the entropic solver.
  double sinkhorn_tol = 1e-6;
  bool normalize_weights = true;
  /// Use whole-dataset source class counts in the first factor of w_k.
  bool dataset_class_counts = false;
  /// Run the weighting pipeline but train with unit weights (test hook).
  bool force_unit_weights = false;
  double weight_floor = weighting::kDefaultFloor;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  nn::Architecture arch;

  void validate() const;
};

struct Evaluation {
  double accuracy = 0.0;
  /// Recall per class; empty optional for classes absent from the dataset.
  std::vector<std::optional<double>> per_class;
  /// Mean over present classes.
  double macro_accuracy = 0.0;
};

/// Argmax of G(F(x)); ties go to the smallest class index.
std::vector<int> predict(const nn::Models& models, const Matrix& features);
Evaluation evaluate(const nn::Models& models, const data::LabeledDataset& ds);
Evaluation evaluate_predictions(const std::vector<int>& predicted, const data::LabeledDataset& ds);

struct StepRecord {
  nn::StepReport losses;
  weighting::ClassWeights weights;  // empty unless the weighting pipeline ran
  double transport_objective = 0.0;
};

/// Stepwise driver of one training run. Target data enter as unlabeled
/// features only.
class Trainer {
 public:
  Trainer(Method method, const data::LabeledDataset& source, const Matrix& target_features,
          const TrainConfig& cfg);

  std::size_t total_steps() const { return total_steps_; }
  std::size_t steps_done() const { return step_; }
  bool finished() const { return step_ >= total_steps_; }

  /// One mini-batch: weights (for lmdan), then one adversarial step.
  StepRecord step();

  const nn::Models& models() const { return models_; }
  /// Per-class weight mass accumulated since the last reset.
  const std::vector<double>& weighted_label_mass() const { return weighted_mass_; }
  void reset_weighted_label_mass();

 private:
  std::vector<double> batch_weights(const Matrix& xs, const std::vector<int>& ys, const Matrix& xt,
                                    StepRecord& record) const;

  Method method_;
  const data::LabeledDataset& source_;
  const Matrix& target_;
  TrainConfig cfg_;
  nn::Models models_;
  nn::Sgd optimizer_;
  data::BalancedBatches batches_;
  std::vector<data::BatchPair> epoch_;
  std::size_t in_epoch_ = 0;
  std::size_t step_ = 0;
  std::size_t total_steps_ = 0;
  std::vector<std::size_t> source_counts_;
  std::vector<double> weighted_mass_;
};

struct EpochRecord {
  double classification_loss = 0.0;  // mean over the epoch's steps
  double domain_loss = 0.0;
  double target_accuracy = 0.0;
  /// Share of per-sample source weight per class over the epoch.
  std::vector<double> weighted_label_distribution;
  /// KL(weighted source label distribution || target label distribution).
  double weighted_label_kl = 0.0;
};

struct RunReport {
  Method method = Method::lmdan;
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  Evaluation target;
  std::map<int, double> final_weights;
  std::vector<double> effective_label_distribution;
  std::vector<double> label_kl_trajectory;
  std::vector<double> target_label_distribution;
  double source_target_label_kl = 0.0;
  bool aborted = false;
  std::string diagnostic;
  nn::Models models;
};

RunReport train(Method method, const data::LabeledDataset& source, const data::LabeledDataset& target,
                const TrainConfig& cfg);
RunReport train_lmdan(const data::LabeledDataset& source, const data::LabeledDataset& target,
                      const TrainConfig& cfg);
RunReport train_dann(const data::LabeledDataset& source, const data::LabeledDataset& target,
                     const TrainConfig& cfg);
/// Ignores cfg.lambda and cfg.alpha.
RunReport train_source_only(const data::LabeledDataset& source, const data::LabeledDataset& target,
                            const TrainConfig& cfg);

struct SweepConfig {
  data::BlobConfig blobs;
  std::vector<double> rates{0.0, 0.25, 0.5, 0.625, 0.75};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<Method> methods{Method::lmdan, Method::dann};
  /// Values for lmdan; a single entry keeps one lmdan arm.
  std::vector<double> alphas{2.0};
  TrainConfig train;
  std::size_t jobs = 1;
};

struct SweepRow {
  std::string method;  // "lmdan", or "lmdan@alpha=<a>" when several alphas are swept
  Method kind = Method::lmdan;
  double alpha = 0.0;
  double rate = 0.0;
  std::uint64_t seed = 0;
  double kl = 0.0;
  double accuracy = 0.0;
  std::vector<std::optional<double>> per_class;
  bool aborted = false;
};

/// Per-replicate seeds for blob generation, source/target drift and training.
struct ReplicateSeeds {
  std::uint64_t blobs;
  std::uint64_t source_drift;
  std::uint64_t target_drift;
  std::uint64_t training;
};
ReplicateSeeds expand_seed(std::uint64_t seed);

/// Drifted blob pair for replicate `seed` under [rate; rate].
std::pair<data::LabeledDataset, data::LabeledDataset> drifted_blobs(const data::BlobConfig& blobs,
                                                                     double rate, std::uint64_t seed);
std::pair<data::LabeledDataset, data::LabeledDataset> drifted_blobs(const data::BlobConfig& blobs,
                                                                     const data::DriftSpec& spec,
                                                                     std::uint64_t seed);

std::vector<SweepRow> drift_sweep(const SweepConfig& cfg);

/// Columns method,rate,seed,kl,accuracy,per_class_0..per_class_{C-1}; recall
/// of a class absent from the target is left empty.
void write_sweep_csv(const std::vector<SweepRow>& rows, std::size_t class_count, std::ostream& out);

}  // namespace lmdan::train
