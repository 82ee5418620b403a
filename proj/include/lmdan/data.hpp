#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lmdan/numerics.hpp"

namespace lmdan::data {

enum class Domain { source, target };

/// Malformed input files; the message carries the line number.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LabeledDataset {
  Matrix features;  // n x d
  std::vector<int> labels;
  Domain domain = Domain::source;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  std::vector<std::size_t> class_counts() const;
  LabeledDataset subset(const std::vector<std::size_t>& indices) const;
  /// Throws InvalidArgument on broken invariants.
  void validate() const;

  bool operator==(const LabeledDataset&) const = default;
};

/// Drop protocol "[rate_s; rate_t]": `source_drop_rate` of every class in
/// `source_classes` is dropped from the source domain, `target_drop_rate` of
/// every class in `target_classes` from the target domain.
struct DriftSpec {
  double source_drop_rate = 0.0;
  double target_drop_rate = 0.0;
  std::vector<std::size_t> source_classes;
  std::vector<std::size_t> target_classes;

  /// First ceil(C/2) classes for the source, last floor(C/2) for the target.
  static DriftSpec halves(std::size_t class_count, double source_rate, double target_rate);
  void validate(std::size_t class_count) const;
};

struct BlobConfig {
  std::size_t class_count = 4;
  std::size_t per_class = 500;
  std::size_t dim = 2;
  double radius = 3.0;
  // Heavy class overlap, so that label drift biases unweighted classifiers.
  double stddev = 4.0;
  std::vector<double> shift{2.0, 0.0};
  double rotation_deg = 30.0;

  void validate() const;
};

/// Class k ~ N(mu_k, stddev^2 I), mu_k at angle 2 pi k / C on a circle of
/// `radius` in the first two coordinates. Target means are rotated by
/// `rotation_deg` and then shifted by `shift`.
std::pair<LabeledDataset, LabeledDataset> gen_blob_pair(const BlobConfig& cfg, std::uint64_t seed);

/// Per-class retained count max(1, round-half-up((1 - rate) * n_k)).
std::size_t retained_count(std::size_t n, double drop_rate);

/// Drop samples from the designated classes of `ds` (source or target part of
/// `spec`, by `ds.domain`), then reshuffle the row order.
LabeledDataset apply_drift(const LabeledDataset& ds, const DriftSpec& spec, std::uint64_t seed);

/// KL(p_source || p_target) of smoothed empirical label frequencies, natural log.
double label_kl(const LabeledDataset& source, const LabeledDataset& target, double smoothing);
double label_kl(const std::vector<double>& source_counts, const std::vector<double>& target_counts,
                double smoothing);
/// 0 when every class appears in both domains, 0.5 otherwise.
double default_smoothing(const LabeledDataset& source, const LabeledDataset& target);

struct BatchPair {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

/// Equal-size source/target index batches; each epoch draws fresh
/// permutations of both domains and yields floor(min(n_s, n_t) / batch) pairs.
class BalancedBatches {
 public:
  BalancedBatches(std::size_t n_source, std::size_t n_target, std::size_t batch, std::uint64_t seed);

  std::size_t batches_per_epoch() const { return per_epoch_; }
  std::vector<BatchPair> next_epoch();

 private:
  std::size_t n_source_;
  std::size_t n_target_;
  std::size_t batch_;
  std::size_t per_epoch_;
  Rng rng_;
};

/// Convenience wrapper: `epochs` epochs of batch pairs.
std::vector<BatchPair> balanced_batches(const LabeledDataset& source, const LabeledDataset& target,
                                        std::size_t batch, std::uint64_t seed, std::size_t epochs = 1);

/// CSV with header `label,f0,...,f{d-1}`; LF line endings; doubles written in
/// shortest round-trip form. When `class_count` is absent it is inferred as
/// max(label) + 1.
LabeledDataset load_feature_csv(const std::filesystem::path& path, Domain domain,
                                std::optional<std::size_t> class_count = std::nullopt);
void save_feature_csv(const LabeledDataset& ds, const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace lmdan::data
