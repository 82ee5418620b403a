#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lmdan/numerics.hpp"

namespace lmdan::nn {

/// Affine layer y = x W + b, with W stored fan_in x fan_out.
struct Layer {
  Matrix weight;
  std::vector<double> bias;

  bool operator==(const Layer&) const = default;
};

/// Multilayer perceptron: ReLU on hidden layers, identity on the output.
/// The same shape doubles as a gradient or velocity container.
class Mlp {
 public:
  Mlp() = default;
  /// Zero-initialized parameters.
  explicit Mlp(std::vector<std::size_t> sizes);
  /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  Mlp(std::vector<std::size_t> sizes, Rng& rng);

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  std::size_t parameter_count() const;

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// Flat view helpers used by optimizers and finite-difference checks.
  double& parameter(std::size_t index);
  double parameter(std::size_t index) const;

  bool all_finite() const;
  bool operator==(const Mlp&) const = default;

 private:
  std::vector<std::size_t> sizes_;
  std::vector<Layer> layers_;
};

struct ForwardCache {
  std::vector<Matrix> pre;          // pre-activation of each layer
  std::vector<Matrix> activations;  // activations[0] = input, back() = output
};

Matrix forward(const Mlp& model, const Matrix& x, ForwardCache* cache = nullptr);

struct BackwardResult {
  Mlp grads;
  Matrix input_grad;
};

/// Reverse-mode gradients. ReLU'(0) is taken as 0.
BackwardResult backward(const Mlp& model, const ForwardCache& cache, const Matrix& grad_output);

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // w.r.t. logits
  bool clamped = false;
};

/// (1/n) sum_i v_i * -ln p[i][y_i]; gradient (v_i/n)(p_i - onehot(y_i)).
/// Probabilities below 1e-300 are clamped and flagged.
LossResult weighted_cross_entropy(const Matrix& probs, std::span<const int> labels,
                                  std::span<const double> weights);

struct DomainLossResult {
  double loss = 0.0;
  std::vector<double> grad_source;  // w.r.t. source discriminator logits
  std::vector<double> grad_target;
  bool clamped = false;
};

/// mean_s(v_i ln d_i) + mean_t(ln(1 - d_j)) from discriminator probabilities,
/// clamped into [1e-12, 1 - 1e-12].
DomainLossResult weighted_domain_loss(std::span<const double> d_source,
                                      std::span<const double> d_target,
                                      std::span<const double> v_source);

/// Same loss evaluated from logits with log-sigmoid; used in training.
DomainLossResult weighted_domain_loss_logits(std::span<const double> z_source,
                                             std::span<const double> z_target,
                                             std::span<const double> v_source);

struct Schedule {
  double progress = 0.0;  // p in [0, 1]
  double base_lr = 0.01;
  double lambda = 1.0;
};

/// lr (1 + 10p)^-0.75
double lr_classifier(const Schedule& s);
/// lr (1 - e^-10p) / (1 + e^-10p)
double lr_discriminator(const Schedule& s);

struct Models {
  Mlp encoder;
  Mlp classifier;
  Mlp discriminator;

  bool operator==(const Models&) const = default;
};

struct Architecture {
  std::vector<std::size_t> encoder_hidden{64, 32};
  std::vector<std::size_t> discriminator_hidden{16};
};

Models make_models(std::size_t input_dim, std::size_t class_count, const Architecture& arch, Rng& rng);

/// Plain SGD, optionally with heavy-ball momentum.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}

  /// params -= rate * grads (with velocity when momentum > 0).
  void apply(Mlp& params, const Mlp& grads, double rate, std::size_t slot);

 private:
  double momentum_;
  std::vector<Mlp> velocity_;
};

struct StepBatch {
  const Matrix& source_x;
  std::span<const int> source_y;
  const Matrix& target_x;  // target labels never enter a step
};

struct StepReport {
  double classification_loss = 0.0;  // L1
  double domain_loss = 0.0;          // L2
  double lr_c = 0.0;
  double lr_d = 0.0;
  bool clamped = false;
};

/// Gradients of one step, all evaluated at the pre-step parameters.
struct StepGradients {
  Mlp encoder_cls;     // dL1/dF
  Mlp encoder_domain;  // dL2/dF
  Mlp classifier;      // dL1/dG
  Mlp discriminator;   // dL2/dD
  StepReport report;
};

StepGradients step_gradients(const Models& models, const StepBatch& batch,
                             std::span<const double> source_weights);

/// One simultaneous update: D ascends L2 at lr_d(p); G descends L1 and F
/// descends L1 + lambda L2 at lr_c(p). Weights are treated as constants.
/// Throws NonFiniteLoss when either loss is not finite.
StepReport adversarial_step(Models& models, const StepBatch& batch,
                            std::span<const double> source_weights, const Schedule& schedule,
                            Sgd& optimizer);

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// JSON checkpoint: {"format": "lmdan-models", "version": 1, "encoder": {...}, ...}
/// Each network is {"sizes": [...], "layers": [{"weight": [...], "bias": [...]}]}
/// with row-major weights; doubles print in shortest round-trip form.
void save_checkpoint(const Models& models, const std::filesystem::path& path);
Models load_checkpoint(const std::filesystem::path& path);

}  // namespace lmdan::nn
