#include "lmdan/oracle/finite_difference.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "lmdan/nn.hpp"

namespace lmdan::oracle {
namespace {

struct Problem {
  nn::Models models;
  Matrix source_x;
  std::vector<int> source_y;
  Matrix target_x;
  std::vector<double> weights;
};

Problem make_problem(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t input = 2 + rng.below(7);
  const std::size_t classes = 2 + rng.below(4);
  nn::Architecture arch;
  arch.encoder_hidden = {3 + rng.below(6), 2 + rng.below(7)};
  arch.discriminator_hidden = {2 + rng.below(7)};
  Problem p{nn::make_models(input, classes, arch, rng), Matrix(), {}, Matrix(), {}};
  // Non-zero biases so the check also covers them meaningfully.
  for (nn::Mlp* net : {&p.models.encoder, &p.models.classifier, &p.models.discriminator})
    for (auto& layer : net->layers())
      for (double& b : layer.bias) b = rng.uniform(-0.3, 0.3);

  const std::size_t ns = 3 + rng.below(5);
  const std::size_t nt = 3 + rng.below(5);
  p.source_x = Matrix(ns, input);
  p.target_x = Matrix(nt, input);
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t k = 0; k < input; ++k) p.source_x(i, k) = rng.gaussian(0.0, 1.0);
  for (std::size_t i = 0; i < nt; ++i)
    for (std::size_t k = 0; k < input; ++k) p.target_x(i, k) = rng.gaussian(0.5, 1.0);
  for (std::size_t i = 0; i < ns; ++i) {
    p.source_y.push_back(static_cast<int>(rng.below(classes)));
    p.weights.push_back(rng.uniform(0.2, 2.0));
  }
  return p;
}

enum class Path { classification, domain };

double loss(const Problem& p, Path path) {
  const nn::StepBatch batch{p.source_x, p.source_y, p.target_x};
  const auto g = nn::step_gradients(p.models, batch, p.weights);
  return path == Path::classification ? g.report.classification_loss : g.report.domain_loss;
}

// Compares one network's analytic gradient with central differences.
void compare(Problem& p, nn::Mlp& net, const nn::Mlp& analytic, Path path, GradientCheck& out) {
  const double h = kFiniteDifferenceStep;
  for (std::size_t i = 0; i < net.parameter_count(); ++i) {
    const double saved = net.parameter(i);
    net.parameter(i) = saved + h;
    const double up = loss(p, path);
    net.parameter(i) = saved - h;
    const double down = loss(p, path);
    net.parameter(i) = saved;
    const double numeric = (up - down) / (2.0 * h);
    out.max_relative_error =
        std::max(out.max_relative_error, relative_error(analytic.parameter(i), numeric));
    ++out.parameters;
  }
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradientCheck check_classification_path(std::uint64_t seed) {
  Problem p = make_problem(seed);
  const auto g = nn::step_gradients(p.models, {p.source_x, p.source_y, p.target_x}, p.weights);
  GradientCheck out;
  compare(p, p.models.encoder, g.encoder_cls, Path::classification, out);
  compare(p, p.models.classifier, g.classifier, Path::classification, out);
  return out;
}

GradientCheck check_domain_path(std::uint64_t seed) {
  Problem p = make_problem(seed);
  const auto g = nn::step_gradients(p.models, {p.source_x, p.source_y, p.target_x}, p.weights);
  GradientCheck out;
  compare(p, p.models.encoder, g.encoder_domain, Path::domain, out);
  compare(p, p.models.discriminator, g.discriminator, Path::domain, out);
  return out;
}

}  // namespace lmdan::oracle
