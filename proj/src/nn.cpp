#include "lmdan/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace lmdan::nn {

Mlp::Mlp(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw InvalidArgument("Mlp: need at least input and output sizes");
  for (std::size_t s : sizes_)
    if (s == 0) throw InvalidArgument("Mlp: zero-width layer");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    layers_.push_back({Matrix(sizes_[l], sizes_[l + 1]), std::vector<double>(sizes_[l + 1], 0.0)});
  }
}

Mlp::Mlp(std::vector<std::size_t> sizes, Rng& rng) : Mlp(std::move(sizes)) {
  for (auto& layer : layers_) {
    const double fan = static_cast<double>(layer.weight.rows() + layer.weight.cols());
    const double limit = std::sqrt(6.0 / fan);
    for (double& w : layer.weight.data()) w = rng.uniform(-limit, limit);
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

double& Mlp::parameter(std::size_t index) {
  for (auto& l : layers_) {
    if (index < l.weight.size()) return l.weight.data()[index];
    index -= l.weight.size();
    if (index < l.bias.size()) return l.bias[index];
    index -= l.bias.size();
  }
  throw InvalidArgument("Mlp::parameter: index out of range");
}

double Mlp::parameter(std::size_t index) const { return const_cast<Mlp&>(*this).parameter(index); }

bool Mlp::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.all_finite()) return false;
    for (double b : l.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

Matrix forward(const Mlp& model, const Matrix& x, ForwardCache* cache) {
  if (x.cols() != model.input_size()) {
    throw InvalidArgument("forward: input has " + std::to_string(x.cols()) + " columns, model expects " +
                          std::to_string(model.input_size()));
  }
  if (cache) {
    cache->pre.clear();
    cache->activations.clear();
    cache->activations.push_back(x);
  }
  Matrix a = x;
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = matmul(a, layers[l].weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layers[l].bias[c];
    }
    const bool hidden = l + 1 < layers.size();
    if (cache) cache->pre.push_back(z);
    if (hidden) {
      for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
    }
    a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

BackwardResult backward(const Mlp& model, const ForwardCache& cache, const Matrix& grad_output) {
  const auto& layers = model.layers();
  if (cache.pre.size() != layers.size() || cache.activations.size() != layers.size() + 1) {
    throw InvalidArgument("backward: cache does not match model depth");
  }
  const Matrix& out = cache.activations.back();
  if (grad_output.rows() != out.rows() || grad_output.cols() != out.cols()) {
    throw InvalidArgument("backward: upstream gradient shape mismatch");
  }
  BackwardResult result{Mlp(model.sizes()), {}};
  Matrix delta = grad_output;  // dLoss/d(pre-activation) of the current layer
  for (std::size_t l = layers.size(); l-- > 0;) {
    const bool hidden = l + 1 < layers.size();
    if (hidden) {
      const Matrix& z = cache.pre[l];
      for (std::size_t k = 0; k < delta.size(); ++k)
        if (!(z.data()[k] > 0.0)) delta.data()[k] = 0.0;
    }
    auto& g = result.grads.layers()[l];
    g.weight = matmul_tn(cache.activations[l], delta);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto row = delta.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) g.bias[c] += row[c];
    }
    delta = matmul_nt(delta, layers[l].weight);
  }
  result.input_grad = std::move(delta);
  return result;
}

LossResult weighted_cross_entropy(const Matrix& probs, std::span<const int> labels,
                                  std::span<const double> weights) {
  const std::size_t n = probs.rows();
  if (labels.size() != n || weights.size() != n) {
    throw InvalidArgument("weighted_cross_entropy: probs, labels and weights lengths differ");
  }
  LossResult r;
  r.grad = Matrix(n, probs.cols());
  if (n == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols()) {
      throw InvalidArgument("weighted_cross_entropy: label out of range");
    }
    double p = probs(i, static_cast<std::size_t>(y));
    if (p < 1e-300) {
      p = 1e-300;
      r.clamped = true;
    }
    r.loss += weights[i] * -std::log(p);
    const double scale = weights[i] * inv_n;
    auto g = r.grad.row(i);
    auto pr = probs.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = scale * pr[c];
    g[static_cast<std::size_t>(y)] -= scale;
  }
  r.loss *= inv_n;
  return r;
}

namespace {

void check_domain_lengths(std::size_t ns, std::size_t nt, std::size_t nv) {
  if (ns != nv) throw InvalidArgument("weighted_domain_loss: source weights length mismatch");
  if (ns == 0 || nt == 0) throw InvalidArgument("weighted_domain_loss: empty domain batch");
}

}  // namespace

DomainLossResult weighted_domain_loss(std::span<const double> d_source,
                                      std::span<const double> d_target,
                                      std::span<const double> v_source) {
  check_domain_lengths(d_source.size(), d_target.size(), v_source.size());
  constexpr double kClamp = 1e-12;
  DomainLossResult r;
  const double inv_s = 1.0 / static_cast<double>(d_source.size());
  const double inv_t = 1.0 / static_cast<double>(d_target.size());
  double src = 0.0;
  for (std::size_t i = 0; i < d_source.size(); ++i) {
    double d = d_source[i];
    if (!(d >= kClamp && d <= 1.0 - kClamp)) {
      d = std::clamp(std::isfinite(d) ? d : 0.5, kClamp, 1.0 - kClamp);
      r.clamped = true;
    }
    src += v_source[i] * std::log(d);
    r.grad_source.push_back(v_source[i] * (1.0 - d) * inv_s);
  }
  double tgt = 0.0;
  for (double d : d_target) {
    if (!(d >= kClamp && d <= 1.0 - kClamp)) {
      d = std::clamp(std::isfinite(d) ? d : 0.5, kClamp, 1.0 - kClamp);
      r.clamped = true;
    }
    tgt += std::log(1.0 - d);
    r.grad_target.push_back(-d * inv_t);
  }
  r.loss = src * inv_s + tgt * inv_t;
  return r;
}

DomainLossResult weighted_domain_loss_logits(std::span<const double> z_source,
                                             std::span<const double> z_target,
                                             std::span<const double> v_source) {
  check_domain_lengths(z_source.size(), z_target.size(), v_source.size());
  DomainLossResult r;
  const double inv_s = 1.0 / static_cast<double>(z_source.size());
  const double inv_t = 1.0 / static_cast<double>(z_target.size());
  double src = 0.0;
  for (std::size_t i = 0; i < z_source.size(); ++i) {
    src += v_source[i] * log_sigmoid(z_source[i]);
    r.grad_source.push_back(v_source[i] * sigmoid(-z_source[i]) * inv_s);
  }
  double tgt = 0.0;
  for (double z : z_target) {
    tgt += log_sigmoid(-z);  // ln(1 - sigmoid(z))
    r.grad_target.push_back(-sigmoid(z) * inv_t);
  }
  r.loss = src * inv_s + tgt * inv_t;
  return r;
}

double lr_classifier(const Schedule& s) {
  return s.base_lr * std::pow(1.0 + 10.0 * s.progress, -0.75);
}

double lr_discriminator(const Schedule& s) {
  const double e = std::exp(-10.0 * s.progress);
  return (1.0 - e) / (1.0 + e) * s.base_lr;
}

Models make_models(std::size_t input_dim, std::size_t class_count, const Architecture& arch,
                   Rng& rng) {
  if (arch.encoder_hidden.empty()) throw InvalidArgument("make_models: encoder needs a layer");
  std::vector<std::size_t> enc{input_dim};
  enc.insert(enc.end(), arch.encoder_hidden.begin(), arch.encoder_hidden.end());
  const std::size_t feature = enc.back();
  std::vector<std::size_t> disc{feature};
  disc.insert(disc.end(), arch.discriminator_hidden.begin(), arch.discriminator_hidden.end());
  disc.push_back(1);
  Models m;
  m.encoder = Mlp(enc, rng);
  m.classifier = Mlp({feature, class_count}, rng);
  m.discriminator = Mlp(disc, rng);
  return m;
}

void Sgd::apply(Mlp& params, const Mlp& grads, double rate, std::size_t slot) {
  if (params.sizes() != grads.sizes()) throw InvalidArgument("Sgd: gradient shape mismatch");
  auto& layers = params.layers();
  const auto& glayers = grads.layers();
  if (momentum_ == 0.0) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& w = layers[l].weight.data();
      const auto& gw = glayers[l].weight.data();
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= rate * gw[k];
      for (std::size_t k = 0; k < layers[l].bias.size(); ++k) layers[l].bias[k] -= rate * glayers[l].bias[k];
    }
    return;
  }
  if (velocity_.size() <= slot) velocity_.resize(slot + 1);
  if (velocity_[slot].sizes() != params.sizes()) velocity_[slot] = Mlp(params.sizes());
  auto& vlayers = velocity_[slot].layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& w = layers[l].weight.data();
    auto& vw = vlayers[l].weight.data();
    const auto& gw = glayers[l].weight.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      vw[k] = momentum_ * vw[k] + gw[k];
      w[k] -= rate * vw[k];
    }
    auto& b = layers[l].bias;
    auto& vb = vlayers[l].bias;
    for (std::size_t k = 0; k < b.size(); ++k) {
      vb[k] = momentum_ * vb[k] + glayers[l].bias[k];
      b[k] -= rate * vb[k];
    }
  }
}

namespace {

Matrix column(std::span<const double> v) {
  return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

void accumulate(Mlp& into, const Mlp& from) {
  for (std::size_t l = 0; l < into.layers().size(); ++l) {
    auto& a = into.layers()[l];
    const auto& b = from.layers()[l];
    for (std::size_t k = 0; k < a.weight.size(); ++k) a.weight.data()[k] += b.weight.data()[k];
    for (std::size_t k = 0; k < a.bias.size(); ++k) a.bias[k] += b.bias[k];
  }
}

Mlp scaled(const Mlp& g, double c) {
  Mlp out = g;
  for (auto& l : out.layers()) {
    for (double& w : l.weight.data()) w *= c;
    for (double& b : l.bias) b *= c;
  }
  return out;
}

}  // namespace

StepGradients step_gradients(const Models& models, const StepBatch& batch,
                             std::span<const double> source_weights) {
  const std::size_t ns = batch.source_x.rows();
  if (batch.source_y.size() != ns || source_weights.size() != ns) {
    throw InvalidArgument("adversarial_step: source batch, labels and weights lengths differ");
  }
  StepGradients out;

  ForwardCache enc_s, enc_t, cls_s, disc_s, disc_t;
  const Matrix hs = forward(models.encoder, batch.source_x, &enc_s);
  const Matrix ht = forward(models.encoder, batch.target_x, &enc_t);

  // L1 through G o F on the source batch.
  const Matrix logits = forward(models.classifier, hs, &cls_s);
  if (!logits.all_finite()) throw NonFiniteLoss("non-finite classifier logits");
  const Matrix probs = softmax_rows(logits);
  auto l1 = weighted_cross_entropy(probs, batch.source_y, source_weights);
  auto g_cls = backward(models.classifier, cls_s, l1.grad);
  out.classifier = std::move(g_cls.grads);
  out.encoder_cls = backward(models.encoder, enc_s, g_cls.input_grad).grads;

  // L2 through D o F on both batches.
  const Matrix zs = forward(models.discriminator, hs, &disc_s);
  const Matrix zt = forward(models.discriminator, ht, &disc_t);
  if (!zs.all_finite() || !zt.all_finite()) throw NonFiniteLoss("non-finite discriminator logits");
  auto l2 = weighted_domain_loss_logits(zs.data(), zt.data(), source_weights);
  auto gd_s = backward(models.discriminator, disc_s, column(l2.grad_source));
  auto gd_t = backward(models.discriminator, disc_t, column(l2.grad_target));
  out.discriminator = std::move(gd_s.grads);
  accumulate(out.discriminator, gd_t.grads);
  out.encoder_domain = backward(models.encoder, enc_s, gd_s.input_grad).grads;
  accumulate(out.encoder_domain, backward(models.encoder, enc_t, gd_t.input_grad).grads);

  out.report.classification_loss = l1.loss;
  out.report.domain_loss = l2.loss;
  out.report.clamped = l1.clamped || l2.clamped;
  return out;
}

StepReport adversarial_step(Models& models, const StepBatch& batch,
                            std::span<const double> source_weights, const Schedule& schedule,
                            Sgd& optimizer) {
  StepGradients g = step_gradients(models, batch, source_weights);
  StepReport report = g.report;
  if (!std::isfinite(report.classification_loss) || !std::isfinite(report.domain_loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at progress " << schedule.progress << " (L1 = " << report.classification_loss
        << ", L2 = " << report.domain_loss << ")";
    throw NonFiniteLoss(msg.str());
  }
  report.lr_c = lr_classifier(schedule);
  report.lr_d = lr_discriminator(schedule);

  // F descends L1 + lambda L2.
  Mlp enc_grad = g.encoder_cls;
  accumulate(enc_grad, scaled(g.encoder_domain, schedule.lambda));
  optimizer.apply(models.encoder, enc_grad, report.lr_c, 0);
  optimizer.apply(models.classifier, g.classifier, report.lr_c, 1);
  // D ascends L2, i.e. descends -L2.
  optimizer.apply(models.discriminator, scaled(g.discriminator, -1.0), report.lr_d, 2);

  if (!models.encoder.all_finite() || !models.classifier.all_finite() ||
      !models.discriminator.all_finite()) {
    throw NonFiniteLoss("non-finite parameters after update");
  }
  return report;
}

namespace {

using nlohmann::json;

json mlp_to_json(const Mlp& m) {
  json layers = json::array();
  for (const auto& l : m.layers()) layers.push_back({{"weight", l.weight.data()}, {"bias", l.bias}});
  return {{"sizes", m.sizes()}, {"layers", layers}};
}

Mlp mlp_from_json(const json& j) {
  Mlp m(j.at("sizes").get<std::vector<std::size_t>>());
  const auto& layers = j.at("layers");
  if (layers.size() != m.layers().size()) throw InvalidArgument("checkpoint: layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto w = layers[l].at("weight").get<std::vector<double>>();
    auto b = layers[l].at("bias").get<std::vector<double>>();
    auto& dst = m.layers()[l];
    if (w.size() != dst.weight.size() || b.size() != dst.bias.size()) {
      throw InvalidArgument("checkpoint: parameter count mismatch in layer " + std::to_string(l));
    }
    dst.weight.data() = std::move(w);
    dst.bias = std::move(b);
  }
  return m;
}

}  // namespace

void save_checkpoint(const Models& models, const std::filesystem::path& path) {
  json j = {{"format", "lmdan-models"},
            {"version", 1},
            {"encoder", mlp_to_json(models.encoder)},
            {"classifier", mlp_to_json(models.classifier)},
            {"discriminator", mlp_to_json(models.discriminator)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump(1) << '\n';
}

Models load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  const json j = json::parse(in);
  if (j.value("format", "") != "lmdan-models" || j.value("version", 0) != 1) {
    throw InvalidArgument("checkpoint: unsupported format in " + path.string());
  }
  return {mlp_from_json(j.at("encoder")), mlp_from_json(j.at("classifier")),
          mlp_from_json(j.at("discriminator"))};
}

}  // namespace lmdan::nn
