#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lmdan/nn.hpp"
#include "lmdan/oracle/finite_difference.hpp"

using namespace lmdan;
using namespace lmdan::nn;

namespace {

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Models random_models(std::uint64_t seed, std::size_t in = 3, std::size_t classes = 3) {
  Rng rng(seed);
  Architecture arch;
  arch.encoder_hidden = {6, 5};
  arch.discriminator_hidden = {4};
  return make_models(in, classes, arch, rng);
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.gaussian();
  return m;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("forward hand cases") {
  Mlp zero({3, 2});
  CHECK(forward(zero, Matrix::from_rows({{1, 2, 3}})) == Matrix(1, 2, 0.0));

  Mlp ident({2, 2});
  ident.layers()[0].weight = Matrix::identity(2);
  const Matrix x = Matrix::from_rows({{0.3, -1.7}, {2.0, 5.0}});
  CHECK(forward(ident, x) == x);

  // Hidden h = relu(x W1 + b1), output h W2 + b2, on x = (1, 2).
  Mlp net({2, 2, 1});
  net.layers()[0].weight = Matrix::from_rows({{1, -1}, {2, 1}});
  net.layers()[0].bias = {0.5, -4.0};
  net.layers()[1].weight = Matrix::from_rows({{3}, {7}});
  net.layers()[1].bias = {1.0};
  // pre-activations (5.5, -3) -> relu (5.5, 0) -> 16.5 + 1.
  CHECK(forward(net, Matrix::from_rows({{1, 2}}))(0, 0) == 17.5);

  CHECK_THROWS_AS(forward(net, Matrix(1, 3)), InvalidArgument);
}

TEST_CASE("glorot init bounds and determinism") {
  Rng a(1), b(1);
  Mlp m({8, 4, 2}, a);
  CHECK(m == Mlp({8, 4, 2}, b));
  const double bound = std::sqrt(6.0 / 12.0);
  for (double w : m.layers()[0].weight.data()) CHECK(std::abs(w) <= bound);
  for (double v : m.layers()[0].bias) CHECK(v == 0.0);
  CHECK(m.parameter_count() == 8 * 4 + 4 + 4 * 2 + 2);
}

TEST_CASE("weighted cross-entropy hand cases") {
  const std::vector<int> y{1};
  auto r = weighted_cross_entropy(Matrix::from_rows({{0, 1, 0}}), y, std::vector<double>{1.0});
  CHECK(r.loss == 0.0);

  auto u = weighted_cross_entropy(Matrix(1, 4, 0.25), std::vector<int>{2}, std::vector<double>{1.0});
  CHECK(std::abs(u.loss - 1.386294361119891) < 1e-15);

  const Matrix p = Matrix::from_rows({{0.2, 0.5, 0.3}, {0.6, 0.1, 0.3}});
  const std::vector<int> ys{2, 0};
  auto one = weighted_cross_entropy(p, ys, std::vector<double>{0.7, 1.9});
  auto two = weighted_cross_entropy(p, ys, std::vector<double>{1.4, 3.8});
  CHECK(two.loss == 2.0 * one.loss);
  for (std::size_t k = 0; k < one.grad.size(); ++k) CHECK(two.grad.data()[k] == 2.0 * one.grad.data()[k]);
  // (v_i / n)(p_i - onehot): row 0, class 2 -> 0.7/2 * (0.3 - 1).
  CHECK(std::abs(one.grad(0, 2) - 0.35 * -0.7) < 1e-15);
}

TEST_CASE("cross-entropy clamps vanishing probabilities") {
  auto r = weighted_cross_entropy(Matrix::from_rows({{1.0, 0.0}}), std::vector<int>{1}, std::vector<double>{1.0});
  CHECK(r.clamped);
  CHECK(std::isfinite(r.loss));
  CHECK(std::abs(r.loss + std::log(1e-300)) < 1e-9);
}

TEST_CASE("domain loss hand cases") {
  const std::vector<double> half{0.5}, ones{1.0};
  auto r = weighted_domain_loss(half, half, ones);
  CHECK(std::abs(r.loss + 1.386294361119891) < 1e-15);

  const std::vector<double> ds{0.3, 0.8}, dt{0.4, 0.1, 0.6};
  auto zero = weighted_domain_loss(ds, dt, std::vector<double>{0.0, 0.0});
  const double target_only = (std::log(0.6) + std::log(0.9) + std::log(0.4)) / 3.0;
  CHECK(std::abs(zero.loss - target_only) < 1e-15);

  auto perfect = weighted_domain_loss(std::vector<double>{1.0 - 1e-9}, std::vector<double>{1e-9}, ones);
  CHECK(perfect.loss < 0.0);
  CHECK(perfect.loss > -1e-8);
}

TEST_CASE("domain loss from logits matches the probability form") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> zs(4), zt(3), v(4);
    for (double& z : zs) z = rng.uniform(-5, 5);
    for (double& z : zt) z = rng.uniform(-5, 5);
    for (double& w : v) w = rng.uniform(0, 2);
    std::vector<double> ds, dt;
    for (double z : zs) ds.push_back(sig(z));
    for (double z : zt) dt.push_back(sig(z));
    auto a = weighted_domain_loss(ds, dt, v);
    auto b = weighted_domain_loss_logits(zs, zt, v);
    CHECK(std::abs(a.loss - b.loss) < 1e-12);
    for (std::size_t i = 0; i < 4; ++i) {
      // d/dz of v ln sigmoid(z) / n_s.
      CHECK(std::abs(b.grad_source[i] - v[i] * (1.0 - sig(zs[i])) / 4.0) < 1e-14);
      CHECK(std::abs(a.grad_source[i] - b.grad_source[i]) < 1e-12);
    }
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(b.grad_target[j] + sig(zt[j]) / 3.0) < 1e-14);
  }
}

TEST_CASE("domain loss flags probabilities outside the open interval") {
  auto r = weighted_domain_loss(std::vector<double>{1.0}, std::vector<double>{0.0}, std::vector<double>{1.0});
  CHECK(r.clamped);
  CHECK(std::isfinite(r.loss));
}

TEST_CASE("backward with zero upstream gradient is zero") {
  const Models m = random_models(3);
  Rng rng(4);
  ForwardCache cache;
  const Matrix x = random_matrix(rng, 5, 3);
  const Matrix out = forward(m.encoder, x, &cache);
  const auto b = backward(m.encoder, cache, Matrix(out.rows(), out.cols(), 0.0));
  for (std::size_t i = 0; i < b.grads.parameter_count(); ++i) CHECK(b.grads.parameter(i) == 0.0);
}

TEST_CASE("backward on a linear least-squares toy gives X^T (yhat - y) / n") {
  Rng rng(6);
  Mlp lin({3, 1}, rng);
  const Matrix x = random_matrix(rng, 7, 3);
  const Matrix y = random_matrix(rng, 7, 1);
  ForwardCache cache;
  const Matrix yhat = forward(lin, x, &cache);
  Matrix g(7, 1);
  for (std::size_t i = 0; i < 7; ++i) g(i, 0) = (yhat(i, 0) - y(i, 0)) / 7.0;
  const auto b = backward(lin, cache, g);
  for (std::size_t k = 0; k < 3; ++k) {
    double expected = 0.0;
    for (std::size_t i = 0; i < 7; ++i) expected += x(i, k) * (yhat(i, 0) - y(i, 0));
    CHECK(std::abs(b.grads.layers()[0].weight(k, 0) - expected / 7.0) < 1e-14);
  }
}

TEST_CASE("relu subgradient at zero is zero") {
  Mlp net({1, 1, 1});
  net.layers()[0].weight = Matrix::from_rows({{1.0}});
  net.layers()[1].weight = Matrix::from_rows({{1.0}});
  ForwardCache cache;
  forward(net, Matrix::from_rows({{0.0}}), &cache);
  const auto b = backward(net, cache, Matrix::from_rows({{1.0}}));
  CHECK(b.grads.layers()[0].weight(0, 0) == 0.0);
  CHECK(b.input_grad(0, 0) == 0.0);
}

TEST_CASE("finite differences agree on both loss paths") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    CHECK(oracle::check_classification_path(seed).max_relative_error < 1e-4);
    CHECK(oracle::check_domain_path(seed).max_relative_error < 1e-4);
  }
}

TEST_CASE("relative error helper") {
  CHECK(oracle::relative_error(1.0, 1.0) == 0.0);
  CHECK(oracle::relative_error(2.0, 1.0) == 0.5);
  CHECK(oracle::relative_error(0.0, 0.0) == 0.0);
}

TEST_CASE("gradients are linear in the per-sample weights") {
  const Models m = random_models(7);
  Rng rng(8);
  const Matrix xs = random_matrix(rng, 4, 3), xt = random_matrix(rng, 5, 3);
  const std::vector<int> ys{0, 2, 1, 2};
  const std::vector<double> v{0.5, 1.0, 1.5, 2.0}, v3{1.5, 3.0, 4.5, 6.0};
  const auto a = step_gradients(m, {xs, ys, xt}, v);
  const auto b = step_gradients(m, {xs, ys, xt}, v3);
  CHECK(std::abs(b.report.classification_loss - 3.0 * a.report.classification_loss) < 1e-12);
  for (std::size_t i = 0; i < a.classifier.parameter_count(); ++i)
    CHECK(std::abs(b.classifier.parameter(i) - 3.0 * a.classifier.parameter(i)) < 1e-12);
  for (std::size_t i = 0; i < a.encoder_cls.parameter_count(); ++i)
    CHECK(std::abs(b.encoder_cls.parameter(i) - 3.0 * a.encoder_cls.parameter(i)) < 1e-12);
}

TEST_CASE("schedules at the endpoints and monotone") {
  CHECK(lr_classifier({0.0, 0.01, 1.0}) == 0.01);
  CHECK(lr_discriminator({0.0, 0.01, 1.0}) == 0.0);
  // 0.01 * 11^-0.75, evaluated independently to 17 digits.
  CHECK(std::abs(lr_classifier({1.0, 0.01, 1.0}) - 1.6556002607617019e-3) < 1e-15);
  CHECK(std::abs(lr_discriminator({1.0, 0.01, 1.0}) - 9.99909204262595e-3) < 1e-15);
  double prev_c = INFINITY, prev_d = -INFINITY;
  for (int k = 0; k <= 100; ++k) {
    const Schedule s{k / 100.0, 0.01, 1.0};
    CHECK(lr_classifier(s) <= prev_c);
    CHECK(lr_discriminator(s) >= prev_d);
    prev_c = lr_classifier(s);
    prev_d = lr_discriminator(s);
  }
}

TEST_CASE("one adversarial step on a hand-built 1-D toy") {
  // F: f = a x + c; G: logits (u f, -u f); D: z = w f + e.
  const double a = 0.5, c = 0.1, u = 1.0, w = 2.0, e = -1.0;
  const double xs = 1.0, xt = 2.0, v = 1.3, lambda = 0.7;
  Models m{Mlp({1, 1}), Mlp({1, 2}), Mlp({1, 1})};
  m.encoder.layers()[0].weight = Matrix::from_rows({{a}});
  m.encoder.layers()[0].bias = {c};
  m.classifier.layers()[0].weight = Matrix::from_rows({{u, -u}});
  m.discriminator.layers()[0].weight = Matrix::from_rows({{w}});
  m.discriminator.layers()[0].bias = {e};

  const double fs = a * xs + c, ft = a * xt + c;
  const double p0 = sig(2.0 * u * fs);  // softmax of (u fs, -u fs), class 0
  // L1 = -v ln p0; dL1/dlogit0 = v (p0 - 1), dL1/dlogit1 = v (1 - p0).
  const double g0 = v * (p0 - 1.0), g1 = v * (1.0 - p0);
  const double dfs_l1 = u * g0 - u * g1;
  // L2 = v ln s(zs) + ln(1 - s(zt)).
  const double zs = w * fs + e, zt = w * ft + e;
  const double dzs = v * (1.0 - sig(zs)), dzt = -sig(zt);
  const Schedule sched{0.5, 0.1, lambda};
  const double lr_c = 0.1 * std::pow(6.0, -0.75);
  const double lr_d = 0.1 * (1.0 - std::exp(-5.0)) / (1.0 + std::exp(-5.0));

  const Matrix mxs = Matrix::from_rows({{xs}}), mxt = Matrix::from_rows({{xt}});
  const std::vector<int> ys{0};
  Sgd sgd;
  const auto report = adversarial_step(m, {mxs, ys, mxt}, std::vector<double>{v}, sched, sgd);

  CHECK(std::abs(report.classification_loss + v * std::log(p0)) < 1e-12);
  CHECK(std::abs(report.domain_loss - (v * std::log(sig(zs)) + std::log(1.0 - sig(zt)))) < 1e-12);
  CHECK(std::abs(report.lr_c - lr_c) < 1e-15);
  CHECK(std::abs(report.lr_d - lr_d) < 1e-15);

  const auto& enc = m.encoder.layers()[0];
  CHECK(std::abs(enc.weight(0, 0) - (a - lr_c * (dfs_l1 * xs + lambda * (dzs * w * xs + dzt * w * xt)))) < 1e-10);
  CHECK(std::abs(enc.bias[0] - (c - lr_c * (dfs_l1 + lambda * (dzs * w + dzt * w)))) < 1e-10);
  const auto& cls = m.classifier.layers()[0];
  CHECK(std::abs(cls.weight(0, 0) - (u - lr_c * g0 * fs)) < 1e-10);
  CHECK(std::abs(cls.weight(0, 1) - (-u - lr_c * g1 * fs)) < 1e-10);
  CHECK(std::abs(cls.bias[0] - (0.0 - lr_c * g0)) < 1e-10);
  const auto& dis = m.discriminator.layers()[0];
  CHECK(std::abs(dis.weight(0, 0) - (w + lr_d * (dzs * fs + dzt * ft))) < 1e-10);
  CHECK(std::abs(dis.bias[0] - (e + lr_d * (dzs + dzt))) < 1e-10);
}

TEST_CASE("lambda zero decouples the discriminator from F and G") {
  Models with_d = random_models(11), no_d = random_models(11);
  // A different discriminator must not change F or G when lambda = 0.
  Rng other(99);
  no_d.discriminator = Mlp(no_d.discriminator.sizes(), other);
  Rng rng(12);
  const Matrix xs = random_matrix(rng, 6, 3), xt = random_matrix(rng, 6, 3);
  const std::vector<int> ys{0, 1, 2, 0, 1, 2};
  const std::vector<double> v(6, 1.0);
  Sgd s1, s2;
  for (int k = 0; k < 5; ++k) {
    const Schedule sched{k / 5.0, 0.05, 0.0};
    adversarial_step(with_d, {xs, ys, xt}, v, sched, s1);
    adversarial_step(no_d, {xs, ys, xt}, v, sched, s2);
  }
  CHECK(with_d.encoder == no_d.encoder);
  CHECK(with_d.classifier == no_d.classifier);
  CHECK_FALSE(with_d.discriminator == no_d.discriminator);
}

TEST_CASE("momentum accumulates velocity") {
  Mlp p({1, 1}), g({1, 1});
  g.layers()[0].weight(0, 0) = 1.0;
  Sgd sgd(0.9);
  sgd.apply(p, g, 0.1, 0);
  CHECK(std::abs(p.layers()[0].weight(0, 0) + 0.1) < 1e-15);
  sgd.apply(p, g, 0.1, 0);
  CHECK(std::abs(p.layers()[0].weight(0, 0) + 0.1 + 0.19) < 1e-15);
}

TEST_CASE("non-finite losses abort the step") {
  Models m = random_models(13);
  m.classifier.layers()[0].weight(0, 0) = INFINITY;
  Rng rng(1);
  const Matrix xs = random_matrix(rng, 3, 3), xt = random_matrix(rng, 3, 3);
  const std::vector<int> ys{0, 1, 2};
  Sgd sgd;
  CHECK_THROWS_AS(adversarial_step(m, {xs, ys, xt}, std::vector<double>(3, 1.0), {0.1, 0.01, 1.0}, sgd),
                  NonFiniteLoss);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Models m = random_models(21);
  m.encoder.layers()[0].bias[0] = 0.1 + 0.2;  // not representable in short decimal
  m.classifier.layers()[0].weight(0, 0) = 5e-324;
  const auto path = std::filesystem::temp_directory_path() / "lmdan_checkpoint_test.json";
  save_checkpoint(m, path);
  CHECK(load_checkpoint(path) == m);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
