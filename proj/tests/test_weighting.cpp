#include <doctest.h>

#include <cmath>
#include <numeric>

#include "lmdan/ot.hpp"
#include "lmdan/weighting.hpp"

using namespace lmdan;
using namespace lmdan::weighting;

namespace {

ot::TransportPlan plan_of(const Matrix& gamma) {
  ot::TransportPlan p;
  p.gamma = gamma;
  return p;
}

// Per-row sums (0.2, 0.3, 0.1).
const Matrix kGuide = Matrix::from_rows({{0.1, 0.1}, {0.3, 0.0}, {0.05, 0.05}});

}  // namespace

TEST_SUITE("weighting") {

TEST_CASE("guide matrix hand cases") {
  auto t = guide_matrix(plan_of(Matrix::from_rows({{0.5, 0}, {0, 0.5}})), {Matrix::from_rows({{0, 1}, {1, 0}})});
  CHECK(t.values == Matrix(2, 2, 0.0));
  t = guide_matrix(plan_of(Matrix(2, 2, 0.25)), {Matrix::from_rows({{1, 2}, {3, 4}})});
  CHECK(t.values == Matrix::from_rows({{0.25, 0.5}, {0.75, 1.0}}));
  t = guide_matrix(plan_of(Matrix::from_rows({{0.3, 0.2}, {0.1, 0.4}})), {Matrix(2, 2, 0.0)});
  CHECK(t.values == Matrix(2, 2, 0.0));
  CHECK_THROWS_AS(guide_matrix(plan_of(Matrix(2, 3)), {Matrix(2, 2)}), InvalidArgument);
}

TEST_CASE("class weights, alpha 0") {
  const std::vector<int> labels{0, 0, 1};
  auto w = class_weights({kGuide}, labels, 0.0);
  CHECK(w.at(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(w.at(1) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(w.w.size() == 2);
}

TEST_CASE("class weights, alpha 1 and 2") {
  const std::vector<int> labels{0, 0, 1};
  auto w1 = class_weights({kGuide}, labels, 1.0);
  CHECK(w1.at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w1.at(1) == doctest::Approx(10.0).epsilon(1e-12));
  auto w2 = class_weights({kGuide}, labels, 2.0);
  CHECK(w2.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w2.at(1) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("single class gets one entry equal to inverse total mass at alpha 0") {
  const Matrix t = Matrix::from_rows({{0.1, 0.1}, {0.2, 0.0}, {0.0, 0.25}, {0.125, 0.025}});
  auto w = class_weights({t}, std::vector<int>{3, 3, 3, 3}, 0.0);
  CHECK(w.w.size() == 1);
  CHECK(w.at(3) == doctest::Approx(1.0 / 0.8).epsilon(1e-12));
  CHECK_FALSE(w.contains(0));
  CHECK_THROWS(w.at(0));
}

TEST_CASE("zero-mass classes hit the floor and are reported") {
  const Matrix t = Matrix::from_rows({{0.0, 0.0}, {0.25, 0.25}});
  auto w = class_weights({t}, std::vector<int>{0, 1}, 2.0);
  CHECK(w.at(0) == doctest::Approx(1e8));
  CHECK(w.floored == std::vector<int>{0});
  auto w_custom = class_weights({t}, std::vector<int>{0, 1}, 2.0, 1e-3);
  CHECK(w_custom.at(0) == doctest::Approx(1e3));
}

TEST_CASE("dataset-level counts replace batch counts") {
  const std::vector<int> labels{0, 0, 1};
  const std::vector<std::size_t> counts{10, 5};
  auto w = class_weights({kGuide}, labels, 1.0, kDefaultFloor, counts);
  CHECK(w.at(0) == doctest::Approx(1.0 / (10 * 0.5)).epsilon(1e-12));
  CHECK(w.at(1) == doctest::Approx(1.0 / (5 * 0.1)).epsilon(1e-12));
}

TEST_CASE("class_weights validates inputs") {
  CHECK_THROWS_AS(class_weights({kGuide}, std::vector<int>{0, 1}, 0.0), InvalidArgument);
  CHECK_THROWS_AS(class_weights({kGuide}, std::vector<int>{0, 0, 1}, -1.0), InvalidArgument);
}

TEST_CASE("alpha 0 ignores counts: duplicating a class changes only its mass") {
  // Class 0 rows duplicated: the mass doubles, so w_0 halves; class 1 is untouched.
  const Matrix dup = Matrix::from_rows({{0.1, 0.1}, {0.3, 0.0}, {0.1, 0.1}, {0.3, 0.0}, {0.05, 0.05}});
  auto w = class_weights({dup}, std::vector<int>{0, 0, 0, 0, 1}, 0.0);
  CHECK(w.at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w.at(1) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("normalize_weights hand cases") {
  ClassWeights w;
  w.w = {{0, 2.0}, {1, 6.0}};
  auto n = normalize_weights(w, std::vector<int>{0, 1});
  CHECK(n.at(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(n.at(1) == doctest::Approx(1.5).epsilon(1e-15));

  ClassWeights eq;
  eq.w = {{0, 3.0}, {1, 3.0}, {2, 3.0}};
  auto u = normalize_weights(eq, std::vector<int>{0, 1, 2, 0, 1, 2});
  for (int k = 0; k < 3; ++k) CHECK(u.at(k) == doctest::Approx(1.0).epsilon(1e-15));

  ClassWeights big;
  big.w = {{0, 20.0}, {1, 60.0}};
  auto b = normalize_weights(big, std::vector<int>{0, 1});
  CHECK(b.at(0) == doctest::Approx(0.5).epsilon(1e-15));

  ClassWeights zero;
  zero.w = {{0, 0.0}};
  CHECK_THROWS_AS(normalize_weights(zero, std::vector<int>{0}), InvalidArgument);
}

TEST_CASE("per_sample_weights lookups") {
  ClassWeights w;
  w.w = {{0, 1.5}, {1, 0.5}};
  CHECK(per_sample_weights(w, std::vector<int>{0, 0, 1}) == std::vector<double>{1.5, 1.5, 0.5});
  ClassWeights ones;
  ones.w = {{0, 1.0}, {1, 1.0}};
  CHECK(per_sample_weights(ones, std::vector<int>{1, 0, 1}) == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(per_sample_weights(w, std::vector<int>{}).empty());
  CHECK_THROWS_AS(per_sample_weights(w, std::vector<int>{2}), InvalidArgument);
}

TEST_CASE("matched classes outweigh unmatched ones at alpha 0") {
  // Source classes 0 and 1 appear in the target batch; classes 2 and 3 do not.
  auto onehot = [](std::vector<int> ys) {
    Matrix m(ys.size(), 4, 0.0);
    for (std::size_t i = 0; i < ys.size(); ++i) m(i, static_cast<std::size_t>(ys[i])) = 1.0;
    return m;
  };
  const std::vector<int> ys{0, 0, 1, 1, 2, 2, 3, 3};
  const Matrix src = onehot(ys);
  const Matrix tgt = onehot({0, 0, 0, 0, 1, 1, 1, 1});
  const auto cost = ot::build_cost_matrix(src, tgt);
  const auto plan = ot::solve_exact(cost, ot::Marginals::uniform(8, 8));
  const auto w = class_weights(guide_matrix(plan, cost), ys, 0.0);
  for (int matched : {0, 1})
    for (int unmatched : {2, 3}) CHECK(w.at(matched) > w.at(unmatched));
}

TEST_CASE("normalized weights average to one and are cost-scale invariant") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t ns = 4 + rng.below(12), nt = 4 + rng.below(12);
    Matrix cost(ns, nt);
    for (double& v : cost.data()) v = rng.uniform(0.1, 1.0);
    std::vector<int> ys(ns);
    for (int& y : ys) y = static_cast<int>(rng.below(4));
    auto normalized = [&](double scale) {
      ot::CostMatrix c{cost};
      for (double& v : c.values.data()) v *= scale;
      const auto plan = ot::solve_exact(c, ot::Marginals::uniform(ns, nt));
      return normalize_weights(class_weights(guide_matrix(plan, c), ys, 2.0), ys);
    };
    const auto base = normalized(1.0);
    const auto v = per_sample_weights(base, ys);
    CHECK(std::abs(std::accumulate(v.begin(), v.end(), 0.0) / ns - 1.0) <= 1e-9);
    const auto scaled = normalized(42.0);
    for (const auto& [k, x] : base.w) CHECK(std::abs(scaled.at(k) - x) <= 1e-9 * x);
  }
}

}  // TEST_SUITE
