#include "lmdan/oracle/verify_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>

#include "lmdan/oracle/finite_difference.hpp"
#include "lmdan/oracle/transport_enumeration.hpp"
#include "lmdan/ot.hpp"
#include "lmdan/weighting.hpp"

namespace lmdan::oracle {
namespace {

// Independent streams per check so that changing one instance count does
// not shift the instances another check sees.
constexpr std::uint64_t kExactStream = 1;
constexpr std::uint64_t kSinkhornStream = 2;
constexpr std::uint64_t kScaleStream = 3;
constexpr std::uint64_t kGradientStream = 4;

Matrix random_cost(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

CheckResult timed(const std::string& name, double tolerance,
                  const std::function<void(CheckResult&)>& body) {
  CheckResult r;
  r.name = name;
  r.tolerance = tolerance;
  const auto start = std::chrono::steady_clock::now();
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.passed = std::isfinite(r.max_error) && r.max_error <= tolerance;
  return r;
}

// Shared by both Sinkhorn checks.
struct SinkhornErrors {
  double objective_gap = 0.0;
  double marginal = 0.0;
  std::size_t unconverged = 0;
};

SinkhornErrors sinkhorn_errors(const VerifyOptions& options) {
  Rng rng(Rng::derive_seed(options.seed, kSinkhornStream));
  SinkhornErrors e;
  for (std::size_t n = 0; n < options.sinkhorn_instances; ++n) {
    const ot::CostMatrix cost{random_cost(rng, 10, 10, 0.0, 10.0)};
    const auto marginals = ot::Marginals::uniform(10, 10);
    const auto exact = ot::solve_exact(cost, marginals);
    ot::SinkhornOptions so;
    so.eps = 1e-3;
    const auto approx = ot::solve_sinkhorn(cost, marginals, so);
    if (!approx.converged) ++e.unconverged;
    e.objective_gap =
        std::max(e.objective_gap, std::abs(approx.objective - exact.objective) / cost.max_entry());
    e.marginal = std::max({e.marginal, approx.row_error, approx.col_error});
  }
  return e;
}

}  // namespace

CheckResult check_exact_transport(const VerifyOptions& options) {
  const char* name = options.inject_cost_bug ? "ot_exact_vs_enumeration[injected_bug]"
                                             : "ot_exact_vs_enumeration";
  return timed(name, 1e-9, [&](CheckResult& r) {
    Rng rng(Rng::derive_seed(options.seed, kExactStream));
    for (std::size_t n = 0; n < options.ot_instances; ++n) {
      const std::size_t ns = 2 + rng.below(5);
      const std::size_t nt = 2 + rng.below(5);
      const Matrix cost = random_cost(rng, ns, nt, 0.0, 10.0);
      ot::CostMatrix seen{cost};
      if (options.inject_cost_bug)
        for (std::size_t i = 0; i < std::min(ns, nt); ++i) seen.values(i, i) += 1.0;
      const auto plan = ot::solve_exact(seen, ot::Marginals::uniform(ns, nt));
      const auto truth = enumerate_uniform(cost);
      r.max_error = std::max(r.max_error, std::abs(plan.objective - truth.objective));
      ++r.cases;
    }
  });
}

CheckResult check_sinkhorn_objective(const VerifyOptions& options) {
  return timed("sinkhorn_objective_gap", 0.05, [&](CheckResult& r) {
    const auto e = sinkhorn_errors(options);
    r.max_error = e.objective_gap;
    r.cases = options.sinkhorn_instances;
    if (e.unconverged) r.detail = std::to_string(e.unconverged) + " runs did not converge";
  });
}

CheckResult check_sinkhorn_marginals(const VerifyOptions& options) {
  return timed("sinkhorn_marginal_l1", 1e-6, [&](CheckResult& r) {
    const auto e = sinkhorn_errors(options);
    r.max_error = e.marginal;
    r.cases = options.sinkhorn_instances;
  });
}

CheckResult check_weight_hand_cases() {
  return timed("weight_hand_cases", 1e-12, [](CheckResult& r) {
    struct Case {
      Matrix guide;
      std::vector<int> labels;
      double alpha;
      std::map<int, double> expected;
    };
    // Row sums (0.2, 0.3, 0.1); classes {0, 0, 1}.
    const Matrix a = Matrix::from_rows({{0.1, 0.1}, {0.3, 0.0}, {0.05, 0.05}});
    // One class, total mass 0.8 over four rows.
    const Matrix b = Matrix::from_rows({{0.1, 0.1}, {0.2, 0.0}, {0.0, 0.25}, {0.125, 0.025}});
    // Class 0 carries no mass, so its denominator is floored.
    const Matrix c = Matrix::from_rows({{0.0, 0.0}, {0.25, 0.25}, {0.5, 0.0}});
    const std::vector<Case> cases = {
        {a, {0, 0, 1}, 0.0, {{0, 2.0}, {1, 10.0}}},
        {a, {0, 0, 1}, 1.0, {{0, 1.0}, {1, 10.0}}},
        {a, {0, 0, 1}, 2.0, {{0, 0.5}, {1, 10.0}}},
        {b, {0, 0, 0, 0}, 0.0, {{0, 1.25}}},
        {b, {0, 0, 0, 0}, 1.0, {{0, 0.3125}}},
        {b, {0, 0, 0, 0}, 2.0, {{0, 0.078125}}},
        {c, {0, 1, 1}, 0.0, {{0, 1e8}, {1, 1.0}}},
        {c, {0, 1, 1}, 1.0, {{0, 1e8}, {1, 0.5}}},
        {c, {0, 1, 1}, 2.0, {{0, 1e8}, {1, 0.25}}},
    };
    for (const auto& k : cases) {
      const auto w = weighting::class_weights({k.guide}, k.labels, k.alpha);
      if (w.w.size() != k.expected.size()) {
        r.max_error = INFINITY;
        r.detail = "unexpected class set";
      }
      for (const auto& [label, value] : k.expected) {
        const double got = w.contains(label) ? w.at(label) : NAN;
        r.max_error = std::max(r.max_error, std::abs(got - value) / value);
        if (std::isnan(got)) r.max_error = INFINITY;
      }
      ++r.cases;
    }
  });
}

CheckResult check_weight_scale_invariance(const VerifyOptions& options) {
  return timed("weight_scale_invariance", 1e-9, [&](CheckResult& r) {
    Rng rng(Rng::derive_seed(options.seed, kScaleStream));
    for (std::size_t n = 0; n < 50; ++n) {
      const std::size_t ns = 3 + rng.below(10);
      const std::size_t nt = 3 + rng.below(10);
      // Continuous random costs make the optimum unique with probability one.
      const Matrix base = random_cost(rng, ns, nt, 0.1, 1.0);
      std::vector<int> labels(ns);
      for (int& y : labels) y = static_cast<int>(rng.below(3));
      const auto marginals = ot::Marginals::uniform(ns, nt);
      auto normalized = [&](double scale) {
        ot::CostMatrix cost{base};
        for (std::size_t i = 0; i < ns; ++i)
          for (std::size_t j = 0; j < nt; ++j) cost.values(i, j) *= scale;
        const auto plan = ot::solve_exact(cost, marginals);
        return weighting::normalize_weights(
            weighting::class_weights(weighting::guide_matrix(plan, cost), labels, 2.0), labels);
      };
      const auto reference = normalized(1.0);
      for (double scale : {1e-3, 0.37, 7.0, 1e4}) {
        const auto scaled = normalized(scale);
        for (const auto& [label, value] : reference.w)
          r.max_error = std::max(r.max_error, std::abs(scaled.at(label) - value) / value);
        ++r.cases;
      }
    }
  });
}

CheckResult check_classification_gradients(const VerifyOptions& options) {
  return timed("gradient_classification_path", 1e-4, [&](CheckResult& r) {
    for (std::size_t s = 0; s < options.gradient_seeds; ++s) {
      const auto g = check_classification_path(
          Rng::derive_seed(Rng::derive_seed(options.seed, kGradientStream), s));
      r.max_error = std::max(r.max_error, g.max_relative_error);
      r.cases += g.parameters;
    }
  });
}

CheckResult check_domain_gradients(const VerifyOptions& options) {
  return timed("gradient_domain_path", 1e-4, [&](CheckResult& r) {
    for (std::size_t s = 0; s < options.gradient_seeds; ++s) {
      const auto g = check_domain_path(
          Rng::derive_seed(Rng::derive_seed(options.seed, kGradientStream), s));
      r.max_error = std::max(r.max_error, g.max_relative_error);
      r.cases += g.parameters;
    }
  });
}

std::vector<CheckResult> run_verify_suite(const VerifyOptions& options) {
  return {check_exact_transport(options),        check_sinkhorn_objective(options),
          check_sinkhorn_marginals(options),     check_weight_hand_cases(),
          check_weight_scale_invariance(options), check_classification_gradients(options),
          check_domain_gradients(options)};
}

}  // namespace lmdan::oracle
