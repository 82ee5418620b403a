#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace lmdan::oracle {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;  // largest observed error, in the check's own units
  double tolerance = 0.0;
  std::size_t cases = 0;
  double seconds = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Negative control: the exact solver is handed a corrupted cost matrix
  /// (diagonal inflated by 1), which the enumeration check must catch.
  bool inject_cost_bug = false;
  std::size_t ot_instances = 200;
  std::size_t sinkhorn_instances = 50;
  std::size_t gradient_seeds = 3;
};

/// Exact OT against vertex enumeration on small random instances.
CheckResult check_exact_transport(const VerifyOptions& options);
/// Sinkhorn objective gap (relative to max cost) against the exact solver.
CheckResult check_sinkhorn_objective(const VerifyOptions& options);
/// Sinkhorn marginal L1 error.
CheckResult check_sinkhorn_marginals(const VerifyOptions& options);
/// Class weights on hand-evaluated guide matrices for alpha 0, 1 and 2.
CheckResult check_weight_hand_cases();
/// Normalized weights unchanged when the cost matrix is scaled.
CheckResult check_weight_scale_invariance(const VerifyOptions& options);
CheckResult check_classification_gradients(const VerifyOptions& options);
CheckResult check_domain_gradients(const VerifyOptions& options);

/// Every check above, in a fixed order.
std::vector<CheckResult> run_verify_suite(const VerifyOptions& options);

}  // namespace lmdan::oracle
