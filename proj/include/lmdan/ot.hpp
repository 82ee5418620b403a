#pragma once

#include <cstddef>
#include <vector>

#include "lmdan/numerics.hpp"

namespace lmdan::ot {

/// Pairwise Euclidean distances between source and target probability rows.
struct CostMatrix {
  Matrix values;  // n_s x n_t

  std::size_t source_count() const { return values.rows(); }
  std::size_t target_count() const { return values.cols(); }
  double max_entry() const;
};

struct Marginals {
  std::vector<double> source;
  std::vector<double> target;

  /// a_i = 1/n_s, b_j = 1/n_t.
  static Marginals uniform(std::size_t n_source, std::size_t n_target);
};

struct TransportPlan {
  Matrix gamma;
  double objective = 0.0;  // <gamma, M>_F
  bool converged = true;
  std::size_t iterations = 0;
  double row_error = 0.0;  // L1 distance of row sums to the source marginal
  double col_error = 0.0;
};

/// Throws if `probs` has a row that is not on the probability simplex.
void check_simplex_rows(const Matrix& probs, double tol, const char* what);

CostMatrix build_cost_matrix(const Matrix& src_probs, const Matrix& tgt_probs,
                             double simplex_tol = 1e-9);

/// Exact transport by the transportation simplex (MODI potentials on a
/// spanning-tree basis). Entering cell: most negative reduced cost, ties to
/// the lexicographically smallest (i, j); after a run of degenerate pivots
/// the rule switches to Bland's (first negative cell, smallest leaving cell),
/// which cannot cycle.
TransportPlan solve_exact(const CostMatrix& cost, const Marginals& marginals);

struct SinkhornOptions {
  double eps = 1e-3;
  std::size_t max_iter = 100000;
  double tol = 1e-9;
  /// Anneal eps geometrically from max(cost) down to `eps`, warm-starting the
  /// dual potentials at each stage.
  bool eps_scaling = true;
};

/// Entropic OT via log-domain Sinkhorn iterations. A plan that misses `tol`
/// within `max_iter` iterations comes back with converged == false.
TransportPlan solve_sinkhorn(const CostMatrix& cost, const Marginals& marginals,
                             const SinkhornOptions& options);

double frobenius(const Matrix& gamma, const Matrix& cost);

/// Fill row_error/col_error of `plan` against `marginals`.
void measure_marginal_error(TransportPlan& plan, const Marginals& marginals);

}  // namespace lmdan::ot
