#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "lmdan/numerics.hpp"
#include "lmdan/ot.hpp"

namespace lmdan::weighting {

/// Hadamard product of a transport plan with its cost matrix.
struct GuideMatrix {
  Matrix values;
};

/// Per-class source weights. Only classes present in the batch have entries.
struct ClassWeights {
  std::map<int, double> w;
  double alpha = 0.0;
  /// Classes whose denominator hit the floor.
  std::vector<int> floored;

  double at(int label) const;
  bool contains(int label) const { return w.count(label) != 0; }
};

GuideMatrix guide_matrix(const ot::TransportPlan& plan, const ot::CostMatrix& cost);

inline constexpr double kDefaultFloor = 1e-8;

/// w_k = 1 / max(eps_floor, count_k^alpha * sum_{i: y_i = k} sum_j t_ij).
///
/// When `class_counts` is non-empty it supplies count_k (e.g. whole-dataset
/// counts); otherwise counts are taken from `src_labels`.
ClassWeights class_weights(const GuideMatrix& guide, std::span<const int> src_labels, double alpha,
                           double eps_floor = kDefaultFloor,
                           std::span<const std::size_t> class_counts = {});

/// Rescale so that the mean per-sample weight over `src_labels` is 1.
ClassWeights normalize_weights(const ClassWeights& weights, std::span<const int> src_labels);

std::vector<double> per_sample_weights(const ClassWeights& weights, std::span<const int> labels);

}  // namespace lmdan::weighting
