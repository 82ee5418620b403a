#pragma once

#include <cstdint>
#include <vector>

#include "lmdan/numerics.hpp"

namespace lmdan::oracle {

/// Minimum of <gamma, C> over the transport polytope with integer row
/// supplies and column demands, by exhaustive vertex enumeration.
///
/// Every vertex of the polytope has a forest support, so it is produced by
/// the greedy rule "pick a cell with open row and column, ship
/// min(remaining row, remaining column)" under some cell order. The search
/// branches over every open cell at every step and memoizes on the vector
/// of remaining amounts, so it visits every vertex. Integer amounts keep the
/// enumeration exact. The returned objective is normalized by total mass.
struct EnumerationResult {
  double objective = 0.0;
  std::size_t states = 0;
};

EnumerationResult enumerate_transport_vertices(const Matrix& cost,
                                               const std::vector<std::int64_t>& supply,
                                               const std::vector<std::int64_t>& demand);

/// Uniform marginals 1/n_s and 1/n_t, scaled to integers n_t/g and n_s/g.
EnumerationResult enumerate_uniform(const Matrix& cost);

}  // namespace lmdan::oracle
