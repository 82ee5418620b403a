#pragma once

#include <cstddef>
#include <cstdint>

namespace lmdan::oracle {

/// Outcome of comparing analytic gradients against central differences.
struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t parameters = 0;
};

/// Step used for central differences.
inline constexpr double kFiniteDifferenceStep = 1e-5;

/// Relative error |a - b| / max(|a|, |b|, floor). The floor keeps exactly
/// zero gradients (dead ReLU units) from dividing by zero.
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Builds a random small encoder/classifier/discriminator (dims <= 8) and a
/// random weighted batch from `seed`, then checks every parameter of the
/// classification path (weighted cross-entropy through G(F(x))).
GradientCheck check_classification_path(std::uint64_t seed);

/// Same setup, checking the domain path (weighted L2 through D(F(x))).
GradientCheck check_domain_path(std::uint64_t seed);

}  // namespace lmdan::oracle
