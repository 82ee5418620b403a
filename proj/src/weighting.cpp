#include "lmdan/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lmdan::weighting {

double ClassWeights::at(int label) const {
  auto it = w.find(label);
  if (it == w.end()) throw InvalidArgument("class weights: no entry for class " + std::to_string(label));
  return it->second;
}

GuideMatrix guide_matrix(const ot::TransportPlan& plan, const ot::CostMatrix& cost) {
  const Matrix& g = plan.gamma;
  const Matrix& m = cost.values;
  if (g.rows() != m.rows() || g.cols() != m.cols()) {
    throw InvalidArgument("guide_matrix: plan is " + std::to_string(g.rows()) + "x" +
                          std::to_string(g.cols()) + ", cost is " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()));
  }
  GuideMatrix t{Matrix(g.rows(), g.cols())};
  for (std::size_t k = 0; k < g.size(); ++k) t.values.data()[k] = g.data()[k] * m.data()[k];
  return t;
}

ClassWeights class_weights(const GuideMatrix& guide, std::span<const int> src_labels, double alpha,
                           double eps_floor, std::span<const std::size_t> class_counts) {
  const Matrix& t = guide.values;
  if (src_labels.size() != t.rows()) {
    throw InvalidArgument("class_weights: " + std::to_string(src_labels.size()) +
                          " labels for a guide matrix with " + std::to_string(t.rows()) + " rows");
  }
  if (!(alpha >= 0.0)) throw InvalidArgument("class_weights: alpha must be nonnegative");

  // Full row mass of T, accumulated per class.
  std::map<int, double> mass;
  std::map<int, std::size_t> count;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const int y = src_labels[i];
    if (y < 0) throw InvalidArgument("class_weights: negative label");
    double row = 0.0;
    for (double v : t.row(i)) row += v;
    mass[y] += row;
    ++count[y];
  }

  ClassWeights out;
  out.alpha = alpha;
  for (const auto& [k, m] : mass) {
    std::size_t n = count[k];
    if (!class_counts.empty()) {
      if (static_cast<std::size_t>(k) >= class_counts.size() || class_counts[k] == 0) {
        throw InvalidArgument("class_weights: no dataset count for class " + std::to_string(k));
      }
      n = class_counts[k];
    }
    double denom = std::pow(static_cast<double>(n), alpha) * m;
    if (denom < eps_floor) {
      denom = eps_floor;
      out.floored.push_back(k);
    }
    out.w[k] = 1.0 / denom;
  }
  return out;
}

ClassWeights normalize_weights(const ClassWeights& weights, std::span<const int> src_labels) {
  double total = 0.0;
  for (int y : src_labels) total += weights.at(y);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw InvalidArgument("normalize_weights: per-sample weights sum to zero");
  }
  const double scale = static_cast<double>(src_labels.size()) / total;
  ClassWeights out = weights;
  for (auto& [k, v] : out.w) v *= scale;
  return out;
}

std::vector<double> per_sample_weights(const ClassWeights& weights, std::span<const int> labels) {
  std::vector<double> v;
  v.reserve(labels.size());
  for (int y : labels) v.push_back(weights.at(y));
  return v;
}

}  // namespace lmdan::weighting
