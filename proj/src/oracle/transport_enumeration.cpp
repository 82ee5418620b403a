#include "lmdan/oracle/transport_enumeration.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

namespace lmdan::oracle {

namespace {

class VertexSearch {
 public:
  VertexSearch(const Matrix& cost, std::size_t m) : cost_(cost), m_(m) {}

  // State: remaining supplies followed by remaining demands.
  double best(std::vector<std::int64_t>& state) {
    if (std::all_of(state.begin(), state.end(), [](std::int64_t x) { return x == 0; })) return 0.0;
    if (auto it = memo_.find(state); it != memo_.end()) return it->second;
    double out = std::numeric_limits<double>::infinity();
    const std::size_t n = cost_.cols();
    for (std::size_t i = 0; i < m_; ++i) {
      if (state[i] == 0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (state[m_ + j] == 0) continue;
        const std::int64_t x = std::min(state[i], state[m_ + j]);
        state[i] -= x;
        state[m_ + j] -= x;
        out = std::min(out, cost_(i, j) * static_cast<double>(x) + best(state));
        state[i] += x;
        state[m_ + j] += x;
      }
    }
    memo_.emplace(state, out);
    return out;
  }

  std::size_t states() const { return memo_.size(); }

 private:
  const Matrix& cost_;
  std::size_t m_;
  std::map<std::vector<std::int64_t>, double> memo_;
};

}  // namespace

EnumerationResult enumerate_transport_vertices(const Matrix& cost,
                                               const std::vector<std::int64_t>& supply,
                                               const std::vector<std::int64_t>& demand) {
  if (supply.size() != cost.rows() || demand.size() != cost.cols()) {
    throw InvalidArgument("enumerate_transport_vertices: shape mismatch");
  }
  const std::int64_t total = std::accumulate(supply.begin(), supply.end(), std::int64_t{0});
  if (total != std::accumulate(demand.begin(), demand.end(), std::int64_t{0}) || total <= 0) {
    throw InvalidArgument("enumerate_transport_vertices: unbalanced or empty marginals");
  }
  std::vector<std::int64_t> state(supply);
  state.insert(state.end(), demand.begin(), demand.end());
  VertexSearch search(cost, supply.size());
  EnumerationResult r;
  r.objective = search.best(state) / static_cast<double>(total);
  r.states = search.states();
  return r;
}

EnumerationResult enumerate_uniform(const Matrix& cost) {
  const auto m = static_cast<std::int64_t>(cost.rows());
  const auto n = static_cast<std::int64_t>(cost.cols());
  const std::int64_t g = std::gcd(m, n);
  return enumerate_transport_vertices(cost, std::vector<std::int64_t>(cost.rows(), n / g),
                                      std::vector<std::int64_t>(cost.cols(), m / g));
}

}  // namespace lmdan::oracle
