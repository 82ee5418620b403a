#include "lmdan/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace lmdan::ot {

double CostMatrix::max_entry() const {
  const auto& d = values.data();
  return d.empty() ? 0.0 : *std::max_element(d.begin(), d.end());
}

Marginals Marginals::uniform(std::size_t n_source, std::size_t n_target) {
  Marginals m;
  if (n_source > 0) m.source.assign(n_source, 1.0 / static_cast<double>(n_source));
  if (n_target > 0) m.target.assign(n_target, 1.0 / static_cast<double>(n_target));
  return m;
}

void check_simplex_rows(const Matrix& probs, double tol, const char* what) {
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double sum = 0.0;
    for (double p : probs.row(r)) {
      if (!std::isfinite(p) || p < -tol) {
        throw InvalidArgument(std::string(what) + ": row " + std::to_string(r) +
                              " has an entry outside [0, 1]");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw InvalidArgument(std::string(what) + ": row " + std::to_string(r) +
                            " is not on the probability simplex (sum " + std::to_string(sum) + ")");
    }
  }
}

CostMatrix build_cost_matrix(const Matrix& src_probs, const Matrix& tgt_probs, double simplex_tol) {
  if (src_probs.cols() != tgt_probs.cols()) {
    throw InvalidArgument("build_cost_matrix: class count mismatch (" +
                          std::to_string(src_probs.cols()) + " vs " +
                          std::to_string(tgt_probs.cols()) + ")");
  }
  check_simplex_rows(src_probs, simplex_tol, "build_cost_matrix source");
  check_simplex_rows(tgt_probs, simplex_tol, "build_cost_matrix target");

  CostMatrix cost{Matrix(src_probs.rows(), tgt_probs.rows())};
  for (std::size_t i = 0; i < src_probs.rows(); ++i) {
    auto gs = src_probs.row(i);
    for (std::size_t j = 0; j < tgt_probs.rows(); ++j) {
      auto gt = tgt_probs.row(j);
      double sq = 0.0;
      for (std::size_t k = 0; k < gs.size(); ++k) {
        const double d = gs[k] - gt[k];
        sq += d * d;
      }
      cost.values(i, j) = std::sqrt(sq);
    }
  }
  return cost;
}

double frobenius(const Matrix& gamma, const Matrix& cost) {
  if (gamma.rows() != cost.rows() || gamma.cols() != cost.cols()) {
    throw InvalidArgument("frobenius: shape mismatch");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < gamma.size(); ++k) s += gamma.data()[k] * cost.data()[k];
  return s;
}

void measure_marginal_error(TransportPlan& plan, const Marginals& marginals) {
  const Matrix& g = plan.gamma;
  plan.row_error = 0.0;
  plan.col_error = 0.0;
  std::vector<double> cols(g.cols(), 0.0);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < g.cols(); ++j) {
      r += g(i, j);
      cols[j] += g(i, j);
    }
    plan.row_error += std::abs(r - marginals.source[i]);
  }
  for (std::size_t j = 0; j < g.cols(); ++j) plan.col_error += std::abs(cols[j] - marginals.target[j]);
}

namespace {

void validate(const CostMatrix& cost, const Marginals& marg) {
  const std::size_t m = cost.source_count();
  const std::size_t n = cost.target_count();
  if (m == 0 || n == 0) throw InvalidArgument("transport: empty source or target batch");
  if (marg.source.size() != m || marg.target.size() != n) {
    throw InvalidArgument("transport: marginal lengths do not match the cost matrix");
  }
  if (!cost.values.all_finite()) throw InvalidArgument("transport: non-finite cost");
  for (double v : marg.source)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("transport: negative source marginal");
  for (double v : marg.target)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("transport: negative target marginal");
  const double sa = std::accumulate(marg.source.begin(), marg.source.end(), 0.0);
  const double sb = std::accumulate(marg.target.begin(), marg.target.end(), 0.0);
  if (std::abs(sa - sb) > 1e-9) {
    throw InvalidArgument("transport: infeasible marginals (source mass " + std::to_string(sa) +
                          ", target mass " + std::to_string(sb) + ")");
  }
}

struct BasicCell {
  std::size_t i;
  std::size_t j;
  double flow;
};

// Spanning-tree basis of the m x n transportation problem. Tree nodes are
// rows 0..m-1 followed by columns m..m+n-1; every basic cell is an edge.
class TransportationSimplex {
 public:
  TransportationSimplex(const Matrix& cost, const Marginals& marg)
      : cost_(cost), m_(cost.rows()), n_(cost.cols()) {
    least_cost_start(marg);
    double scale = 0.0;
    for (double c : cost.data()) scale = std::max(scale, std::abs(c));
    reduced_tol_ = 1e-12 * std::max(1.0, scale);
  }

  std::size_t run() {
    const std::size_t degenerate_limit = 2 * (m_ + n_);
    std::size_t degenerate_run = 0;
    bool bland = false;
    std::size_t pivots = 0;
    std::vector<double> u(m_), v(n_);
    for (;;) {
      build_adjacency();
      potentials(u, v);
      std::size_t ei = 0, ej = 0;
      if (!choose_entering(u, v, bland, ei, ej)) break;
      const double theta = pivot(ei, ej);
      ++pivots;
      if (theta <= kFlowTol) {
        if (++degenerate_run > degenerate_limit) bland = true;
      } else {
        degenerate_run = 0;
      }
    }
    return pivots;
  }

  Matrix plan() const {
    Matrix g(m_, n_);
    for (const auto& c : basis_) g(c.i, c.j) = std::max(0.0, c.flow);
    return g;
  }

 private:
  static constexpr double kFlowTol = 1e-14;
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  // Least-cost rule: repeatedly ship along the cheapest cell whose row and
  // column are both open (ties to the smallest (i, j)), then close the
  // exhausted row, or the column when the row is the last open one. Each
  // step adds one tree edge, so the result is a spanning-tree basis with
  // m + n - 1 cells, degenerate cells included.
  void least_cost_start(const Marginals& marg) {
    std::vector<double> ra = marg.source;
    std::vector<double> rb = marg.target;
    std::vector<std::size_t> order(m_ * n_);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return cost_.data()[x] < cost_.data()[y];
    });
    std::vector<char> row_open(m_, 1), col_open(n_, 1);
    std::size_t rows_left = m_, cols_left = n_;
    basis_.reserve(m_ + n_ - 1);
    for (std::size_t cell : order) {
      if (basis_.size() == m_ + n_ - 1) break;
      const std::size_t i = cell / n_;
      const std::size_t j = cell % n_;
      if (!row_open[i] || !col_open[j]) continue;
      const bool close_row = cols_left == 1 || (rows_left > 1 && ra[i] <= rb[j]);
      if (close_row) {
        basis_.push_back({i, j, ra[i]});
        rb[j] = std::max(0.0, rb[j] - ra[i]);
        ra[i] = 0.0;
        row_open[i] = 0;
        --rows_left;
      } else {
        basis_.push_back({i, j, rb[j]});
        ra[i] = std::max(0.0, ra[i] - rb[j]);
        rb[j] = 0.0;
        col_open[j] = 0;
        --cols_left;
      }
    }
  }

  // Incidence lists in compressed form, rebuilt after every pivot.
  void build_adjacency() {
    const std::size_t nodes = m_ + n_;
    offset_.assign(nodes + 1, 0);
    for (const auto& c : basis_) {
      ++offset_[c.i + 1];
      ++offset_[m_ + c.j + 1];
    }
    for (std::size_t v = 0; v < nodes; ++v) offset_[v + 1] += offset_[v];
    incident_.resize(offset_[nodes]);
    fill_.assign(offset_.begin(), offset_.end() - 1);
    for (std::size_t k = 0; k < basis_.size(); ++k) {
      incident_[fill_[basis_[k].i]++] = k;
      incident_[fill_[m_ + basis_[k].j]++] = k;
    }
  }

  std::size_t other_end(std::size_t cell, std::size_t node) const {
    const auto& c = basis_[cell];
    return node < m_ ? m_ + c.j : c.i;
  }

  // Breadth-first search over the tree from `root`; fills via_ (the cell used
  // to reach each node) and order_ (visit order).
  void traverse(std::size_t root) {
    via_.assign(m_ + n_, kNone);
    seen_.assign(m_ + n_, 0);
    order_.clear();
    order_.push_back(root);
    seen_[root] = 1;
    for (std::size_t head = 0; head < order_.size(); ++head) {
      const std::size_t node = order_[head];
      for (std::size_t e = offset_[node]; e < offset_[node + 1]; ++e) {
        const std::size_t cell = incident_[e];
        const std::size_t next = other_end(cell, node);
        if (seen_[next]) continue;
        seen_[next] = 1;
        via_[next] = cell;
        order_.push_back(next);
      }
    }
  }

  // u_i + v_j = c_ij on every basic cell, u_0 = 0.
  void potentials(std::vector<double>& u, std::vector<double>& v) {
    traverse(0);
    u[0] = 0.0;
    for (std::size_t k = 1; k < order_.size(); ++k) {
      const std::size_t node = order_[k];
      const auto& c = basis_[via_[node]];
      if (node >= m_) {
        v[c.j] = cost_(c.i, c.j) - u[c.i];
      } else {
        u[c.i] = cost_(c.i, c.j) - v[c.j];
      }
    }
  }

  bool choose_entering(const std::vector<double>& u, const std::vector<double>& v, bool bland,
                       std::size_t& ei, std::size_t& ej) const {
    double best = -reduced_tol_;
    bool found = false;
    for (std::size_t i = 0; i < m_; ++i) {
      for (std::size_t j = 0; j < n_; ++j) {
        const double d = cost_(i, j) - u[i] - v[j];
        if (d < best) {
          best = d;
          ei = i;
          ej = j;
          found = true;
          if (bland) return true;
        }
      }
    }
    return found;
  }

  // Tree path (as cell indices) from row node `from` to column node `to`.
  std::vector<std::size_t> tree_path(std::size_t from, std::size_t to) {
    traverse(from);
    std::vector<std::size_t> path;
    for (std::size_t node = to; node != from;) {
      const std::size_t cell = via_[node];
      path.push_back(cell);
      node = other_end(cell, node);
    }
    std::reverse(path.begin(), path.end());
    return path;
  }

  double pivot(std::size_t ei, std::size_t ej) {
    // Cycle: entering cell (+), then the tree path from row ei to column ej,
    // whose cells alternate -, +, -, ... starting at row ei.
    const auto path = tree_path(ei, m_ + ej);
    double theta = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < path.size(); k += 2) theta = std::min(theta, basis_[path[k]].flow);
    theta = std::max(theta, 0.0);

    // Leaving cell: smallest (i, j) among the blocking cells (Bland's rule
    // for the leaving side, used in both phases).
    std::size_t leave = path.front();
    bool have = false;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const auto& c = basis_[path[k]];
      if (c.flow <= theta + kFlowTol) {
        if (!have || c.i < basis_[leave].i || (c.i == basis_[leave].i && c.j < basis_[leave].j)) {
          leave = path[k];
          have = true;
        }
      }
    }
    for (std::size_t k = 0; k < path.size(); ++k) {
      auto& c = basis_[path[k]];
      c.flow += (k % 2 == 0) ? -theta : theta;
      if (c.flow < kFlowTol) c.flow = std::max(0.0, c.flow);
    }
    basis_[leave] = {ei, ej, theta};
    return theta;
  }

  const Matrix& cost_;
  std::size_t m_;
  std::size_t n_;
  double reduced_tol_ = 0.0;
  std::vector<BasicCell> basis_;
  std::vector<std::size_t> offset_;
  std::vector<std::size_t> incident_;
  std::vector<std::size_t> fill_;
  std::vector<std::size_t> via_;
  std::vector<std::size_t> order_;
  std::vector<char> seen_;
};

}  // namespace

TransportPlan solve_exact(const CostMatrix& cost, const Marginals& marginals) {
  validate(cost, marginals);
  TransportationSimplex simplex(cost.values, marginals);
  TransportPlan plan;
  plan.iterations = simplex.run();
  plan.gamma = simplex.plan();
  plan.objective = frobenius(plan.gamma, cost.values);
  plan.converged = true;
  measure_marginal_error(plan, marginals);
  return plan;
}

namespace {

struct SinkhornState {
  std::vector<double> f;
  std::vector<double> g;
  std::vector<double> log_a;
  std::vector<double> log_b;
};

// One full sweep: f-update then g-update. Columns are exact afterwards.
void sinkhorn_sweep(const Matrix& cost, double eps, SinkhornState& s, std::vector<double>& scratch) {
  const std::size_t m = cost.rows();
  const std::size_t n = cost.cols();
  scratch.resize(std::max(m, n));
  for (std::size_t i = 0; i < m; ++i) {
    if (std::isinf(s.log_a[i])) {
      s.f[i] = -std::numeric_limits<double>::infinity();
      continue;
    }
    for (std::size_t j = 0; j < n; ++j) scratch[j] = (s.g[j] - cost(i, j)) / eps;
    s.f[i] = eps * (s.log_a[i] - log_sum_exp(std::span<const double>(scratch.data(), n)));
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (std::isinf(s.log_b[j])) {
      s.g[j] = -std::numeric_limits<double>::infinity();
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) scratch[i] = (s.f[i] - cost(i, j)) / eps;
    s.g[j] = eps * (s.log_b[j] - log_sum_exp(std::span<const double>(scratch.data(), m)));
  }
}

Matrix sinkhorn_plan(const Matrix& cost, double eps, const SinkhornState& s) {
  Matrix g(cost.rows(), cost.cols());
  for (std::size_t i = 0; i < cost.rows(); ++i)
    for (std::size_t j = 0; j < cost.cols(); ++j) {
      const double e = (s.f[i] + s.g[j] - cost(i, j)) / eps;
      g(i, j) = std::isfinite(e) ? std::exp(e) : 0.0;
    }
  return g;
}

double row_l1_error(const Matrix& cost, double eps, const SinkhornState& s,
                    const std::vector<double>& a) {
  double err = 0.0;
  for (std::size_t i = 0; i < cost.rows(); ++i) {
    if (std::isinf(s.f[i])) {
      err += a[i];
      continue;
    }
    double r = 0.0;
    for (std::size_t j = 0; j < cost.cols(); ++j) {
      const double e = (s.f[i] + s.g[j] - cost(i, j)) / eps;
      if (std::isfinite(e)) r += std::exp(e);
    }
    err += std::abs(r - a[i]);
  }
  return err;
}

}  // namespace

TransportPlan solve_sinkhorn(const CostMatrix& cost, const Marginals& marginals,
                             const SinkhornOptions& options) {
  validate(cost, marginals);
  if (!(options.eps > 0.0)) throw InvalidArgument("solve_sinkhorn: eps must be positive");
  if (!(options.tol > 0.0)) throw InvalidArgument("solve_sinkhorn: tol must be positive");

  const Matrix& c = cost.values;
  SinkhornState s;
  s.f.assign(c.rows(), 0.0);
  s.g.assign(c.cols(), 0.0);
  for (double a : marginals.source) s.log_a.push_back(std::log(a));
  for (double b : marginals.target) s.log_b.push_back(std::log(b));

  std::vector<double> schedule;
  if (options.eps_scaling) {
    for (double e = std::max(cost.max_entry(), options.eps); e > options.eps; e *= 0.5) {
      schedule.push_back(e);
    }
  }
  schedule.push_back(options.eps);

  std::vector<double> scratch;
  std::size_t iterations = 0;
  double row_err = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (std::size_t stage = 0; stage < schedule.size(); ++stage) {
    const double eps = schedule[stage];
    const bool last = stage + 1 == schedule.size();
    // Intermediate stages only need a warm start, not full accuracy.
    const double stage_tol = last ? options.tol : std::max(options.tol, 1e-3);
    while (iterations < options.max_iter) {
      sinkhorn_sweep(c, eps, s, scratch);
      ++iterations;
      row_err = row_l1_error(c, eps, s, marginals.source);
      if (row_err < stage_tol) break;
    }
    if (last) converged = row_err < options.tol;
  }

  TransportPlan plan;
  plan.gamma = sinkhorn_plan(c, options.eps, s);
  plan.objective = frobenius(plan.gamma, c);
  plan.iterations = iterations;
  measure_marginal_error(plan, marginals);
  plan.converged = converged && plan.row_error < options.tol && plan.col_error < options.tol;
  return plan;
}

}  // namespace lmdan::ot
