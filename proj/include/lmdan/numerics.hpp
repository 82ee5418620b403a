#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace lmdan {

/// Raised on malformed arguments (shape mismatch, out-of-range values).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix transposed() const;
  /// Rows `indices[k]` of this matrix, in order.
  Matrix gather_rows(std::span<const std::size_t> indices) const;

  bool all_finite() const;
  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// Numerically stable softmax (max-subtracted). Throws on non-finite input.
std::vector<double> softmax(std::span<const double> logits);
/// Row-wise softmax of a logits matrix.
Matrix softmax_rows(const Matrix& logits);
double log_sum_exp(std::span<const double> values);

/// log(1 / (1 + exp(-z))) without overflow.
double log_sigmoid(double z);
double sigmoid(double z);

/// Seeded generator: 64-bit Mersenne Twister (std::mt19937_64), whose output
/// sequence is fixed by the standard. Distributions are implemented here
/// rather than via <random> distributions, whose algorithms are unspecified.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound), unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t bound);
  /// Box-Muller transform; one draw per call (the paired value is cached).
  double gaussian(double mean = 0.0, double stddev = 1.0);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Identity permutation of 0..n-1 shuffled.
  std::vector<std::size_t> permutation(std::size_t n);

  /// Independent child stream; derived via splitmix64 so that (seed, stream)
  /// pairs map to well-separated engine seeds.
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lmdan
