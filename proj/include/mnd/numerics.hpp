#pragma once

// Dense linear algebra primitives, activations, a seeded deterministic RNG,
// and finite-difference gradient checking. Everything operates on 64-bit
// floats; the batched matrix products are backed by Eigen, the per-vector
// operations are plain loops.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mnd {

using Vec = std::vector<double>;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  double* row_ptr(std::size_t r) { return values.data() + r * cols; }
  const double* row_ptr(std::size_t r) const { return values.data() + r * cols; }

  Vec row(std::size_t r) const {
    return Vec(row_ptr(r), row_ptr(r) + cols);
  }

  bool operator==(const Matrix&) const = default;
};

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

// Counter-based splitmix64 (Steele, Lea, Flood 2014): the state advances by a
// fixed odd constant per draw and the output is a bijective mix of it, so the
// sequence depends only on the seed, on every platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo < hi))
      throw std::invalid_argument("rng_uniform: lo=" + std::to_string(lo) +
                                  " must be < hi=" + std::to_string(hi));
    double v = lo + (hi - lo) * uniform01();
    if (v >= hi) v = std::nextafter(hi, lo);
    return v;
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("next_below: n must be positive");
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Box-Muller; consumes exactly two draws per call.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t state_;
};

inline double sigmoid_scalar(double x) {
  double y;
  if (x >= 0.0) {
    y = 1.0 / (1.0 + std::exp(-x));
  } else {
    double e = std::exp(x);  // never overflows for x < 0
    y = e / (1.0 + e);
  }
  // exp underflow can round the result onto a closed endpoint; the output
  // contract is the open interval (0, 1).
  if (y >= 1.0) y = std::nextafter(1.0, 0.0);
  if (y <= 0.0) y = std::numeric_limits<double>::min();
  return y;
}

inline Vec sigmoid(const Vec& x) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_scalar(x[i]);
  return y;
}

inline Vec relu(const Vec& x) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

inline double l2_norm(const Vec& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

inline Vec l2_normalize(const Vec& x) {
  double n = l2_norm(x);
  if (n <= 0.0) throw std::invalid_argument("l2_normalize: zero vector");
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / n;
  return y;
}

// y = W x + b
inline Vec linear_forward(const Matrix& w, const Vec& b, const Vec& x) {
  if (w.cols != x.size() || w.rows != b.size())
    throw std::invalid_argument("linear_forward: W is " + shape_string(w) + ", b has length " +
                                std::to_string(b.size()) + ", x has length " +
                                std::to_string(x.size()));
  Vec y(w.rows);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double* wr = w.row_ptr(i);
    double acc = b[i];
    for (std::size_t j = 0; j < w.cols; ++j) acc += wr[j] * x[j];
    y[i] = acc;
  }
  return y;
}

// Central difference (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
  Vec grad(x.size());
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + h;
    double fp = f(probe);
    probe[i] = orig - h;
    double fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

namespace detail {

using ERowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<ERowMat>;
using EMapConst = Eigen::Map<const ERowMat>;

inline EMapConst as_eigen(const Matrix& m) {
  return EMapConst(m.values.data(), static_cast<Eigen::Index>(m.rows),
                   static_cast<Eigen::Index>(m.cols));
}

inline EMap as_eigen(Matrix& m) {
  return EMap(m.values.data(), static_cast<Eigen::Index>(m.rows),
              static_cast<Eigen::Index>(m.cols));
}

}  // namespace detail

// out = a * b^T, shapes (m x k)(n x k) -> (m x n)
inline void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.cols)
    throw std::invalid_argument("matmul_nt: inner dims differ, a=" + shape_string(a) +
                                " b=" + shape_string(b));
  out = Matrix(a.rows, b.rows);
  detail::as_eigen(out).noalias() = detail::as_eigen(a) * detail::as_eigen(b).transpose();
}

// out = a * b, shapes (m x k)(k x n) -> (m x n)
inline void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul_nn: inner dims differ, a=" + shape_string(a) +
                                " b=" + shape_string(b));
  out = Matrix(a.rows, b.cols);
  detail::as_eigen(out).noalias() = detail::as_eigen(a) * detail::as_eigen(b);
}

// out = a^T * b, shapes (k x m)(k x n) -> (m x n)
inline void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows != b.rows)
    throw std::invalid_argument("matmul_tn: inner dims differ, a=" + shape_string(a) +
                                " b=" + shape_string(b));
  out = Matrix(a.cols, b.cols);
  detail::as_eigen(out).noalias() = detail::as_eigen(a).transpose() * detail::as_eigen(b);
}

}  // namespace mnd
