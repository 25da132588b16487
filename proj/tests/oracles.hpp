#pragma once

// Test-only oracles, kept independent of the library implementation paths
// they check.

#include <cstddef>
#include <span>
#include <vector>

#include "mnd/numerics.hpp"

namespace oracle {

// O(n^2) pairwise AUC: 1 per won comparison, 0.5 per tie.
inline double pairwise_auc(const std::vector<double>& known, const std::vector<double>& novel) {
  double wins = 0.0;
  for (double a : known)
    for (double b : novel) {
      if (a > b) wins += 1.0;
      else if (a == b) wins += 0.5;
    }
  return wins / (static_cast<double>(known.size()) * static_cast<double>(novel.size()));
}

// Plain triple-loop matrix product, row-major.
inline mnd::Matrix naive_matmul(const mnd::Matrix& a, const mnd::Matrix& b) {
  mnd::Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

// Exhaustive best 2-partition clustering objective (sum of squared distances
// to the part means) over <= ~16 points.
inline double best_two_partition_sse(const std::vector<mnd::Vec>& points) {
  const std::size_t n = points.size();
  const std::size_t d = points[0].size();
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
    mnd::Vec mean0(d, 0.0), mean1(d, 0.0);
    std::size_t n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool in1 = (mask >> i) & 1u;
      mnd::Vec& m = in1 ? mean1 : mean0;
      for (std::size_t j = 0; j < d; ++j) m[j] += points[i][j];
      (in1 ? n1 : n0) += 1;
    }
    for (std::size_t j = 0; j < d; ++j) {
      mean0[j] /= static_cast<double>(n0);
      mean1[j] /= static_cast<double>(n1);
    }
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const mnd::Vec& m = ((mask >> i) & 1u) ? mean1 : mean0;
      for (std::size_t j = 0; j < d; ++j) {
        double diff = points[i][j] - m[j];
        sse += diff * diff;
      }
    }
    best = std::min(best, sse);
  }
  return best;
}

}  // namespace oracle
