#pragma once

// Independent reference computations used by the tests. Deliberately naive:
// long double arithmetic, explicit loops, no shared code with the library.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// exp(u_j) / sum exp(u_m) without max-subtraction, in long double.
inline std::vector<long double> mnl_probabilities(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta) {
  std::vector<long double> e(X.rows());
  long double total = 0;
  for (Eigen::Index j = 0; j < X.rows(); ++j) {
    long double u = 0;
    for (Eigen::Index c = 0; c < X.cols(); ++c) u += static_cast<long double>(X(j, c)) * beta(c);
    e[j] = std::exp(u);
    total += e[j];
  }
  for (auto& v : e) v /= total;
  return e;
}

// Determinant by Gaussian elimination with partial pivoting in long double.
inline long double determinant(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  std::vector<std::vector<long double>> a(n, std::vector<long double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a[i][j] = m(i, j);
  long double det = 1;
  for (int c = 0; c < n; ++c) {
    int pivot = c;
    for (int r = c + 1; r < n; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[pivot][c])) pivot = r;
    if (a[pivot][c] == 0) return 0;
    if (pivot != c) {
      std::swap(a[pivot], a[c]);
      det = -det;
    }
    det *= a[c][c];
    for (int r = c + 1; r < n; ++r) {
      const long double f = a[r][c] / a[c][c];
      for (int k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return det;
}

// Cofactor expansion along the first row; exponential cost, small n only.
inline long double cofactor_determinant(const std::vector<std::vector<long double>>& a) {
  const size_t n = a.size();
  if (n == 1) return a[0][0];
  long double det = 0;
  for (size_t c = 0; c < n; ++c) {
    std::vector<std::vector<long double>> minor;
    for (size_t r = 1; r < n; ++r) {
      std::vector<long double> row;
      for (size_t k = 0; k < n; ++k)
        if (k != c) row.push_back(a[r][k]);
      minor.push_back(row);
    }
    det += (c % 2 ? -1 : 1) * a[0][c] * cofactor_determinant(minor);
  }
  return det;
}

// Radical inverse of i in base b by explicit digit reversal.
inline long double radical_inverse(long long i, int b) {
  long double result = 0, scale = 1.0L / b;
  while (i > 0) {
    result += (i % b) * scale;
    i /= b;
    scale /= b;
  }
  return result;
}

// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace oracle
