#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace dce::detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Utility of one row, accumulated left to right so every caller gets the
// same rounding.
inline double utility(const RowMatrix& X, int row, const double* beta) {
  const double* x = X.data() + static_cast<Eigen::Index>(row) * X.cols();
  double v = 0.0;
  for (Eigen::Index k = 0; k < X.cols(); ++k) v += x[k] * beta[k];
  return v;
}

// Log-probability of the chosen row of a group; `prob` receives the
// probabilities of all rows in the group.
inline double group_log_prob(const RowMatrix& X, int begin, int size, int chosen, const double* beta,
                             std::vector<double>& prob) {
  prob.resize(static_cast<size_t>(size));
  double vmax = -INFINITY;
  for (int j = 0; j < size; ++j) {
    prob[j] = utility(X, begin + j, beta);
    vmax = std::max(vmax, prob[j]);
  }
  const double v_chosen = prob[chosen];
  double sum = 0.0;
  for (int j = 0; j < size; ++j) {
    prob[j] = std::exp(prob[j] - vmax);
    sum += prob[j];
  }
  for (int j = 0; j < size; ++j) prob[j] /= sum;
  return v_chosen - vmax - std::log(sum);
}

}  // namespace dce::detail
