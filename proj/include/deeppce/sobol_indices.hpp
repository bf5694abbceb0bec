#pragma once

#include <vector>

#include <Eigen/Dense>

namespace deeppce {

/// First-order Sobol indices, one row per output. Rows whose output variance
/// is zero are reported as zeros and flagged.
struct SobolIndices {
  Eigen::MatrixXd first_order;  // [outputs x inputs]
  std::vector<bool> zero_variance;

  bool any_zero_variance() const {
    for (bool flag : zero_variance)
      if (flag) return true;
    return false;
  }
};

/// Builds indices from per-variable conditional-expectation variances
/// ([outputs x inputs]) and total variances ([outputs]).
inline SobolIndices make_sobol_indices(const Eigen::MatrixXd& partial_variance,
                                       const Eigen::VectorXd& total_variance,
                                       double zero_tolerance = 0.0) {
  SobolIndices result;
  result.first_order = Eigen::MatrixXd::Zero(partial_variance.rows(), partial_variance.cols());
  result.zero_variance.assign(static_cast<std::size_t>(partial_variance.rows()), false);
  for (Eigen::Index o = 0; o < partial_variance.rows(); ++o) {
    if (!(total_variance[o] > zero_tolerance)) {
      result.zero_variance[static_cast<std::size_t>(o)] = true;
      continue;
    }
    result.first_order.row(o) = partial_variance.row(o) / total_variance[o];
  }
  return result;
}

/// Rescales each row to sum to one (plot-style normalization); zero rows stay zero.
inline Eigen::MatrixXd normalize_rows_by_sum(const Eigen::MatrixXd& indices) {
  Eigen::MatrixXd out = indices;
  for (Eigen::Index o = 0; o < out.rows(); ++o) {
    const double total = out.row(o).sum();
    if (total > 0.0) out.row(o) /= total;
  }
  return out;
}

}  // namespace deeppce
