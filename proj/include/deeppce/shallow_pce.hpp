#pragma once
/**
 * @file shallow_pce.hpp
 * @brief Classical single-level PCE: least-squares fit, prediction and
 * closed-form moments / first-order Sobol indices.
 *
 * A ShallowPce stores one weight row per output over a shared basis; column 0
 * is the constant term. Because the basis is orthonormal under the product
 * marginal, the mean is column 0, the covariance is the Gram matrix of the
 * remaining columns, and conditional quantities reduce to sums over
 * multi-index subsets.
 */

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deeppce/basis.hpp"
#include "deeppce/condition.hpp"
#include "deeppce/error.hpp"
#include "deeppce/orthopoly.hpp"
#include "deeppce/sobol_indices.hpp"

namespace deeppce {

struct ShallowPce {
  MultiIndexSet basis;
  std::vector<PolyFamily> families;
  Eigen::MatrixXd weights;  // [outputs x |basis|]

  int input_dim() const noexcept { return basis.scope_dim(); }
  int output_dim() const noexcept { return static_cast<int>(weights.rows()); }
};

struct FitOptions {
  double ridge = 0.0;
  /// Dense QR cost grows with |basis|^2 * N; larger bases are refused.
  std::size_t max_basis_size = 10'000;
  std::size_t max_design_entries = 100'000'000;
};

/// Rows of Phi_alpha(x_i), one row per sample.
inline Eigen::MatrixXd design_matrix(const MultiIndexSet& basis, std::span<const PolyFamily> families,
                                     const Eigen::MatrixXd& inputs) {
  const auto dims = static_cast<Eigen::Index>(basis.scope_dim());
  require(inputs.cols() == dims && families.size() == static_cast<std::size_t>(dims),
          ErrorCode::DimensionMismatch,
          "design_matrix: expected " + std::to_string(dims) + " input columns");
  const int degree = basis.max_degree();
  const std::size_t stride = static_cast<std::size_t>(degree) + 1;
  std::vector<double> table(static_cast<std::size_t>(dims) * stride);
  std::vector<double> row(basis.size());
  Eigen::MatrixXd phi(inputs.rows(), static_cast<Eigen::Index>(basis.size()));
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    for (Eigen::Index d = 0; d < dims; ++d) {
      eval_basis_into(families[static_cast<std::size_t>(d)], degree, inputs(i, d),
                      std::span<double>(table).subspan(static_cast<std::size_t>(d) * stride, stride));
    }
    combine_tensor_basis(basis, table, stride, row);
    for (std::size_t j = 0; j < row.size(); ++j) phi(i, static_cast<Eigen::Index>(j)) = row[j];
  }
  return phi;
}

/// Minimizes ||Y - Phi W^T||^2 + ridge ||W||^2 by column-pivoted QR.
inline ShallowPce fit_least_squares(MultiIndexSet basis, std::vector<PolyFamily> families,
                                    const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                                    const FitOptions& options = {}) {
  require(inputs.rows() >= 1, ErrorCode::InvalidArgument, "fit_least_squares: no samples");
  require(inputs.rows() == targets.rows(), ErrorCode::DimensionMismatch,
          "fit_least_squares: input and target row counts differ");
  require(options.ridge >= 0.0, ErrorCode::InvalidArgument, "fit_least_squares: ridge must be >= 0");
  const auto n = static_cast<std::size_t>(inputs.rows());
  const std::size_t p = basis.size();
  if (p > options.max_basis_size || n * p > options.max_design_entries) {
    throw Error(ErrorCode::TooLarge, "fit_least_squares: basis of " + std::to_string(p) +
                                         " terms with " + std::to_string(n) +
                                         " samples exceeds the dense-fit cap");
  }
  if (options.ridge == 0.0 && n < p) {
    throw Error(ErrorCode::RankDeficient,
                "fit_least_squares: " + std::to_string(n) + " samples for " + std::to_string(p) +
                    " basis terms; use ridge > 0");
  }

  Eigen::MatrixXd phi = design_matrix(basis, families, inputs);
  Eigen::MatrixXd rhs = targets;
  if (options.ridge > 0.0) {
    const auto pp = static_cast<Eigen::Index>(p);
    Eigen::MatrixXd augmented(phi.rows() + pp, pp);
    augmented << phi, std::sqrt(options.ridge) * Eigen::MatrixXd::Identity(pp, pp);
    Eigen::MatrixXd augmented_rhs(rhs.rows() + pp, rhs.cols());
    augmented_rhs << rhs, Eigen::MatrixXd::Zero(pp, rhs.cols());
    phi = std::move(augmented);
    rhs = std::move(augmented_rhs);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(phi);
  if (qr.rank() < static_cast<Eigen::Index>(p)) {
    throw Error(ErrorCode::RankDeficient, "fit_least_squares: design matrix has rank " +
                                              std::to_string(qr.rank()) + " < " +
                                              std::to_string(p) + "; use ridge > 0");
  }
  ShallowPce model{std::move(basis), std::move(families), Eigen::MatrixXd()};
  model.weights = qr.solve(rhs).transpose();
  return model;
}

inline Eigen::MatrixXd predict_batch(const ShallowPce& model, const Eigen::MatrixXd& inputs) {
  return design_matrix(model.basis, model.families, inputs) * model.weights.transpose();
}

inline Eigen::VectorXd predict(const ShallowPce& model, std::span<const double> x) {
  require(x.size() == static_cast<std::size_t>(model.input_dim()), ErrorCode::DimensionMismatch,
          "predict: expected " + std::to_string(model.input_dim()) + " inputs");
  const std::vector<double> phi = eval_tensor_basis(model.basis, model.families, x);
  const Eigen::Map<const Eigen::VectorXd> phi_vec(phi.data(), static_cast<Eigen::Index>(phi.size()));
  return model.weights * phi_vec;
}

inline Eigen::VectorXd mean(const ShallowPce& model) { return model.weights.col(0); }

inline Eigen::MatrixXd covariance(const ShallowPce& model) {
  const auto tail = model.weights.rightCols(model.weights.cols() - 1);
  return tail * tail.transpose();
}

inline Eigen::VectorXd variance(const ShallowPce& model) {
  return model.weights.rightCols(model.weights.cols() - 1).rowwise().squaredNorm();
}

namespace detail {

/// Accumulates sum_alpha w_alpha * prod_{d fixed} phi_{alpha_d}(x_d) per free-variable
/// pattern. Terms whose free part differs are orthogonal and never mix.
inline std::map<MultiIndex, Eigen::VectorXd> shallow_conditional_groups(const ShallowPce& model,
                                                                        const ConditionSpec& spec) {
  spec.check_range(model.input_dim());
  const int degree = model.basis.max_degree();
  std::map<int, std::vector<double>> tables;
  for (const auto& [var, value] : spec.fixed) {
    tables[var] = eval_basis(model.families[static_cast<std::size_t>(var)], degree, value);
  }
  std::map<MultiIndex, Eigen::VectorXd> groups;
  for (std::size_t j = 0; j < model.basis.size(); ++j) {
    const MultiIndex& alpha = model.basis[j];
    MultiIndex free_part;
    double fixed_factor = 1.0;
    for (int d = 0; d < model.input_dim(); ++d) {
      const int a = alpha[static_cast<std::size_t>(d)];
      auto it = tables.find(d);
      if (it == tables.end()) {
        free_part.push_back(a);
      } else {
        fixed_factor *= it->second[static_cast<std::size_t>(a)];
      }
    }
    auto [pos, inserted] = groups.try_emplace(free_part, Eigen::VectorXd::Zero(model.output_dim()));
    pos->second += fixed_factor * model.weights.col(static_cast<Eigen::Index>(j));
  }
  return groups;
}

}  // namespace detail

inline Eigen::VectorXd conditional_mean(const ShallowPce& model, const ConditionSpec& spec) {
  const auto groups = detail::shallow_conditional_groups(model, spec);
  const MultiIndex zero(static_cast<std::size_t>(model.input_dim()) - spec.fixed.size(), 0);
  return groups.at(zero);
}

inline Eigen::MatrixXd conditional_covariance(const ShallowPce& model, const ConditionSpec& spec) {
  const auto groups = detail::shallow_conditional_groups(model, spec);
  const MultiIndex zero(static_cast<std::size_t>(model.input_dim()) - spec.fixed.size(), 0);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(model.output_dim(), model.output_dim());
  for (const auto& [pattern, v] : groups) {
    if (pattern != zero) cov += v * v.transpose();
  }
  return cov;
}

/// cov over X_I of E[Y | X_I]: Gram matrix of the non-constant weights
/// supported only on I.
inline Eigen::MatrixXd covariance_of_conditional_expectation(const ShallowPce& model,
                                                             const IndexSet& set) {
  set.check_range(model.input_dim());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(model.output_dim(), model.output_dim());
  for (std::size_t j = 1; j < model.basis.size(); ++j) {
    const MultiIndex& alpha = model.basis[j];
    bool supported = true;
    for (int d = 0; d < model.input_dim() && supported; ++d) {
      if (alpha[static_cast<std::size_t>(d)] != 0 && !set.contains(d)) supported = false;
    }
    if (supported) {
      const auto w = model.weights.col(static_cast<Eigen::Index>(j));
      cov += w * w.transpose();
    }
  }
  return cov;
}

inline SobolIndices sobol_first_order(const ShallowPce& model) {
  const int inputs = model.input_dim();
  Eigen::MatrixXd partial = Eigen::MatrixXd::Zero(model.output_dim(), inputs);
  for (std::size_t j = 1; j < model.basis.size(); ++j) {
    const MultiIndex& alpha = model.basis[j];
    int active = -1;
    int count = 0;
    for (int d = 0; d < inputs; ++d) {
      if (alpha[static_cast<std::size_t>(d)] != 0) {
        active = d;
        ++count;
      }
    }
    if (count == 1) {
      partial.col(active) += model.weights.col(static_cast<Eigen::Index>(j)).array().square().matrix();
    }
  }
  return make_sobol_indices(partial, variance(model));
}

}  // namespace deeppce
