#pragma once
/**
 * @file orthopoly.hpp
 * @brief Univariate orthonormal polynomial families and Gauss quadrature.
 *
 * Two families are supported: probabilists' Hermite polynomials for normal
 * marginals and Legendre polynomials for uniform marginals. Both are
 * normalized so that E[phi_i(X) phi_j(X)] = delta_ij under the marginal.
 * A family carries an affine map from the user's coordinate x to the
 * canonical coordinate t = (x - location) / scale, where the canonical
 * measure is N(0,1) (Hermite) or U(-1,1) (Legendre).
 *
 * Evaluation uses the symmetric three-term recurrence
 *
 *   b_{n+1} phi_{n+1}(t) = t phi_n(t) - b_n phi_{n-1}(t),
 *
 * with b_n = sqrt(n) for Hermite and b_n = n / sqrt(4n^2 - 1) for Legendre.
 * The same coefficients build the Jacobi matrix for Golub-Welsch quadrature.
 */

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deeppce/error.hpp"

namespace deeppce {

enum class PolyKind { HermiteStandardNormal, LegendreUniform };

inline constexpr int kMaxBasisDegree = 16;
inline constexpr int kMaxQuadratureNodes = 64;

class PolyFamily {
 public:
  PolyFamily(PolyKind kind, double location, double scale)
      : kind_(kind), location_(location), scale_(scale) {
    require(std::isfinite(location) && std::isfinite(scale) && scale > 0.0,
            ErrorCode::InvalidArgument, "poly family: scale must be positive and finite");
  }

  static PolyFamily hermite() { return {PolyKind::HermiteStandardNormal, 0.0, 1.0}; }
  static PolyFamily legendre() { return {PolyKind::LegendreUniform, 0.0, 1.0}; }
  static PolyFamily normal(double mean, double stddev) {
    return {PolyKind::HermiteStandardNormal, mean, stddev};
  }
  /// Uniform marginal U(lower, upper).
  static PolyFamily uniform(double lower, double upper) {
    require(upper > lower, ErrorCode::InvalidArgument, "uniform marginal: upper must exceed lower");
    return {PolyKind::LegendreUniform, 0.5 * (lower + upper), 0.5 * (upper - lower)};
  }

  PolyKind kind() const noexcept { return kind_; }
  double location() const noexcept { return location_; }
  double scale() const noexcept { return scale_; }
  bool bounded() const noexcept { return kind_ == PolyKind::LegendreUniform; }

  double lower() const noexcept {
    return bounded() ? location_ - scale_ : -std::numeric_limits<double>::infinity();
  }
  double upper() const noexcept {
    return bounded() ? location_ + scale_ : std::numeric_limits<double>::infinity();
  }

  double to_canonical(double x) const noexcept { return (x - location_) / scale_; }
  double from_canonical(double t) const noexcept { return location_ + scale_ * t; }

  /// Off-diagonal Jacobi coefficient b_n (n >= 1); the diagonal is zero for both families.
  double recurrence_coefficient(int n) const noexcept {
    const double dn = n;
    if (kind_ == PolyKind::HermiteStandardNormal) return std::sqrt(dn);
    return dn / std::sqrt(4.0 * dn * dn - 1.0);
  }

  /// Mean and variance of the marginal in user coordinates.
  double mean() const noexcept { return location_; }
  double variance() const noexcept {
    return kind_ == PolyKind::HermiteStandardNormal ? scale_ * scale_ : scale_ * scale_ / 3.0;
  }

  friend bool operator==(const PolyFamily&, const PolyFamily&) = default;

 private:
  PolyKind kind_;
  double location_;
  double scale_;
};

inline std::string to_string(PolyKind kind) {
  return kind == PolyKind::HermiteStandardNormal ? "hermite" : "legendre";
}

inline PolyKind poly_kind_from_string(const std::string& name) {
  if (name == "hermite" || name == "normal") return PolyKind::HermiteStandardNormal;
  if (name == "legendre" || name == "uniform") return PolyKind::LegendreUniform;
  throw Error(ErrorCode::InvalidArgument, "unknown polynomial family '" + name + "'");
}

/// Writes [phi_0(x), ..., phi_K(x)] into `out` (size >= K + 1). Hot-path
/// variant of `eval_basis`; checks the same preconditions.
inline void eval_basis_into(const PolyFamily& family, int max_degree, double x,
                            std::span<double> out) {
  if (max_degree < 0 || max_degree > kMaxBasisDegree) {
    throw Error(ErrorCode::UnsupportedDegree,
                "basis degree " + std::to_string(max_degree) + " outside [0, " +
                    std::to_string(kMaxBasisDegree) + "]");
  }
  require(out.size() > static_cast<std::size_t>(max_degree), ErrorCode::DimensionMismatch,
          "eval_basis: output buffer too small");
  const double t = family.to_canonical(x);
  if (family.bounded() && !(std::abs(t) <= 1.0 + 1e-12)) {
    throw Error(ErrorCode::Domain, "value " + std::to_string(x) + " outside support [" +
                                       std::to_string(family.lower()) + ", " +
                                       std::to_string(family.upper()) + "]");
  }
  out[0] = 1.0;
  if (max_degree == 0) return;
  out[1] = t / family.recurrence_coefficient(1);
  for (int n = 1; n < max_degree; ++n) {
    out[n + 1] = (t * out[n] - family.recurrence_coefficient(n) * out[n - 1]) /
                 family.recurrence_coefficient(n + 1);
  }
}

inline std::vector<double> eval_basis(const PolyFamily& family, int max_degree, double x) {
  std::vector<double> values(static_cast<std::size_t>(std::max(max_degree, 0)) + 1);
  eval_basis_into(family, max_degree, x, values);
  return values;
}

/// Gauss rule for the family's probability measure; weights sum to one.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const noexcept { return nodes.size(); }
};

/// Golub-Welsch: nodes are the eigenvalues of the symmetric Jacobi matrix,
/// weights the squared first components of its normalized eigenvectors.
inline QuadratureRule quadrature(const PolyFamily& family, int n_nodes) {
  require(n_nodes >= 1 && n_nodes <= kMaxQuadratureNodes, ErrorCode::InvalidArgument,
          "quadrature: node count must be in [1, " + std::to_string(kMaxQuadratureNodes) + "]");
  QuadratureRule rule;
  rule.nodes.resize(n_nodes);
  rule.weights.resize(n_nodes);
  if (n_nodes == 1) {
    rule.nodes[0] = family.from_canonical(0.0);
    rule.weights[0] = 1.0;
    return rule;
  }
  Eigen::VectorXd diagonal = Eigen::VectorXd::Zero(n_nodes);
  Eigen::VectorXd off_diagonal(n_nodes - 1);
  for (int n = 1; n < n_nodes; ++n) off_diagonal[n - 1] = family.recurrence_coefficient(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diagonal, off_diagonal, Eigen::ComputeEigenvectors);
  require(solver.info() == Eigen::Success, ErrorCode::NonFinite,
          "quadrature: eigen decomposition failed");

  double total = 0.0;
  for (int i = 0; i < n_nodes; ++i) {
    const double v0 = solver.eigenvectors()(0, i);
    rule.nodes[i] = family.from_canonical(solver.eigenvalues()[i]);
    rule.weights[i] = v0 * v0;
    total += rule.weights[i];
  }
  for (double& w : rule.weights) w /= total;
  return rule;
}

}  // namespace deeppce
