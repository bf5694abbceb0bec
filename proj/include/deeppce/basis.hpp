#pragma once
/**
 * @file basis.hpp
 * @brief Multi-index sets under q-norm truncation and tensor-product basis evaluation.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "deeppce/error.hpp"
#include "deeppce/orthopoly.hpp"

namespace deeppce {

/// Per-variable polynomial degrees of one tensor-product basis function.
using MultiIndex = std::vector<int>;

inline constexpr std::size_t kDefaultMaxIndexSetSize = 1'000'000;
inline constexpr double kQNormSlack = 1e-12;

inline int total_degree(const MultiIndex& alpha) {
  return std::accumulate(alpha.begin(), alpha.end(), 0);
}

inline double q_norm(const MultiIndex& alpha, double q) {
  double sum = 0.0;
  for (int a : alpha) sum += a == 0 ? 0.0 : std::pow(static_cast<double>(a), q);
  return sum == 0.0 ? 0.0 : std::pow(sum, 1.0 / q);
}

/// Graded order: total degree ascending, ties broken so that degree sits on
/// earlier variables first, i.e. (1,0) precedes (0,1).
inline bool graded_less(const MultiIndex& a, const MultiIndex& b) {
  const int da = total_degree(a);
  const int db = total_degree(b);
  if (da != db) return da < db;
  return std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end());
}

class MultiIndexSet {
 public:
  MultiIndexSet() = default;

  int scope_dim() const noexcept { return scope_dim_; }
  int max_order() const noexcept { return max_order_; }
  double q() const noexcept { return q_; }
  std::size_t size() const noexcept { return indices_.size(); }
  const MultiIndex& operator[](std::size_t i) const { return indices_[i]; }
  const std::vector<MultiIndex>& indices() const noexcept { return indices_; }
  auto begin() const noexcept { return indices_.begin(); }
  auto end() const noexcept { return indices_.end(); }

  /// Position of `alpha` in the set, or size() if absent.
  std::size_t find(const MultiIndex& alpha) const {
    auto it = std::lower_bound(indices_.begin(), indices_.end(), alpha, graded_less);
    if (it != indices_.end() && *it == alpha) return static_cast<std::size_t>(it - indices_.begin());
    return size();
  }

  /// Highest single-variable degree present (the univariate table size needed).
  int max_degree() const noexcept {
    int k = 0;
    for (const auto& alpha : indices_)
      for (int a : alpha) k = std::max(k, a);
    return k;
  }

  friend bool operator==(const MultiIndexSet&, const MultiIndexSet&) = default;

 private:
  friend MultiIndexSet generate_indices(int, int, double, std::size_t);

  int scope_dim_ = 0;
  int max_order_ = 0;
  double q_ = 1.0;
  std::vector<MultiIndex> indices_;
};

/// All alpha with ||alpha||_q <= K, zero index first, in graded order.
inline MultiIndexSet generate_indices(int scope_dim, int max_order, double q_norm_value,
                                      std::size_t max_size = kDefaultMaxIndexSetSize) {
  require(scope_dim >= 1, ErrorCode::InvalidArgument, "generate_indices: scope_dim must be >= 1");
  require(max_order >= 0, ErrorCode::InvalidArgument, "generate_indices: max_order must be >= 0");
  require(q_norm_value > 0.0 && q_norm_value <= 1.0, ErrorCode::InvalidArgument,
          "generate_indices: q must lie in (0, 1]");

  const double budget = std::pow(static_cast<double>(max_order), q_norm_value);
  const double slack = kQNormSlack * std::max(1.0, budget);
  MultiIndexSet set;
  set.scope_dim_ = scope_dim;
  set.max_order_ = max_order;
  set.q_ = q_norm_value;

  MultiIndex current(static_cast<std::size_t>(scope_dim), 0);
  // Depth-first over variables, pruning on the partial sum of a^q.
  auto recurse = [&](auto&& self, int dim, double used) -> void {
    if (dim == scope_dim) {
      if (set.indices_.size() >= max_size) {
        throw Error(ErrorCode::TooLarge,
                    "multi-index set exceeds cap of " + std::to_string(max_size) + " terms");
      }
      set.indices_.push_back(current);
      return;
    }
    for (int a = 0; a <= max_order; ++a) {
      const double cost = a == 0 ? 0.0 : std::pow(static_cast<double>(a), q_norm_value);
      if (used + cost > budget + slack) break;
      current[dim] = a;
      self(self, dim + 1, used + cost);
    }
    current[dim] = 0;
  };
  recurse(recurse, 0, 0.0);
  std::sort(set.indices_.begin(), set.indices_.end(), graded_less);
  return set;
}

/// Multiplies per-variable univariate tables into Phi_alpha(x) for every alpha.
/// `table` is laid out [dim][degree] with row stride `stride`.
inline void combine_tensor_basis(const MultiIndexSet& set, std::span<const double> table,
                                 std::size_t stride, std::span<double> out) {
  const std::size_t dims = static_cast<std::size_t>(set.scope_dim());
  for (std::size_t j = 0; j < set.size(); ++j) {
    const MultiIndex& alpha = set[j];
    double value = 1.0;
    for (std::size_t d = 0; d < dims; ++d) {
      if (alpha[d] != 0) value *= table[d * stride + static_cast<std::size_t>(alpha[d])];
    }
    out[j] = value;
  }
}

inline std::vector<double> eval_tensor_basis(const MultiIndexSet& set,
                                             std::span<const PolyFamily> families,
                                             std::span<const double> x) {
  const std::size_t dims = static_cast<std::size_t>(set.scope_dim());
  require(families.size() == dims && x.size() == dims, ErrorCode::DimensionMismatch,
          "eval_tensor_basis: expected " + std::to_string(dims) + " families and values");
  const int degree = set.max_degree();
  const std::size_t stride = static_cast<std::size_t>(degree) + 1;
  std::vector<double> table(dims * stride);
  for (std::size_t d = 0; d < dims; ++d) {
    eval_basis_into(families[d], degree, x[d], std::span<double>(table).subspan(d * stride, stride));
  }
  std::vector<double> out(set.size());
  combine_tensor_basis(set, table, stride, out);
  return out;
}

}  // namespace deeppce
