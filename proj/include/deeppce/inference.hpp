#pragma once
/**
 * @file inference.hpp
 * @brief Closed-form moments, conditional moments and first-order Sobol
 * indices of a folded CircuitModel.
 *
 * Every query is one deterministic pass. Leaf regions are summarized by the
 * mean vector e = E[g] and second-moment matrix M = E[g g^T] of their W
 * nodes. A Hadamard product of disjoint-scope regions multiplies these
 * elementwise; an affine sum W(.) + b maps them by congruence plus bias
 * cross-terms. The query mode only changes how leaf states are formed.
 */

#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "deeppce/circuit.hpp"
#include "deeppce/condition.hpp"
#include "deeppce/error.hpp"
#include "deeppce/sobol_indices.hpp"

namespace deeppce {

struct RegionMoments {
  Eigen::VectorXd mean;            // e [width]
  Eigen::MatrixXd second_moment;   // M [width x width]

  Eigen::MatrixXd covariance() const { return second_moment - mean * mean.transpose(); }
};

/// One RegionMoments per region of a level (leaf level for input_moments).
using MomentState = std::vector<RegionMoments>;

struct OutputMoments {
  Eigen::VectorXd mean;           // [O]
  Eigen::MatrixXd second_moment;  // [O x O]
  Eigen::MatrixXd covariance;     // [O x O], symmetrized
};

namespace detail {

inline void require_folded(const CircuitModel& model, const char* query) {
  require(model.folded(), ErrorCode::NotFolded,
          std::string(query) + ": model still has batch norms; fold them first");
}

inline RegionMoments plain_leaf_moments(const Eigen::MatrixXd& weights) {
  RegionMoments state;
  state.mean = weights.col(0);
  state.second_moment = weights * weights.transpose();
  return state;
}

/// Conditioned leaf: terms are grouped by their degrees on the free scope
/// variables, each group collapsing to v_G = sum w_alpha prod_fixed phi(x).
/// Distinct groups are orthogonal, so M = sum_G v_G v_G^T.
inline RegionMoments conditioned_leaf_moments(const CircuitModel& model, std::size_t region,
                                              const ConditionSpec& spec) {
  const auto& scope = model.graph.partition[region];
  const LeafPce& leaf = model.leaves[region];
  const int degree = leaf.basis.max_degree();
  std::vector<int> fixed_pos;
  std::vector<std::vector<double>> tables;
  for (std::size_t d = 0; d < scope.size(); ++d) {
    auto it = spec.fixed.find(scope[d]);
    if (it == spec.fixed.end()) continue;
    fixed_pos.push_back(static_cast<int>(d));
    tables.push_back(eval_basis(model.config.marginals[static_cast<std::size_t>(scope[d])], degree, it->second));
  }
  if (fixed_pos.empty()) return plain_leaf_moments(leaf.sum.weights);

  std::map<MultiIndex, Eigen::VectorXd> groups;
  const auto width = leaf.sum.weights.rows();
  for (std::size_t j = 0; j < leaf.basis.size(); ++j) {
    const MultiIndex& alpha = leaf.basis[j];
    MultiIndex free_part;
    double factor = 1.0;
    std::size_t next_fixed = 0;
    for (std::size_t d = 0; d < alpha.size(); ++d) {
      if (next_fixed < fixed_pos.size() && fixed_pos[next_fixed] == static_cast<int>(d)) {
        factor *= tables[next_fixed][static_cast<std::size_t>(alpha[d])];
        ++next_fixed;
      } else {
        free_part.push_back(alpha[d]);
      }
    }
    auto [pos, inserted] = groups.try_emplace(std::move(free_part), Eigen::VectorXd::Zero(width));
    pos->second += factor * leaf.sum.weights.col(static_cast<Eigen::Index>(j));
  }
  RegionMoments state;
  state.second_moment = Eigen::MatrixXd::Zero(width, width);
  const MultiIndex zero(scope.size() - fixed_pos.size(), 0);
  state.mean = groups.at(zero);
  for (const auto& [pattern, v] : groups) state.second_moment.noalias() += v * v.transpose();
  return state;
}

/// Restricted leaf: only terms supported on the index set survive.
inline RegionMoments restricted_leaf_moments(const CircuitModel& model, std::size_t region, const IndexSet& set) {
  const auto& scope = model.graph.partition[region];
  const LeafPce& leaf = model.leaves[region];
  Eigen::MatrixXd weights = leaf.sum.weights;
  for (std::size_t j = 0; j < leaf.basis.size(); ++j) {
    const MultiIndex& alpha = leaf.basis[j];
    for (std::size_t d = 0; d < alpha.size(); ++d) {
      if (alpha[d] != 0 && !set.contains(scope[d])) {
        weights.col(static_cast<Eigen::Index>(j)).setZero();
        break;
      }
    }
  }
  return plain_leaf_moments(weights);
}

inline RegionMoments sum_moments(const SumLayer& sum, const RegionMoments& in) {
  RegionMoments out;
  const Eigen::VectorXd we = sum.weights * in.mean;
  out.second_moment = sum.weights * in.second_moment * sum.weights.transpose();
  out.mean = we;
  if (sum.bias.size() != 0) {
    out.mean += sum.bias;
    out.second_moment += sum.bias * we.transpose() + we * sum.bias.transpose() + sum.bias * sum.bias.transpose();
  }
  out.second_moment = 0.5 * (out.second_moment + out.second_moment.transpose()).eval();
  return out;
}

}  // namespace detail

/// Leaf-region states for the three query modes. With neither `spec` nor
/// `restrict_to`, plain moments; the two options are mutually exclusive.
inline MomentState input_moments(const CircuitModel& model, const std::optional<ConditionSpec>& spec = std::nullopt,
                                 const std::optional<IndexSet>& restrict_to = std::nullopt) {
  detail::require_folded(model, "input_moments");
  require(!(spec && restrict_to), ErrorCode::InvalidArgument,
          "input_moments: conditioning and restriction are exclusive");
  if (spec) spec->check_range(model.input_dim());
  if (restrict_to) restrict_to->check_range(model.input_dim());
  MomentState state;
  state.reserve(model.leaves.size());
  for (std::size_t c = 0; c < model.leaves.size(); ++c) {
    if (spec) {
      state.push_back(detail::conditioned_leaf_moments(model, c, *spec));
    } else if (restrict_to) {
      state.push_back(detail::restricted_leaf_moments(model, c, *restrict_to));
    } else {
      state.push_back(detail::plain_leaf_moments(model.leaves[c].sum.weights));
    }
  }
  return state;
}

/// Runs the merge plan and the output head on leaf-region states.
inline OutputMoments propagate_moments(const CircuitModel& model, MomentState state) {
  detail::require_folded(model, "propagate_moments");
  require(state.size() == model.leaves.size(), ErrorCode::DimensionMismatch,
          "propagate_moments: state has " + std::to_string(state.size()) + " regions, model has " +
              std::to_string(model.leaves.size()));
  for (const RegionMoments& region : state) {
    require(region.mean.size() == model.width() && region.second_moment.rows() == model.width() &&
                region.second_moment.cols() == model.width(),
            ErrorCode::DimensionMismatch, "propagate_moments: region state has the wrong width");
  }
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& plan = model.graph.merge_plan[l];
    MomentState next;
    next.reserve(plan.size());
    for (std::size_t j = 0; j < plan.size(); ++j) {
      const MergeStep& step = plan[j];
      const RegionMoments& u = state[static_cast<std::size_t>(step.left)];
      if (step.pass_through()) {
        next.push_back(u);
        continue;
      }
      const RegionMoments& v = state[static_cast<std::size_t>(step.right)];
      RegionMoments product{u.mean.cwiseProduct(v.mean), u.second_moment.cwiseProduct(v.second_moment)};
      next.push_back(detail::sum_moments(model.blocks[l][j], product));
    }
    state = std::move(next);
  }
  const RegionMoments& root = state.front();
  OutputMoments out;
  const RegionMoments head = detail::sum_moments(model.head, root);
  out.mean = head.mean;
  out.second_moment = head.second_moment;
  // The head bias cancels in the covariance; computing it from the root
  // covariance avoids subtracting two large bias-dominated terms.
  const Eigen::MatrixXd root_cov = root.covariance();
  out.covariance = model.head.weights * root_cov * model.head.weights.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

inline Eigen::VectorXd mean(const CircuitModel& model) { return propagate_moments(model, input_moments(model)).mean; }

inline Eigen::MatrixXd covariance(const CircuitModel& model) {
  return propagate_moments(model, input_moments(model)).covariance;
}

inline Eigen::VectorXd variance(const CircuitModel& model) { return covariance(model).diagonal(); }

inline Eigen::VectorXd conditional_mean(const CircuitModel& model, const ConditionSpec& spec) {
  return propagate_moments(model, input_moments(model, spec)).mean;
}

inline Eigen::MatrixXd conditional_covariance(const CircuitModel& model, const ConditionSpec& spec) {
  return propagate_moments(model, input_moments(model, spec)).covariance;
}

/// cov over X_I of E[Y | X_I].
inline Eigen::MatrixXd covariance_of_conditional_expectation(const CircuitModel& model, const IndexSet& set) {
  return propagate_moments(model, input_moments(model, std::nullopt, set)).covariance;
}

/// E over X_I of cov(Y | X_I), by the law of total covariance.
inline Eigen::MatrixXd expected_conditional_covariance(const CircuitModel& model, const IndexSet& set) {
  return covariance(model) - covariance_of_conditional_expectation(model, set);
}

/// Outputs whose variance is below this fraction of max(1, mean^2) count as constant.
inline constexpr double kZeroVarianceRelTol = 1e-13;

inline SobolIndices sobol_first_order(const CircuitModel& model) {
  const OutputMoments total = propagate_moments(model, input_moments(model));
  Eigen::MatrixXd partial(model.output_dim(), model.input_dim());
  for (int i = 0; i < model.input_dim(); ++i) {
    partial.col(i) = covariance_of_conditional_expectation(model, IndexSet({i})).diagonal();
  }
  SobolIndices result = make_sobol_indices(partial, total.covariance.diagonal());
  for (Eigen::Index o = 0; o < partial.rows(); ++o) {
    const double floor = kZeroVarianceRelTol * std::max(1.0, total.mean[o] * total.mean[o]);
    if (total.covariance(o, o) <= floor) {
      result.first_order.row(o).setZero();
      result.zero_variance[static_cast<std::size_t>(o)] = true;
    }
  }
  return result;
}

}  // namespace deeppce
