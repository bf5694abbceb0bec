#pragma once
/**
 * @file circuit.hpp
 * @brief Deep PCE circuit: random scope partition, balanced region tree,
 * layered weight tensors and the value forward pass.
 *
 * Layout for D inputs, scope size s and width W:
 *
 *   leaves   ceil(D/s) regions; region c evaluates W PCEs over its scope,
 *            g_{c,n}(x_c) = sum_alpha w_{n,alpha} Phi_alpha(x_c)
 *   blocks   one per merge layer; each merge takes the Hadamard product of
 *            two child regions (equal width W) followed by W affine sums.
 *            An odd region at the end of a layer passes through unchanged.
 *   head     affine map from the root region's W values to the O outputs.
 *
 * Every leaf and block sum may be followed by a batch norm. Inference always
 * uses running statistics, so a batch norm is an affine map that
 * `fold_batchnorm` (training.hpp) absorbs into the sum weights.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "deeppce/basis.hpp"
#include "deeppce/error.hpp"
#include "deeppce/orthopoly.hpp"
#include "deeppce/rng.hpp"
#include "deeppce/shallow_pce.hpp"

namespace deeppce {

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct CircuitConfig {
  int d_in = 1;
  int d_out = 1;
  int scope_size = 1;
  int max_order = 3;
  int width = 8;  // nodes per region ("num sums"); the input layer uses the same width
  std::uint64_t seed = 0;
  bool batch_norm = true;
  /// One marginal per input; empty means standard normal everywhere.
  std::vector<PolyFamily> marginals;

  void validate() const {
    require(d_in >= 1, ErrorCode::InvalidArgument, "circuit: d_in must be >= 1");
    require(d_out >= 1, ErrorCode::InvalidArgument, "circuit: d_out must be >= 1");
    require(scope_size >= 1 && scope_size <= d_in, ErrorCode::InvalidArgument,
            "circuit: scope_size must be in [1, d_in]");
    require(max_order >= 1 && max_order <= kMaxBasisDegree, ErrorCode::InvalidArgument,
            "circuit: max_order must be in [1, " + std::to_string(kMaxBasisDegree) + "]");
    require(width >= 1, ErrorCode::InvalidArgument, "circuit: width must be >= 1");
    require(marginals.empty() || marginals.size() == static_cast<std::size_t>(d_in),
            ErrorCode::DimensionMismatch, "circuit: need one marginal per input");
  }
};

/// One entry of a merge layer: regions `left` and `right` of the previous
/// level become one parent region. `right < 0` marks a pass-through.
struct MergeStep {
  int left = 0;
  int right = -1;

  bool pass_through() const noexcept { return right < 0; }
  friend bool operator==(const MergeStep&, const MergeStep&) = default;
};

struct RegionGraph {
  std::vector<std::vector<int>> partition;
  std::vector<std::vector<MergeStep>> merge_plan;
  std::uint64_t seed = 0;

  std::size_t region_count() const noexcept { return partition.size(); }
  std::size_t depth() const noexcept { return merge_plan.size(); }

  /// Scopes of the regions alive after `level` merge layers (0 = leaves).
  std::vector<std::vector<int>> scopes_at(std::size_t level) const {
    std::vector<std::vector<int>> scopes = partition;
    for (std::size_t l = 0; l < level && l < merge_plan.size(); ++l) {
      std::vector<std::vector<int>> next;
      for (const MergeStep& step : merge_plan[l]) {
        std::vector<int> scope = scopes[static_cast<std::size_t>(step.left)];
        if (!step.pass_through()) {
          const auto& other = scopes[static_cast<std::size_t>(step.right)];
          scope.insert(scope.end(), other.begin(), other.end());
          std::sort(scope.begin(), scope.end());
        }
        next.push_back(std::move(scope));
      }
      scopes = std::move(next);
    }
    return scopes;
  }

  friend bool operator==(const RegionGraph&, const RegionGraph&) = default;
};

/// Balanced binary merge plan over `regions` leaves.
inline std::vector<std::vector<MergeStep>> balanced_merge_plan(std::size_t regions) {
  std::vector<std::vector<MergeStep>> plan;
  std::size_t count = regions;
  while (count > 1) {
    std::vector<MergeStep> layer;
    for (std::size_t j = 0; j + 1 < count; j += 2) {
      layer.push_back({static_cast<int>(j), static_cast<int>(j + 1)});
    }
    if (count % 2 == 1) layer.push_back({static_cast<int>(count - 1), -1});
    plan.push_back(std::move(layer));
    count = (count + 1) / 2;
  }
  return plan;
}

inline RegionGraph build_region_graph(int d_in, int scope_size, std::uint64_t seed) {
  require(d_in >= 1 && scope_size >= 1 && scope_size <= d_in, ErrorCode::InvalidArgument,
          "region graph: need 1 <= scope_size <= d_in");
  CounterRng rng(seed, 0x5C0FE);
  const std::vector<std::size_t> perm = random_permutation(static_cast<std::size_t>(d_in), rng);
  RegionGraph graph;
  graph.seed = seed;
  for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(scope_size)) {
    const std::size_t stop = std::min(perm.size(), start + static_cast<std::size_t>(scope_size));
    std::vector<int> scope;
    for (std::size_t i = start; i < stop; ++i) scope.push_back(static_cast<int>(perm[i]));
    std::sort(scope.begin(), scope.end());
    graph.partition.push_back(std::move(scope));
  }
  graph.merge_plan = balanced_merge_plan(graph.partition.size());
  return graph;
}

struct BatchNorm {
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
  bool active = false;
  /// Number of batches folded into the running statistics.
  std::uint64_t tracked_batches = 0;

  static BatchNorm identity(int width, bool active) {
    return {Eigen::VectorXd::Ones(width), Eigen::VectorXd::Zero(width), Eigen::VectorXd::Zero(width),
            Eigen::VectorXd::Ones(width), active, 0};
  }

  /// Inference-time affine form z = scale * y + shift.
  Eigen::VectorXd scale() const {
    return (gamma.array() / (running_var.array() + kBatchNormEpsilon).sqrt()).matrix();
  }
  Eigen::VectorXd shift() const { return beta - scale().cwiseProduct(running_mean); }

  friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

/// Affine sum layer: out = W in + b, then optional batch norm. Leaves use an
/// empty bias; their constant basis column plays that role.
struct SumLayer {
  Eigen::MatrixXd weights;  // [outputs x inputs]
  Eigen::VectorXd bias;     // [outputs] or empty
  BatchNorm norm;

  Eigen::Index out_width() const noexcept { return weights.rows(); }
  friend bool operator==(const SumLayer&, const SumLayer&) = default;
};

struct LeafPce {
  MultiIndexSet basis;  // over the region's scope, total-order truncation
  SumLayer sum;         // weights [width x |basis|]
  friend bool operator==(const LeafPce&, const LeafPce&) = default;
};

struct CircuitModel {
  CircuitConfig config;
  RegionGraph graph;
  std::vector<LeafPce> leaves;
  std::vector<std::vector<SumLayer>> blocks;  // aligned with graph.merge_plan; empty for pass-through
  SumLayer head;                              // [d_out x width] + bias, never normalized

  int input_dim() const noexcept { return config.d_in; }
  int output_dim() const noexcept { return config.d_out; }
  int width() const noexcept { return config.width; }
  const std::vector<PolyFamily>& marginals() const noexcept { return config.marginals; }

  std::vector<PolyFamily> scope_families(std::size_t region) const {
    std::vector<PolyFamily> families;
    for (int var : graph.partition[region]) families.push_back(config.marginals[static_cast<std::size_t>(var)]);
    return families;
  }

  /// True when no batch norm remains; exact inference requires it.
  bool folded() const noexcept {
    for (const auto& leaf : leaves)
      if (leaf.sum.norm.active) return false;
    for (const auto& layer : blocks)
      for (const auto& sum : layer)
        if (sum.norm.active) return false;
    return true;
  }
};

inline bool operator==(const CircuitConfig& a, const CircuitConfig& b) {
  return a.d_in == b.d_in && a.d_out == b.d_out && a.scope_size == b.scope_size &&
         a.max_order == b.max_order && a.width == b.width && a.seed == b.seed &&
         a.batch_norm == b.batch_norm && a.marginals == b.marginals;
}
inline bool operator==(const CircuitModel& a, const CircuitModel& b) {
  return a.config == b.config && a.graph == b.graph && a.leaves == b.leaves && a.blocks == b.blocks &&
         a.head == b.head;
}

/// Allocates the structure with zero weights; see `init_weights` in training.hpp.
inline CircuitModel build(CircuitConfig config) {
  config.validate();
  if (config.marginals.empty()) {
    config.marginals.assign(static_cast<std::size_t>(config.d_in), PolyFamily::hermite());
  }
  CircuitModel model;
  model.graph = build_region_graph(config.d_in, config.scope_size, config.seed);
  const int width = config.width;
  for (const auto& scope : model.graph.partition) {
    LeafPce leaf;
    leaf.basis = generate_indices(static_cast<int>(scope.size()), config.max_order, 1.0);
    leaf.sum.weights = Eigen::MatrixXd::Zero(width, static_cast<Eigen::Index>(leaf.basis.size()));
    leaf.sum.norm = BatchNorm::identity(width, config.batch_norm);
    model.leaves.push_back(std::move(leaf));
  }
  for (const auto& layer : model.graph.merge_plan) {
    std::vector<SumLayer> sums;
    for (const MergeStep& step : layer) {
      SumLayer sum;
      if (!step.pass_through()) {
        sum.weights = Eigen::MatrixXd::Zero(width, width);
        sum.bias = Eigen::VectorXd::Zero(width);
        sum.norm = BatchNorm::identity(width, config.batch_norm);
      }
      sums.push_back(std::move(sum));
    }
    model.blocks.push_back(std::move(sums));
  }
  model.head.weights = Eigen::MatrixXd::Zero(config.d_out, width);
  model.head.bias = Eigen::VectorXd::Zero(config.d_out);
  model.head.norm = BatchNorm::identity(config.d_out, false);
  model.config = std::move(config);
  return model;
}

inline CircuitModel build(int d_in, int d_out, int scope_size, int max_order, int width,
                          std::uint64_t seed) {
  CircuitConfig config;
  config.d_in = d_in;
  config.d_out = d_out;
  config.scope_size = scope_size;
  config.max_order = max_order;
  config.width = width;
  config.seed = seed;
  return build(std::move(config));
}

/// Checks smoothness and structured decomposability plus all tensor shapes.
inline void audit_structure(const CircuitModel& model) {
  const int d = model.input_dim();
  const int width = model.width();
  std::vector<int> seen(static_cast<std::size_t>(d), 0);
  require(model.leaves.size() == model.graph.partition.size(), ErrorCode::MalformedFile,
          "audit: leaf count differs from partition size");
  for (std::size_t c = 0; c < model.graph.partition.size(); ++c) {
    const auto& scope = model.graph.partition[c];
    require(!scope.empty(), ErrorCode::MalformedFile, "audit: empty scope");
    for (int var : scope) {
      require(var >= 0 && var < d, ErrorCode::MalformedFile, "audit: scope variable out of range");
      require(seen[static_cast<std::size_t>(var)]++ == 0, ErrorCode::MalformedFile,
              "audit: scopes are not pairwise disjoint");
    }
    const LeafPce& leaf = model.leaves[c];
    require(leaf.basis.scope_dim() == static_cast<int>(scope.size()) &&
                leaf.sum.weights.rows() == width &&
                leaf.sum.weights.cols() == static_cast<Eigen::Index>(leaf.basis.size()),
            ErrorCode::MalformedFile, "audit: leaf " + std::to_string(c) + " has inconsistent shape");
  }
  for (int var = 0; var < d; ++var) {
    require(seen[static_cast<std::size_t>(var)] == 1, ErrorCode::MalformedFile,
            "audit: partition does not cover every input");
  }
  require(model.blocks.size() == model.graph.merge_plan.size(), ErrorCode::MalformedFile,
          "audit: block count differs from merge plan depth");
  std::vector<std::vector<int>> scopes = model.graph.partition;
  for (std::size_t l = 0; l < model.graph.merge_plan.size(); ++l) {
    const auto& layer = model.graph.merge_plan[l];
    require(layer.size() == model.blocks[l].size(), ErrorCode::MalformedFile,
            "audit: block " + std::to_string(l) + " width mismatch");
    std::vector<int> used(scopes.size(), 0);
    std::vector<std::vector<int>> next;
    for (std::size_t j = 0; j < layer.size(); ++j) {
      const MergeStep& step = layer[j];
      require(step.left >= 0 && static_cast<std::size_t>(step.left) < scopes.size() &&
                  (step.pass_through() || static_cast<std::size_t>(step.right) < scopes.size()),
              ErrorCode::MalformedFile, "audit: merge references a missing region");
      ++used[static_cast<std::size_t>(step.left)];
      std::vector<int> scope = scopes[static_cast<std::size_t>(step.left)];
      const SumLayer& sum = model.blocks[l][j];
      if (!step.pass_through()) {
        ++used[static_cast<std::size_t>(step.right)];
        const auto& other = scopes[static_cast<std::size_t>(step.right)];
        for (int var : other) {
          require(std::find(scope.begin(), scope.end(), var) == scope.end(), ErrorCode::MalformedFile,
                  "audit: product children share variables");
        }
        scope.insert(scope.end(), other.begin(), other.end());
        std::sort(scope.begin(), scope.end());
        require(sum.weights.rows() == width && sum.weights.cols() == width && sum.bias.size() == width,
                ErrorCode::MalformedFile, "audit: block sum has inconsistent shape");
      } else {
        require(sum.weights.size() == 0, ErrorCode::MalformedFile,
                "audit: pass-through region carries weights");
      }
      next.push_back(std::move(scope));
    }
    for (int u : used) require(u == 1, ErrorCode::MalformedFile, "audit: region consumed != once");
    scopes = std::move(next);
  }
  require(scopes.size() == 1 && scopes[0].size() == static_cast<std::size_t>(d), ErrorCode::MalformedFile,
          "audit: root region does not cover all inputs");
  require(model.head.weights.rows() == model.output_dim() && model.head.weights.cols() == width &&
              model.head.bias.size() == model.output_dim(),
          ErrorCode::MalformedFile, "audit: output head has inconsistent shape");
}

// ---------------------------------------------------------------------------
// Forward pass

enum class NormMode { Inference, Training };

/// Intermediate values of one sum layer, kept for the backward pass.
struct SumActivation {
  Eigen::MatrixXd input;       // [batch x in]
  Eigen::MatrixXd normalized;  // [batch x out] (training mode with batch norm)
  Eigen::VectorXd batch_mean;
  Eigen::VectorXd batch_var;
  Eigen::VectorXd inv_std;
};

struct ForwardCache {
  std::vector<SumActivation> leaves;
  std::vector<std::vector<SumActivation>> blocks;
  /// Region values per level: [0] leaf outputs, [l + 1] after block l.
  std::vector<std::vector<Eigen::MatrixXd>> levels;
  SumActivation head;
};

namespace detail {

/// x * 0 is NaN exactly when x is not finite; the sum vectorizes where allFinite does not.
template <class Dense>
bool all_finite(const Dense& values) {
  return !std::isnan((values.array() * 0.0).sum());
}

/// `level` < 0 names the input layer (region `index`), otherwise block `level`.
inline void check_finite(const Eigen::MatrixXd& values, long level, std::size_t index) {
  if (all_finite(values)) return;
  const std::string where = level < 0 ? "input layer (region " + std::to_string(index) + ")"
                                      : "block " + std::to_string(level) + " (merge " + std::to_string(index) + ")";
  throw Error(ErrorCode::NonFinite, "non-finite value in " + where);
}

inline Eigen::MatrixXd apply_sum(const SumLayer& sum, const Eigen::MatrixXd& input, NormMode mode,
                                 SumActivation* cache) {
  Eigen::MatrixXd out = input * sum.weights.transpose();
  if (sum.bias.size() != 0) out.rowwise() += sum.bias.transpose();
  if (cache != nullptr) cache->input = input;
  if (!sum.norm.active) return out;

  if (mode == NormMode::Inference) {
    const Eigen::VectorXd scale = sum.norm.scale();
    const Eigen::VectorXd shift = sum.norm.shift();
    out = (out.array().rowwise() * scale.transpose().array()).rowwise() + shift.transpose().array();
    return out;
  }
  const double batch = static_cast<double>(out.rows());
  const Eigen::VectorXd mean = out.colwise().mean().transpose();
  Eigen::MatrixXd centered = out.rowwise() - mean.transpose();
  const Eigen::VectorXd var = centered.colwise().squaredNorm().transpose() / batch;
  const Eigen::VectorXd inv_std = (var.array() + kBatchNormEpsilon).rsqrt().matrix();
  Eigen::MatrixXd normalized = centered.array().rowwise() * inv_std.transpose().array();
  out = (normalized.array().rowwise() * sum.norm.gamma.transpose().array()).rowwise() +
        sum.norm.beta.transpose().array();
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->batch_mean = mean;
    cache->batch_var = var;
    cache->inv_std = inv_std;
  }
  return out;
}

/// Phi rows for one leaf region: [batch x |basis|].
inline void leaf_basis_into(const CircuitModel& model, std::size_t region, const Eigen::MatrixXd& inputs,
                            Eigen::MatrixXd& phi) {
  const auto& scope = model.graph.partition[region];
  const MultiIndexSet& basis = model.leaves[region].basis;
  const int degree = basis.max_degree();
  const std::size_t stride = static_cast<std::size_t>(degree) + 1;
  std::vector<double> table(scope.size() * stride);
  std::vector<double> row(basis.size());
  phi.resize(inputs.rows(), static_cast<Eigen::Index>(basis.size()));
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    for (std::size_t d = 0; d < scope.size(); ++d) {
      const auto var = static_cast<std::size_t>(scope[d]);
      eval_basis_into(model.config.marginals[var], degree, inputs(i, static_cast<Eigen::Index>(var)),
                      std::span<double>(table).subspan(d * stride, stride));
    }
    combine_tensor_basis(basis, table, stride, row);
    for (std::size_t j = 0; j < row.size(); ++j) phi(i, static_cast<Eigen::Index>(j)) = row[j];
  }
}

inline Eigen::MatrixXd leaf_basis(const CircuitModel& model, std::size_t region, const Eigen::MatrixXd& inputs) {
  Eigen::MatrixXd phi;
  leaf_basis_into(model, region, inputs, phi);
  return phi;
}

}  // namespace detail

/// Evaluates the circuit on a batch of rows. In training mode batch norms use
/// batch statistics (returned through `cache`) and running statistics are left
/// untouched; the trainer updates them.
inline Eigen::MatrixXd forward(const CircuitModel& model, const Eigen::MatrixXd& inputs, NormMode mode,
                               ForwardCache* cache = nullptr) {
  if (inputs.cols() != model.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "forward: expected " + std::to_string(model.input_dim()) +
                                                  " input columns, got " + std::to_string(inputs.cols()));
  }
  const std::size_t regions = model.leaves.size();
  if (cache != nullptr) {
    cache->leaves.assign(regions, {});
    cache->blocks.assign(model.blocks.size(), {});
    cache->levels.clear();
  }
  std::vector<Eigen::MatrixXd> values(regions);
  for (std::size_t c = 0; c < regions; ++c) {
    const Eigen::MatrixXd phi = detail::leaf_basis(model, c, inputs);
    values[c] = detail::apply_sum(model.leaves[c].sum, phi, mode,
                                  cache != nullptr ? &cache->leaves[c] : nullptr);
    detail::check_finite(values[c], -1, c);
  }
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& plan = model.graph.merge_plan[l];
    if (cache != nullptr) {
      cache->levels.push_back(values);
      cache->blocks[l].assign(plan.size(), {});
    }
    std::vector<Eigen::MatrixXd> next(plan.size());
    for (std::size_t j = 0; j < plan.size(); ++j) {
      const MergeStep& step = plan[j];
      if (step.pass_through()) {
        next[j] = values[static_cast<std::size_t>(step.left)];
        continue;
      }
      const Eigen::MatrixXd product =
          values[static_cast<std::size_t>(step.left)].cwiseProduct(values[static_cast<std::size_t>(step.right)]);
      next[j] = detail::apply_sum(model.blocks[l][j], product, mode,
                                  cache != nullptr ? &cache->blocks[l][j] : nullptr);
      detail::check_finite(next[j], static_cast<long>(l), j);
    }
    values = std::move(next);
  }
  if (cache != nullptr) cache->levels.push_back(values);
  Eigen::MatrixXd out = detail::apply_sum(model.head, values.front(), NormMode::Inference,
                                          cache != nullptr ? &cache->head : nullptr);
  if (!detail::all_finite(out)) throw Error(ErrorCode::NonFinite, "non-finite value in output head");
  return out;
}

inline Eigen::MatrixXd forward(const CircuitModel& model, const Eigen::MatrixXd& inputs) {
  return forward(model, inputs, NormMode::Inference);
}

/// Buffers reused across row blocks by `forward_chunked`; allocating fresh
/// matrices per layer costs more than the arithmetic for wide circuits.
struct InferenceWorkspace {
  Eigen::MatrixXd phi;
  Eigen::MatrixXd product;
  std::vector<Eigen::MatrixXd> values;
  std::vector<Eigen::MatrixXd> next;
};

namespace detail {

inline void apply_sum_into(const SumLayer& sum, const Eigen::MatrixXd& input, Eigen::MatrixXd& out) {
  out.noalias() = input * sum.weights.transpose();
  if (sum.bias.size() != 0) out.rowwise() += sum.bias.transpose();
  if (sum.norm.active) {
    const Eigen::VectorXd scale = sum.norm.scale();
    const Eigen::VectorXd shift = sum.norm.shift();
    out = (out.array().rowwise() * scale.transpose().array()).rowwise() + shift.transpose().array();
  }
}

}  // namespace detail

/// Inference forward of `inputs` into `out` using `ws` for intermediates.
inline void forward_into(const CircuitModel& model, const Eigen::MatrixXd& inputs, InferenceWorkspace& ws,
                         Eigen::MatrixXd& out) {
  if (inputs.cols() != model.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "forward: expected " + std::to_string(model.input_dim()) +
                                                  " input columns, got " + std::to_string(inputs.cols()));
  }
  const std::size_t regions = model.leaves.size();
  ws.values.resize(regions);
  for (std::size_t c = 0; c < regions; ++c) {
    detail::leaf_basis_into(model, c, inputs, ws.phi);
    detail::apply_sum_into(model.leaves[c].sum, ws.phi, ws.values[c]);
    detail::check_finite(ws.values[c], -1, c);
  }
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& plan = model.graph.merge_plan[l];
    ws.next.resize(std::max(ws.next.size(), plan.size()));
    for (std::size_t j = 0; j < plan.size(); ++j) {
      const MergeStep& step = plan[j];
      if (step.pass_through()) {
        std::swap(ws.next[j], ws.values[static_cast<std::size_t>(step.left)]);
        continue;
      }
      ws.product = ws.values[static_cast<std::size_t>(step.left)].cwiseProduct(
          ws.values[static_cast<std::size_t>(step.right)]);
      detail::apply_sum_into(model.blocks[l][j], ws.product, ws.next[j]);
      detail::check_finite(ws.next[j], static_cast<long>(l), j);
    }
    // Swapping keeps every buffer's allocation alive for the next level and block.
    for (std::size_t j = 0; j < plan.size(); ++j) std::swap(ws.values[j], ws.next[j]);
  }
  detail::apply_sum_into(model.head, ws.values.front(), out);
  if (!detail::all_finite(out)) throw Error(ErrorCode::NonFinite, "non-finite value in output head");
}

/// Inference forward over a large batch in fixed-size row blocks.
inline Eigen::MatrixXd forward_chunked(const CircuitModel& model, const Eigen::MatrixXd& inputs,
                                       Eigen::Index chunk = 256) {
  require(chunk >= 1, ErrorCode::InvalidArgument, "forward_chunked: chunk must be >= 1");
  Eigen::MatrixXd out(inputs.rows(), model.output_dim());
  InferenceWorkspace ws;
  Eigen::MatrixXd rows, block;
  for (Eigen::Index start = 0; start < inputs.rows(); start += chunk) {
    const Eigen::Index n = std::min(chunk, inputs.rows() - start);
    rows = inputs.middleRows(start, n);
    forward_into(model, rows, ws, block);
    out.middleRows(start, n) = block;
  }
  return out;
}

/// The shallow PCE a folded single-region circuit is equal to: head weights
/// times leaf weights, with the head bias added to the constant term.
inline ShallowPce to_shallow(const CircuitModel& model) {
  require(model.leaves.size() == 1, ErrorCode::InvalidArgument, "to_shallow: model has several regions");
  require(model.folded(), ErrorCode::NotFolded, "to_shallow: fold batch norms first");
  ShallowPce shallow;
  shallow.basis = model.leaves[0].basis;
  shallow.families = model.scope_families(0);
  shallow.weights = model.head.weights * model.leaves[0].sum.weights;
  shallow.weights.col(0) += model.head.bias;
  return shallow;
}

// ---------------------------------------------------------------------------
// Parameter access

struct ParamView {
  std::string name;
  std::span<double> values;
};

namespace detail {
inline std::span<double> span_of(Eigen::MatrixXd& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
inline std::span<double> span_of(Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}
}  // namespace detail

/// Trainable tensors in a fixed order. Two models with equal structure
/// produce aligned views, which is how gradient stores are addressed.
inline std::vector<ParamView> parameter_views(CircuitModel& model) {
  std::vector<ParamView> views;
  auto add_sum = [&](SumLayer& sum, const std::string& prefix) {
    views.push_back({prefix + ".weights", detail::span_of(sum.weights)});
    if (sum.bias.size() != 0) views.push_back({prefix + ".bias", detail::span_of(sum.bias)});
    if (sum.norm.active) {
      views.push_back({prefix + ".bn_scale", detail::span_of(sum.norm.gamma)});
      views.push_back({prefix + ".bn_shift", detail::span_of(sum.norm.beta)});
    }
  };
  for (std::size_t c = 0; c < model.leaves.size(); ++c) {
    add_sum(model.leaves[c].sum, "leaf" + std::to_string(c));
  }
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    for (std::size_t j = 0; j < model.blocks[l].size(); ++j) {
      if (model.graph.merge_plan[l][j].pass_through()) continue;
      add_sum(model.blocks[l][j], "block" + std::to_string(l) + "." + std::to_string(j));
    }
  }
  add_sum(model.head, "head");
  return views;
}

inline std::size_t parameter_count(const CircuitModel& model) {
  auto copy = model;
  std::size_t n = 0;
  for (const auto& view : parameter_views(copy)) n += view.values.size();
  return n;
}

/// Same structure, every trainable value zero.
inline CircuitModel zeros_like(const CircuitModel& model) {
  CircuitModel zero = model;
  for (auto& view : parameter_views(zero)) std::fill(view.values.begin(), view.values.end(), 0.0);
  return zero;
}

}  // namespace deeppce
