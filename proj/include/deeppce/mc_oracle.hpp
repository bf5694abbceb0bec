#pragma once
/**
 * @file mc_oracle.hpp
 * @brief Monte Carlo estimators used to validate the closed-form queries.
 *
 * Every estimator takes a batch function (rows of inputs to rows of outputs)
 * and the input marginals, so it works on circuits and on analytic test
 * functions alike. Runs draw from independent counter-based streams keyed by
 * (seed, query label, run), which makes every estimate reproducible.
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <Eigen/Dense>

#include "deeppce/circuit.hpp"
#include "deeppce/condition.hpp"
#include "deeppce/error.hpp"
#include "deeppce/orthopoly.hpp"
#include "deeppce/rng.hpp"
#include "deeppce/sobol_indices.hpp"

namespace deeppce {

/// Maps a batch of input rows [n x D] to output rows [n x O].
using BatchFunction = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

/// Inference forward of `model`; the model must outlive the function.
inline BatchFunction as_function(const CircuitModel& model) {
  return [&model](const Eigen::MatrixXd& x) { return forward_chunked(model, x); };
}

struct McConfig {
  std::vector<std::size_t> sample_sizes{100'000, 1'000'000, 10'000'000};
  int n_runs = 30;
  std::uint64_t seed = 0;
  Eigen::Index chunk = 16384;

  void validate() const {
    require(!sample_sizes.empty(), ErrorCode::InvalidArgument, "mc: no sample sizes");
    for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
      require(sample_sizes[i] >= 2, ErrorCode::InvalidArgument, "mc: sample sizes must be >= 2");
      require(i == 0 || sample_sizes[i] > sample_sizes[i - 1], ErrorCode::InvalidArgument,
              "mc: sample sizes must be strictly ascending");
    }
    require(n_runs >= 2, ErrorCode::InvalidArgument, "mc: n_runs must be >= 2");
    require(chunk >= 1, ErrorCode::InvalidArgument, "mc: chunk must be >= 1");
  }
};

/// Stream labels keep the estimators' random numbers disjoint.
enum class McStream : std::uint64_t {
  Moments = 0x4D4F4D,
  Nested = 0x4E4553,
  Sweep = 0x535745,
  Sobol = 0x534F42,
  Condition = 0x434F4E,
};

inline CounterRng run_rng(std::uint64_t seed, McStream label, std::uint64_t run) {
  return CounterRng(derive_seed(seed, static_cast<std::uint64_t>(label)), run);
}

/// Streaming mean and co-moment with pairwise chunk merges.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(Eigen::Index outputs)
      : mean_(Eigen::VectorXd::Zero(outputs)), comoment_(Eigen::MatrixXd::Zero(outputs, outputs)) {}

  void add(const Eigen::MatrixXd& rows) {
    if (rows.rows() == 0) return;
    const auto nb = static_cast<double>(rows.rows());
    const Eigen::VectorXd mean_b = rows.colwise().mean().transpose();
    const Eigen::MatrixXd centered = rows.rowwise() - mean_b.transpose();
    Eigen::MatrixXd comoment_b = Eigen::MatrixXd::Zero(rows.cols(), rows.cols());
    comoment_b.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
    comoment_b = comoment_b.selfadjointView<Eigen::Lower>();
    merge(nb, mean_b, comoment_b);
  }

  void merge(const MomentAccumulator& other) { merge(static_cast<double>(other.count_), other.mean_, other.comoment_); }

  std::size_t count() const noexcept { return count_; }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }

  /// Unbiased sample covariance (n - 1 denominator).
  Eigen::MatrixXd covariance() const {
    require(count_ >= 2, ErrorCode::InvalidArgument, "mc covariance needs at least 2 samples");
    return comoment_ / static_cast<double>(count_ - 1);
  }

 private:
  void merge(double nb, const Eigen::VectorXd& mean_b, const Eigen::MatrixXd& comoment_b) {
    const double na = static_cast<double>(count_);
    const double n = na + nb;
    const Eigen::VectorXd delta = mean_b - mean_;
    mean_ += delta * (nb / n);
    comoment_ += comoment_b + delta * delta.transpose() * (na * nb / n);
    count_ += static_cast<std::size_t>(nb);
  }

  std::size_t count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd comoment_;
};

/// Fills `rows` with independent draws from the marginals; variables in
/// `fixed` are set to their values instead.
inline void sample_inputs(Eigen::MatrixXd& rows, std::span<const PolyFamily> marginals, CounterRng& rng,
                          const ConditionSpec* fixed = nullptr) {
  const auto dims = static_cast<Eigen::Index>(marginals.size());
  require(rows.cols() == dims, ErrorCode::DimensionMismatch, "sample_inputs: column count != marginals");
  std::vector<double> fixed_value(marginals.size(), 0.0);
  std::vector<char> is_fixed(marginals.size(), 0);
  if (fixed != nullptr) {
    fixed->check_range(static_cast<int>(dims));
    for (const auto& [var, value] : fixed->fixed) {
      is_fixed[static_cast<std::size_t>(var)] = 1;
      fixed_value[static_cast<std::size_t>(var)] = value;
    }
  }
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index d = 0; d < dims; ++d) {
      const auto k = static_cast<std::size_t>(d);
      rows(i, d) = is_fixed[k] != 0 ? fixed_value[k] : sample_marginal(marginals[k], rng);
    }
  }
}

/// Mean and covariance of f over n draws in one pass.
inline MomentAccumulator mc_moments_run(const BatchFunction& f, std::span<const PolyFamily> marginals,
                                        std::size_t n, CounterRng& rng, const ConditionSpec* fixed = nullptr,
                                        Eigen::Index chunk = 16384) {
  require(n >= 1, ErrorCode::InvalidArgument, "mc: need at least one sample");
  Eigen::MatrixXd rows;
  std::optional<MomentAccumulator> acc;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(chunk)) {
    const auto m = static_cast<Eigen::Index>(std::min<std::size_t>(static_cast<std::size_t>(chunk), n - start));
    rows.resize(m, static_cast<Eigen::Index>(marginals.size()));
    sample_inputs(rows, marginals, rng, fixed);
    const Eigen::MatrixXd y = f(rows);
    if (!acc) acc.emplace(y.cols());
    acc->add(y);
  }
  return *acc;
}

/// Per-run estimates of one query. Entry k of `runs` is the estimate from run k.
struct McRuns {
  std::vector<Eigen::MatrixXd> runs;

  Eigen::MatrixXd average() const {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(runs.front().rows(), runs.front().cols());
    for (const auto& r : runs) sum += r;
    return sum / static_cast<double>(runs.size());
  }

  /// Standard deviation across runs divided by sqrt(runs).
  Eigen::MatrixXd std_error() const {
    const Eigen::MatrixXd avg = average();
    Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(avg.rows(), avg.cols());
    for (const auto& r : runs) ss += (r - avg).array().square().matrix();
    const double n = static_cast<double>(runs.size());
    return (ss / (n - 1.0) / n).array().sqrt().matrix();
  }

  /// Values of entry (i, j) across runs.
  std::vector<double> entry(Eigen::Index i, Eigen::Index j = 0) const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r(i, j));
    return v;
  }
};

struct McMomentRuns {
  McRuns mean;        // [O x 1] per run
  McRuns covariance;  // [O x O] per run
};

/// Mean and covariance estimates (optionally conditional on `fixed`), n samples per run.
inline McMomentRuns mc_moments(const BatchFunction& f, std::span<const PolyFamily> marginals, std::size_t n,
                               int n_runs, std::uint64_t seed, const ConditionSpec* fixed = nullptr,
                               Eigen::Index chunk = 16384) {
  require(n >= 2, ErrorCode::InvalidArgument, "mc_moments: need n >= 2 for covariance");
  require(n_runs >= 1, ErrorCode::InvalidArgument, "mc_moments: need at least one run");
  McMomentRuns out;
  const McStream label = fixed != nullptr ? McStream::Condition : McStream::Moments;
  for (int r = 0; r < n_runs; ++r) {
    CounterRng rng = run_rng(seed, label, static_cast<std::uint64_t>(r));
    const MomentAccumulator acc = mc_moments_run(f, marginals, n, rng, fixed, chunk);
    out.mean.runs.push_back(acc.mean());
    out.covariance.runs.push_back(acc.covariance());
  }
  return out;
}

inline McRuns mc_mean(const BatchFunction& f, std::span<const PolyFamily> marginals, std::size_t n, int n_runs,
                      std::uint64_t seed) {
  return mc_moments(f, marginals, n, n_runs, seed).mean;
}

inline McRuns mc_covariance(const BatchFunction& f, std::span<const PolyFamily> marginals, std::size_t n,
                            int n_runs, std::uint64_t seed) {
  return mc_moments(f, marginals, n, n_runs, seed).covariance;
}

inline McRuns mc_conditional_mean(const BatchFunction& f, std::span<const PolyFamily> marginals,
                                  const ConditionSpec& spec, std::size_t n, int n_runs, std::uint64_t seed) {
  return mc_moments(f, marginals, n, n_runs, seed, &spec).mean;
}

inline McRuns mc_conditional_covariance(const BatchFunction& f, std::span<const PolyFamily> marginals,
                                        const ConditionSpec& spec, std::size_t n, int n_runs,
                                        std::uint64_t seed) {
  return mc_moments(f, marginals, n, n_runs, seed, &spec).covariance;
}

struct McNestedRuns {
  McRuns expected_conditional_covariance;       // mean over outer draws of inner covariances
  McRuns covariance_of_conditional_expectation;  // outer covariance of inner means, bias corrected
};

/// Nested estimator over X_I: n_outer draws of x_I, each with n_inner draws
/// of the remaining inputs. The outer covariance of the inner means carries a
/// bias of E[cov(Y | X_I)] / n_inner, which is subtracted.
inline McNestedRuns mc_nested(const BatchFunction& f, std::span<const PolyFamily> marginals, const IndexSet& set,
                              std::size_t n_outer, std::size_t n_inner, int n_runs, std::uint64_t seed,
                              Eigen::Index chunk = 16384) {
  require(n_outer >= 2 && n_inner >= 2, ErrorCode::InvalidArgument, "mc_nested: need n_outer, n_inner >= 2");
  require(n_runs >= 1, ErrorCode::InvalidArgument, "mc_nested: need at least one run");
  set.check_range(static_cast<int>(marginals.size()));
  McNestedRuns out;
  for (int r = 0; r < n_runs; ++r) {
    CounterRng rng = run_rng(seed, McStream::Nested, static_cast<std::uint64_t>(r));
    std::optional<MomentAccumulator> outer;
    std::optional<Eigen::MatrixXd> inner_cov_sum;
    for (std::size_t k = 0; k < n_outer; ++k) {
      ConditionSpec spec;
      for (int var : set) spec.fixed[var] = sample_marginal(marginals[static_cast<std::size_t>(var)], rng);
      const MomentAccumulator inner = mc_moments_run(f, marginals, n_inner, rng, &spec, chunk);
      if (!outer) {
        outer.emplace(inner.mean().size());
        inner_cov_sum = Eigen::MatrixXd::Zero(inner.mean().size(), inner.mean().size());
      }
      outer->add(inner.mean().transpose());
      *inner_cov_sum += inner.covariance();
    }
    const Eigen::MatrixXd expected = *inner_cov_sum / static_cast<double>(n_outer);
    out.expected_conditional_covariance.runs.push_back(expected);
    out.covariance_of_conditional_expectation.runs.push_back(outer->covariance() -
                                                             expected / static_cast<double>(n_inner));
  }
  return out;
}

inline McRuns mc_expected_conditional_covariance(const BatchFunction& f, std::span<const PolyFamily> marginals,
                                                 const IndexSet& set, std::size_t n_outer, std::size_t n_inner,
                                                 int n_runs, std::uint64_t seed) {
  return mc_nested(f, marginals, set, n_outer, n_inner, n_runs, seed).expected_conditional_covariance;
}

inline McRuns mc_covariance_of_conditional_expectation(const BatchFunction& f,
                                                       std::span<const PolyFamily> marginals, const IndexSet& set,
                                                       std::size_t n_outer, std::size_t n_inner, int n_runs,
                                                       std::uint64_t seed) {
  return mc_nested(f, marginals, set, n_outer, n_inner, n_runs, seed).covariance_of_conditional_expectation;
}

// ---------------------------------------------------------------------------
// Tests and convergence

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  double sample_mean = 0.0;
  double std_error = 0.0;
};

/// Two-sided one-sample t-test of the run values against `hypothesized`.
inline TTestResult one_sample_ttest(std::span<const double> runs, double hypothesized) {
  require(runs.size() >= 2, ErrorCode::InvalidArgument, "t-test needs at least 2 runs");
  const double n = static_cast<double>(runs.size());
  TTestResult result;
  result.sample_mean = std::accumulate(runs.begin(), runs.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : runs) ss += (v - result.sample_mean) * (v - result.sample_mean);
  result.std_error = std::sqrt(ss / (n - 1.0) / n);
  const double offset = result.sample_mean - hypothesized;
  if (result.std_error == 0.0) {
    if (offset == 0.0) return result;
    throw Error(ErrorCode::Degenerate, "t-test: runs have zero variance but differ from the hypothesized value");
  }
  result.t = offset / result.std_error;
  const boost::math::students_t dist(n - 1.0);
  result.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(result.t)));
  return result;
}

inline TTestResult one_sample_ttest(const std::vector<double>& runs, double hypothesized) {
  return one_sample_ttest(std::span<const double>(runs), hypothesized);
}

struct ConvergenceSweep {
  std::vector<std::size_t> sample_sizes;
  std::vector<double> spread;  // run-to-run std of the mean estimate, averaged over outputs
  double slope = 0.0;          // least-squares slope of log(spread) against log(size)
};

inline ConvergenceSweep mc_convergence_sweep(const BatchFunction& f, std::span<const PolyFamily> marginals,
                                             const McConfig& cfg) {
  cfg.validate();
  ConvergenceSweep sweep;
  sweep.sample_sizes = cfg.sample_sizes;
  for (std::size_t s = 0; s < cfg.sample_sizes.size(); ++s) {
    McRuns means;
    for (int r = 0; r < cfg.n_runs; ++r) {
      CounterRng rng = run_rng(derive_seed(cfg.seed, s), McStream::Sweep, static_cast<std::uint64_t>(r));
      means.runs.push_back(mc_moments_run(f, marginals, cfg.sample_sizes[s], rng, nullptr, cfg.chunk).mean());
    }
    const double runs = static_cast<double>(cfg.n_runs);
    sweep.spread.push_back(means.std_error().mean() * std::sqrt(runs));
  }
  const auto k = static_cast<double>(sweep.spread.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t s = 0; s < sweep.spread.size(); ++s) {
    const double x = std::log(static_cast<double>(sweep.sample_sizes[s]));
    const double y = std::log(sweep.spread[s]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = k * sxx - sx * sx;
  sweep.slope = denom != 0.0 ? (k * sxy - sx * sy) / denom : 0.0;
  return sweep;
}

// ---------------------------------------------------------------------------
// Pick-and-freeze first-order indices

struct McSobolResult {
  SobolIndices indices;
  Eigen::MatrixXd std_error;  // bootstrap over chunk statistics, [O x D]
  std::size_t base_samples = 0;
  std::size_t evaluations = 0;
  double seconds = 0.0;
};

/// First-order indices by pick-and-freeze (Saltelli 2010 estimator):
/// V_i = mean(f(B) * (f(A_B^i) - f(A))), where A_B^i is A with column i
/// taken from B. Costs n * (D + 2) evaluations. Outputs are shifted by a
/// pilot mean first, which leaves the estimator unbiased and reduces its
/// variance when the mean is large.
inline McSobolResult mc_sobol_on_function(const BatchFunction& f, std::span<const PolyFamily> marginals,
                                          std::size_t n, std::uint64_t seed, Eigen::Index chunk = 4096,
                                          int bootstrap_reps = 200) {
  require(n >= 2, ErrorCode::InvalidArgument, "mc_sobol: need n >= 2");
  const auto start_time = std::chrono::steady_clock::now();
  const auto dims = static_cast<Eigen::Index>(marginals.size());
  chunk = std::max<Eigen::Index>(1, std::min<Eigen::Index>(chunk, static_cast<Eigen::Index>(n / 32)));

  struct ChunkStats {
    double count = 0;
    Eigen::MatrixXd cross;    // [O x D]
    Eigen::VectorXd sum;      // over f(A) and f(B)
    Eigen::VectorXd sum_sq;
  };
  std::vector<ChunkStats> stats;
  CounterRng rng = run_rng(seed, McStream::Sobol, 0);
  Eigen::MatrixXd a, b, ab;
  Eigen::VectorXd shift;
  std::size_t evaluations = 0;
  for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(chunk)) {
    const auto m = static_cast<Eigen::Index>(std::min<std::size_t>(static_cast<std::size_t>(chunk), n - begin));
    a.resize(m, dims);
    b.resize(m, dims);
    sample_inputs(a, marginals, rng);
    sample_inputs(b, marginals, rng);
    Eigen::MatrixXd ya = f(a);
    Eigen::MatrixXd yb = f(b);
    evaluations += 2 * static_cast<std::size_t>(m);
    if (shift.size() == 0) shift = ya.colwise().mean().transpose();
    ya.rowwise() -= shift.transpose();
    yb.rowwise() -= shift.transpose();
    ChunkStats cs;
    cs.count = static_cast<double>(m);
    cs.cross.resize(ya.cols(), dims);
    cs.sum = ya.colwise().sum().transpose() + yb.colwise().sum().transpose();
    cs.sum_sq = ya.array().square().colwise().sum().transpose() + yb.array().square().colwise().sum().transpose();
    for (Eigen::Index i = 0; i < dims; ++i) {
      ab = a;
      ab.col(i) = b.col(i);
      Eigen::MatrixXd yab = f(ab);
      evaluations += static_cast<std::size_t>(m);
      yab.rowwise() -= shift.transpose();
      cs.cross.col(i) = (yb.array() * (yab - ya).array()).colwise().sum().transpose();
    }
    stats.push_back(std::move(cs));
  }

  auto estimate = [&](const std::vector<std::size_t>& pick) {
    double count = 0;
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(stats.front().cross.rows(), dims);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(cross.rows());
    Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(cross.rows());
    for (std::size_t k : pick) {
      count += stats[k].count;
      cross += stats[k].cross;
      sum += stats[k].sum;
      sum_sq += stats[k].sum_sq;
    }
    const Eigen::VectorXd mean = sum / (2.0 * count);
    const Eigen::VectorXd var =
        ((sum_sq / (2.0 * count)).array() - mean.array().square()) * (2.0 * count / (2.0 * count - 1.0));
    return make_sobol_indices(cross / count, var, 0.0);
  };

  std::vector<std::size_t> all(stats.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  McSobolResult result;
  result.indices = estimate(all);
  result.std_error = Eigen::MatrixXd::Zero(result.indices.first_order.rows(), dims);
  if (stats.size() >= 2 && bootstrap_reps >= 2) {
    CounterRng boot = run_rng(seed, McStream::Sobol, 1);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(result.std_error.rows(), dims);
    Eigen::MatrixXd sum_sq = sum;
    std::vector<std::size_t> pick(stats.size());
    for (int rep = 0; rep < bootstrap_reps; ++rep) {
      for (auto& p : pick) p = static_cast<std::size_t>(boot.below(stats.size()));
      const Eigen::MatrixXd s = estimate(pick).first_order;
      sum += s;
      sum_sq += s.array().square().matrix();
    }
    const double reps = bootstrap_reps;
    result.std_error =
        ((sum_sq / reps).array() - (sum / reps).array().square()).max(0.0).sqrt().matrix() *
        std::sqrt(reps / (reps - 1.0));
  }
  result.base_samples = n;
  result.evaluations = evaluations;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return result;
}

// ---------------------------------------------------------------------------
// Rank correlation

/// Ranks starting at 1; ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorCode::DimensionMismatch,
          "spearman: need two equal-length samples of size >= 2");
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double denom = std::sqrt(xc.squaredNorm() * yc.squaredNorm());
  require(denom > 0.0, ErrorCode::Degenerate, "spearman: a sample is constant");
  return xc.dot(yc) / denom;
}

}  // namespace deeppce
