// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Optional arguments select criteria by number.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/math/quadrature/sinh_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/factorials.hpp>
#include <boost/math/special_functions/hermite.hpp>
#include <boost/math/special_functions/legendre.hpp>

#include "deeppce.hpp"
#include "quad_oracle.hpp"

using namespace deeppce;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double max_abs(const Eigen::MatrixXd& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

CircuitModel random_model(int d, int o, int scope, int k, int width, std::uint64_t seed,
                          std::vector<PolyFamily> marginals = {}) {
  CircuitConfig c;
  c.d_in = d;
  c.d_out = o;
  c.scope_size = scope;
  c.max_order = k;
  c.width = width;
  c.seed = seed;
  c.batch_norm = false;
  c.marginals = std::move(marginals);
  CircuitModel m = build(c);
  TrainConfig t;
  t.init_decay = 0.7;
  init_weights(m, t, seed * 7 + 1);
  CounterRng rng(seed);
  for (auto& layer : m.blocks)
    for (auto& s : layer)
      for (Eigen::Index i = 0; i < s.bias.size(); ++i) s.bias[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < m.head.bias.size(); ++i) m.head.bias[i] = rng.normal();
  return m;
}

Eigen::MatrixXd sample_rows(const std::vector<PolyFamily>& fam, Eigen::Index n, std::uint64_t seed) {
  CounterRng rng(seed);
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(fam.size()));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index d = 0; d < x.cols(); ++d) x(i, d) = sample_marginal(fam[static_cast<std::size_t>(d)], rng);
  return x;
}

quad_oracle::Fn as_fn(const CircuitModel& m) {
  return [&m](const std::vector<double>& x) {
    Eigen::MatrixXd row(1, static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = x[i];
    return Eigen::VectorXd(forward(m, row).row(0).transpose());
  };
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------

Outcome orthonormality() {
  const auto t0 = Clock::now();
  constexpr int kDeg = 8;
  double worst_rule = 0.0, worst_boost = 0.0, worst_eval = 0.0;
  for (const PolyFamily& fam : {PolyFamily::hermite(), PolyFamily::legendre()}) {
    const QuadratureRule rule = quadrature(fam, kDeg + 1);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(kDeg + 1, kDeg + 1);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const std::vector<double> p = eval_basis(fam, kDeg, rule.nodes[q]);
      for (int i = 0; i <= kDeg; ++i)
        for (int j = 0; j <= kDeg; ++j) gram(i, j) += rule.weights[q] * p[i] * p[j];
    }
    worst_rule = std::max(worst_rule, max_abs(gram - Eigen::MatrixXd::Identity(kDeg + 1, kDeg + 1)));

    // Independent reference: Boost polynomials under adaptive quadrature.
    const bool hermite = fam.kind() == PolyKind::HermiteStandardNormal;
    auto reference = [&](int n, double x) {
      if (hermite) {
        return std::pow(2.0, -0.5 * n) * boost::math::hermite(static_cast<unsigned>(n), x / std::sqrt(2.0)) /
               std::sqrt(boost::math::factorial<double>(static_cast<unsigned>(n)));
      }
      return std::sqrt(2.0 * n + 1.0) * boost::math::legendre_p(n, x);
    };
    for (double x : {-2.5, -0.7, 0.0, 0.3, 0.99, 1.8}) {
      if (!hermite && std::abs(x) > 1.0) continue;
      const std::vector<double> p = eval_basis(fam, kDeg, x);
      for (int n = 0; n <= kDeg; ++n)
        worst_eval = std::max(worst_eval, std::abs(p[n] - reference(n, x)) / std::max(1.0, std::abs(p[n])));
    }
    for (int i = 0; i <= kDeg; ++i) {
      for (int j = i; j <= kDeg; ++j) {
        double ip;
        if (hermite) {
          boost::math::quadrature::sinh_sinh<double> integrator;
          ip = integrator.integrate([&](double x) {
            if (std::abs(x) > 40.0) return 0.0;
            return reference(i, x) * reference(j, x) * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
          });
        } else {
          boost::math::quadrature::tanh_sinh<double> integrator;
          ip = integrator.integrate([&](double x) { return 0.5 * reference(i, x) * reference(j, x); }, -1.0, 1.0);
        }
        worst_boost = std::max(worst_boost, std::abs(ip - (i == j ? 1.0 : 0.0)));
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_rule < 1e-10 && worst_boost < 1e-10 && worst_eval < 1e-10 && secs < 1.0;
  return {pass, "max |<p_i,p_j> - delta_ij| " + fmt(worst_rule) + " (Gauss), " + fmt(worst_boost) +
                    " (adaptive reference); basis vs reference " + fmt(worst_eval) + "; " + fmt(secs) + " s"};
}

Outcome deep_shallow() {
  double worst = 0.0;
  const std::vector<PolyFamily> pool{PolyFamily::uniform(-1, 2), PolyFamily::hermite(), PolyFamily::normal(1, 2)};
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    const int d = 1 + static_cast<int>(draw % 3);
    const int k = 1 + static_cast<int>((draw / 3) % 3);
    std::vector<PolyFamily> fam(pool.begin(), pool.begin() + d);
    const CircuitModel m = random_model(d, 2, d, k, 3, draw + 1, fam);
    const ShallowPce s = to_shallow(m);
    const Eigen::MatrixXd x = sample_rows(fam, 32, draw + 500);
    const ConditionSpec spec{{{0, 0.5}}};
    worst = std::max({worst, max_abs(forward(m, x) - predict_batch(s, x)), max_abs(mean(m) - mean(s)),
                      max_abs(variance(m) - variance(s)), max_abs(covariance(m) - covariance(s)),
                      max_abs(conditional_mean(m, spec) - conditional_mean(s, spec)),
                      max_abs(conditional_covariance(m, spec) - conditional_covariance(s, spec)),
                      max_abs(sobol_first_order(m).first_order - sobol_first_order(s).first_order)});
  }
  return {worst < 1e-10, "100 draws, max abs difference " + fmt(worst)};
}

// Shared model and conditioning for the moment checks.
struct MomentSetup {
  CircuitModel model;
  IndexSet set{0, 1, 2, 4};
  ConditionSpec spec;
};

// The training initialization (batch norm near 1 + 0.1 z, then folded). A raw
// random init multiplies eight Gaussian-driven factors and its output
// kurtosis runs into the hundreds, which breaks the normality the t-test needs.
MomentSetup moment_setup() {
  CircuitConfig c;
  c.d_in = 8;
  c.d_out = 8;
  c.scope_size = 2;
  c.max_order = 3;
  c.width = 6;
  c.seed = 20261016;
  c.batch_norm = true;
  CircuitModel m = build(c);
  TrainConfig t;
  t.init_norm_scale = 0.1;
  t.init_norm_shift = 1.0;
  init_weights(m, t, 20261016);
  calibrate_batchnorm(m, sample_rows(m.marginals(), 4096, 9));
  MomentSetup s{folded_copy(m)};
  CounterRng rng(77);
  for (int i : s.set) s.spec.fixed[i] = rng.uniform(-2.0, 2.0);
  return s;
}

std::optional<McNestedRuns> g_nested;

const McNestedRuns& nested_runs(const MomentSetup& s) {
  if (!g_nested) g_nested = mc_nested(as_function(s.model), s.model.marginals(), s.set, 1000, 1000, 30, 31);
  return *g_nested;
}

Outcome moment_ttests() {
  const auto t0 = Clock::now();
  const MomentSetup s = moment_setup();
  const CircuitModel& m = s.model;
  const BatchFunction f = as_function(m);
  const auto& fam = m.marginals();
  constexpr std::size_t kSamples = 1'000'000;
  constexpr int kRuns = 30;
  const McMomentRuns plain = mc_moments(f, fam, kSamples, kRuns, 11);
  const McMomentRuns cond = mc_moments(f, fam, kSamples, kRuns, 12, &s.spec);
  const McNestedRuns& nested = nested_runs(s);

  struct Query {
    const char* name;
    Eigen::VectorXd exact;
    std::function<double(const Eigen::MatrixXd&, int)> pick;
    const McRuns* runs;
  };
  auto entry = [](const Eigen::MatrixXd& r, int o) { return r(o, 0); };
  auto diag = [](const Eigen::MatrixXd& r, int o) { return r(o, o); };
  const std::vector<Query> queries{
      {"mean", mean(m), entry, &plain.mean},
      {"cov", covariance(m).diagonal(), diag, &plain.covariance},
      {"cond-mean", conditional_mean(m, s.spec), entry, &cond.mean},
      {"cond-cov", conditional_covariance(m, s.spec).diagonal(), diag, &cond.covariance},
      {"exp-cond-cov", expected_conditional_covariance(m, s.set).diagonal(), diag,
       &nested.expected_conditional_covariance},
  };
  double min_p = 1.0, max_p = 0.0;
  std::string where;
  int failures = 0;
  for (const Query& q : queries) {
    for (int o = 0; o < m.output_dim(); ++o) {
      std::vector<double> values;
      for (const auto& r : q.runs->runs) values.push_back(q.pick(r, o));
      const TTestResult t = one_sample_ttest(values, q.exact[o]);
      if (t.p_value <= 0.01) ++failures;
      if (t.p_value < min_p) {
        min_p = t.p_value;
        where = std::string(q.name) + " y_" + std::to_string(o + 1);
      }
      max_p = std::max(max_p, t.p_value);
    }
  }
  return {failures == 0, "40 t-tests, p in [" + fmt(min_p) + ", " + fmt(max_p) + "], min at " + where + ", " +
                             std::to_string(failures) + " with p <= 0.01; " + fmt(seconds_since(t0)) + " s"};
}

Outcome total_covariance() {
  const MomentSetup s = moment_setup();
  const CircuitModel& m = s.model;
  const auto& fam = m.marginals();
  if (s.set.size() != 4 || s.spec.fixed.size() != 4) return {false, "conditioning set not initialized"};
  const Eigen::MatrixXd cov = covariance(m);
  const Eigen::MatrixXd cce = covariance_of_conditional_expectation(m, s.set);
  const Eigen::MatrixXd ecc = expected_conditional_covariance(m, s.set);

  // E over X_I of the exact conditional covariance by tensor Gauss quadrature.
  std::vector<QuadratureRule> rules;
  for (int i : s.set) rules.push_back(quadrature(fam[static_cast<std::size_t>(i)], 8));
  Eigen::MatrixXd ecc_quad = Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
  std::vector<std::size_t> idx(rules.size(), 0);
  while (true) {
    ConditionSpec point;
    double w = 1.0;
    for (std::size_t k = 0; k < rules.size(); ++k) {
      point.fixed[s.set.indices()[k]] = rules[k].nodes[idx[k]];
      w *= rules[k].weights[idx[k]];
    }
    ecc_quad += w * conditional_covariance(m, point);
    std::size_t k = 0;
    for (; k < idx.size(); ++k) {
      if (++idx[k] < rules[k].size()) break;
      idx[k] = 0;
    }
    if (k == idx.size()) break;
  }
  const double scale = std::max(1.0, max_abs(cov));
  const double identity = max_abs(cov - ecc_quad - cce) / scale;
  const double ecc_gap = max_abs(ecc - ecc_quad) / scale;

  const McNestedRuns& nested = nested_runs(s);
  double worst_z = 0.0;
  auto z_score = [&](const McRuns& runs, const Eigen::MatrixXd& exact) {
    const Eigen::MatrixXd avg = runs.average();
    const Eigen::MatrixXd se = runs.std_error();
    for (Eigen::Index i = 0; i < exact.size(); ++i)
      worst_z = std::max(worst_z, std::abs(avg.data()[i] - exact.data()[i]) / se.data()[i]);
  };
  z_score(nested.expected_conditional_covariance, ecc_quad);
  z_score(nested.covariance_of_conditional_expectation, cce);
  const bool pass = identity < 1e-10 && ecc_gap < 1e-10 && worst_z < 4.0;
  return {pass, "|cov - E[cov|X_I] - cov(E[.|X_I])| / max|cov| = " + fmt(identity) + " (quadrature E[cov|X_I], scale max(1, max|cov|) = " + fmt(scale) + "), " +
                    "library vs quadrature " + fmt(ecc_gap) + "; nested MC max |z| " + fmt(worst_z)};
}

double max_fd_relative_error(CircuitModel model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, NormMode mode,
                             int samples, std::uint64_t seed) {
  const GradientResult g = backward(model, x, y, mode);
  CircuitModel grad = g.gradient;
  auto params = parameter_views(model);
  auto grads = parameter_views(grad);
  CounterRng rng(seed);
  const double h = 1e-4;
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const auto k = static_cast<std::size_t>(rng.below(params.size()));
    const auto i = static_cast<std::size_t>(rng.below(params[k].values.size()));
    double& theta = params[k].values[i];
    const double saved = theta;
    theta = saved + h;
    const double up = loss_mse(forward(model, x, mode), y);
    theta = saved - h;
    const double down = loss_mse(forward(model, x, mode), y);
    theta = saved;
    const double fd = (up - down) / (2.0 * h);
    const double an = grads[k].values[i];
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
  }
  return worst;
}

void jitter_norms(CircuitModel& m, std::uint64_t seed) {
  CounterRng rng(seed);
  auto jitter = [&](BatchNorm& n) {
    if (!n.active) return;
    for (Eigen::Index i = 0; i < n.gamma.size(); ++i) {
      n.gamma[i] = 1.0 + 0.3 * rng.normal();
      n.beta[i] = 0.3 * rng.normal();
    }
  };
  for (auto& leaf : m.leaves) jitter(leaf.sum.norm);
  for (auto& layer : m.blocks)
    for (auto& s : layer) jitter(s.norm);
}

Outcome gradients() {
  const std::vector<PolyFamily> fam(4, PolyFamily::hermite());
  const Eigen::MatrixXd x = sample_rows(fam, 16, 1);
  const Eigen::MatrixXd y = sample_rows(std::vector<PolyFamily>(2, PolyFamily::hermite()), 16, 2);
  CircuitConfig c;
  c.d_in = 4;
  c.d_out = 2;
  c.scope_size = 1;
  c.max_order = 2;
  c.width = 3;
  c.seed = 3;
  c.batch_norm = true;
  CircuitModel with_norm = build(c);
  init_weights(with_norm, TrainConfig{}, 4);
  jitter_norms(with_norm, 5);
  c.batch_norm = false;
  CircuitModel plain = build(c);
  init_weights(plain, TrainConfig{}, 6);
  const double e_norm = max_fd_relative_error(with_norm, x, y, NormMode::Training, 100, 7);
  const double e_plain = max_fd_relative_error(plain, x, y, NormMode::Inference, 100, 8);
  return {std::max(e_norm, e_plain) < 1e-5,
          "100 parameters each, max relative error " + fmt(e_norm) + " (batch norm) " + fmt(e_plain) + " (plain)"};
}

Outcome batchnorm_fold() {
  std::vector<PolyFamily> fam{PolyFamily::hermite(), PolyFamily::uniform(0, 1), PolyFamily::normal(-1, 0.5),
                              PolyFamily::legendre()};
  CircuitModel m = random_model(4, 2, 2, 2, 3, 9, fam);
  for (auto& leaf : m.leaves) leaf.sum.norm.active = true;
  for (auto& layer : m.blocks)
    for (auto& s : layer)
      if (s.weights.size()) s.norm.active = true;
  jitter_norms(m, 10);
  calibrate_batchnorm(m, sample_rows(fam, 512, 11));
  const CircuitModel f = folded_copy(m);
  const Eigen::MatrixXd x = sample_rows(fam, 256, 12);
  const double forward_gap = max_abs(forward(m, x) - forward(f, x));

  // Reference: quadrature over the unfolded inference-mode forward.
  const auto fn = as_fn(m);
  const ConditionSpec spec{{{0, 0.4}, {2, -1.2}}};
  const IndexSet set{1, 3};
  const Eigen::MatrixXd q_cov = quad_oracle::covariance(fn, fam, {}, 5);
  const Eigen::MatrixXd q_cce = quad_oracle::covariance_of_conditional_expectation(fn, fam, set, 5);
  Eigen::MatrixXd q_sobol(2, 4);
  for (int i = 0; i < 4; ++i) {
    q_sobol.col(i) = quad_oracle::covariance_of_conditional_expectation(fn, fam, IndexSet{i}, 5).diagonal().cwiseQuotient(
        q_cov.diagonal());
  }
  const double query_gap =
      std::max({max_abs(mean(f) - quad_oracle::expectation(fn, fam, {}, 5)), max_abs(covariance(f) - q_cov),
                max_abs(conditional_mean(f, spec) - quad_oracle::expectation(fn, fam, spec.fixed, 5)),
                max_abs(conditional_covariance(f, spec) - quad_oracle::covariance(fn, fam, spec.fixed, 5)),
                max_abs(covariance_of_conditional_expectation(f, set) - q_cce),
                max_abs(expected_conditional_covariance(f, set) - (q_cov - q_cce)),
                max_abs(sobol_first_order(f).first_order - q_sobol)});
  return {forward_gap < 1e-9 && query_gap < 1e-8,
          "forward " + fmt(forward_gap) + ", queries vs unfolded quadrature " + fmt(query_gap)};
}

// ---------------------------------------------------------------------------
// 100D benchmark

struct Bench {
  CircuitModel model;  // folded
  double train_seconds = 0.0;
  double val_relative_mse = 0.0;
};

std::optional<Bench> g_bench;

const Bench& bench() {
  if (g_bench) return *g_bench;
  const auto t0 = Clock::now();
  const Dataset all = gen_100d(10000, 1);
  const auto parts = split(all, {0.8, 0.2}, 2);
  CircuitConfig c;
  c.d_in = 100;
  c.d_out = 1;
  c.scope_size = 1;
  c.max_order = 3;
  c.width = 40;
  c.seed = 3;
  c.batch_norm = true;
  c.marginals = marginals_100d();
  TrainConfig t;
  t.max_epochs = 40;
  t.early_stop_patience = 10;
  t.init_norm_scale = 0.1;
  t.init_norm_shift = 1.0;
  t.seed = 5;
  const TrainReport report = train(build(c), t, parts[0], parts[1]);
  g_bench = Bench{folded_copy(report.best_model), seconds_since(t0),
                  report.restarts[static_cast<std::size_t>(report.best_restart)].best_val_relative_mse};
  return *g_bench;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

Outcome benchmark_100d() {
  const auto t0 = Clock::now();
  const Bench& b = bench();
  const SobolIndices s = sobol_first_order(b.model);
  const auto marginals = marginals_100d();
  const McSobolResult oracle = mc_sobol_on_function(f_100d_batch, marginals, 1'000'000, 41);
  std::vector<double> model_idx(100), oracle_idx(100);
  for (int i = 0; i < 100; ++i) {
    model_idx[static_cast<std::size_t>(i)] = s.first_order(0, i);
    oracle_idx[static_cast<std::size_t>(i)] = oracle.indices.first_order(0, i);
  }
  const double rho = spearman(model_idx, oracle_idx);
  const int model_top = argmax(model_idx);
  const int oracle_top = argmax(oracle_idx);
  const double secs = seconds_since(t0);
  const bool x20_first = model_top == 19;
  const bool pass = x20_first && rho >= 0.9 && secs <= 1800.0;
  return {pass, "model ranks X_" + std::to_string(model_top + 1) + " first (X_20 first: " +
                    (x20_first ? "yes" : "no") + "); oracle ranks X_" + std::to_string(oracle_top + 1) +
                    " first, S_20 " + fmt(oracle_idx[19]) + " vs S_" + std::to_string(oracle_top + 1) + " " +
                    fmt(oracle_idx[static_cast<std::size_t>(oracle_top)]) + "; Spearman " + fmt(rho) +
                    "; val rel MSE " + fmt(b.val_relative_mse) + "; train " + fmt(b.train_seconds) + " s, total " +
                    fmt(secs) + " s"};
}

Outcome sobol_speed() {
  const Bench& b = bench();
  const auto t0 = Clock::now();
  const SobolIndices s = sobol_first_order(b.model);
  const double analytic = seconds_since(t0);
  constexpr std::size_t kEvaluations = 10'000'000;
  const McSobolResult mc =
      mc_sobol_on_function(as_function(b.model), b.model.marginals(), kEvaluations / 102, 43);
  const double speedup = mc.seconds / analytic;
  const double gap = max_abs(mc.indices.first_order - s.first_order);
  return {speedup >= 100.0, "analytic " + fmt(analytic) + " s, MC " + fmt(mc.seconds) + " s at " +
                                std::to_string(mc.evaluations) + " evaluations, speedup " + fmt(speedup) +
                                "x; max |S_mc - S_exact| " + fmt(gap)};
}

// ---------------------------------------------------------------------------

Outcome planted_recovery() {
  const std::vector<PolyFamily> fam(3, PolyFamily::hermite());
  ShallowPce truth{generate_indices(3, 3, 1.0), fam, Eigen::MatrixXd()};
  CounterRng rng(11);
  truth.weights.resize(2, static_cast<Eigen::Index>(truth.basis.size()));
  for (Eigen::Index i = 0; i < truth.weights.size(); ++i) truth.weights.data()[i] = rng.normal();
  const Eigen::MatrixXd x = sample_rows(fam, static_cast<Eigen::Index>(2 * truth.basis.size()), 12);
  const ShallowPce fit = fit_least_squares(truth.basis, fam, x, predict_batch(truth, x));
  const double coef_gap = max_abs(fit.weights - truth.weights);

  const PlantedProblem planted = gen_planted(1000, 4);
  const auto parts = split(planted.data, {0.8, 0.2}, 1);
  const CircuitModel prototype = build(planted.model.config);
  TrainConfig t;
  t.learning_rate = 0.01;
  t.max_epochs = 400;
  t.early_stop_patience = 100;
  double best = std::numeric_limits<double>::infinity();
  int used = 0;
  for (int r = 0; r < 20 && best >= 1e-3; ++r) {
    t.seed = static_cast<std::uint64_t>(r);
    const TrainReport report = train(prototype, t, parts[0], parts[1]);
    best = std::min(best, report.restarts[0].best_val_relative_mse);
    used = r + 1;
  }
  return {coef_gap < 1e-8 && best < 1e-3, "shallow coefficient error " + fmt(coef_gap) + " with N = 2|A| = " +
                                              std::to_string(x.rows()) + "; deep val rel MSE " + fmt(best) +
                                              " after " + std::to_string(used) + " restart(s)"};
}

Outcome quadratic_map() {
  const auto dir = std::filesystem::temp_directory_path() / ("deeppce_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "quadratic.tensor").string();
  save_tensor(gen_quadratic_map(12500, 11), path);
  const Dataset all = load_tensor(path);
  const Dataset again = gen_quadratic_map(12500, 11);
  const bool round_trip = all.inputs == again.inputs && all.targets == again.targets;
  std::filesystem::remove_all(dir);

  const auto parts = split(all, {0.8, 0.1, 0.1}, 2);
  CircuitConfig c;
  c.d_in = 64;
  c.d_out = 16;
  c.scope_size = 4;
  c.max_order = 2;
  c.width = 32;
  c.seed = 3;
  c.batch_norm = true;
  c.marginals = all.marginals;
  TrainConfig t;
  t.learning_rate = 5e-3;
  t.batch_size = 128;
  t.max_epochs = 400;
  t.early_stop_patience = 30;
  t.init_norm_scale = 0.1;
  t.init_norm_shift = 1.0;
  t.seed = 5;
  const TrainReport report = train(build(c), t, parts[0], parts[1]);
  const double test_rel = relative_mse(forward_chunked(report.best_model, parts[2].inputs), parts[2].targets);
  return {round_trip && test_rel < 0.01, std::string("tensor round trip ") + (round_trip ? "exact" : "MISMATCH") +
                                             "; held-out relative MSE " + fmt(test_rel)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"orthonormality", orthonormality},
      {"deep-shallow equivalence", deep_shallow},
      {"moment t-tests (D=8, O=8)", moment_ttests},
      {"law of total covariance", total_covariance},
      {"gradient check", gradients},
      {"batch-norm fold", batchnorm_fold},
      {"100D benchmark", benchmark_100d},
      {"analytic vs MC Sobol speed", sobol_speed},
      {"planted recovery", planted_recovery},
      {"quadratic map 64->16", quadratic_map},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    if (!out.pass) ++failed;
    std::cout << (out.pass ? "PASS" : "FAIL") << "  " << id << " " << criteria[i].first << ": " << out.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
