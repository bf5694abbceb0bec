#pragma once
// Tensor Gauss quadrature reference for expectations of low-degree
// polynomial functions of a few independent inputs.

#include <functional>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "deeppce/condition.hpp"
#include "deeppce/orthopoly.hpp"

namespace quad_oracle {

using Fn = std::function<Eigen::VectorXd(const std::vector<double>&)>;

// E[f(X)] with variables in `fixed` held at their values.
inline Eigen::VectorXd expectation(const Fn& f, const std::vector<deeppce::PolyFamily>& fam,
                                   const std::map<int, double>& fixed, int nodes = 10) {
  std::vector<deeppce::QuadratureRule> rules;
  for (const auto& fm : fam) rules.push_back(deeppce::quadrature(fm, nodes));
  const std::size_t d = fam.size();
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> x(d);
  Eigen::VectorXd acc;
  while (true) {
    double w = 1.0;
    for (std::size_t k = 0; k < d; ++k) {
      auto it = fixed.find(static_cast<int>(k));
      if (it != fixed.end()) {
        x[k] = it->second;
      } else {
        x[k] = rules[k].nodes[idx[k]];
        w *= rules[k].weights[idx[k]];
      }
    }
    Eigen::VectorXd v = f(x) * w;
    if (acc.size() == 0) acc = Eigen::VectorXd::Zero(v.size());
    acc += v;
    std::size_t k = 0;
    for (; k < d; ++k) {
      if (fixed.count(static_cast<int>(k))) continue;
      if (++idx[k] < static_cast<std::size_t>(nodes)) break;
      idx[k] = 0;
    }
    if (k == d) break;
  }
  return acc;
}

inline Eigen::MatrixXd covariance(const Fn& f, const std::vector<deeppce::PolyFamily>& fam,
                                  const std::map<int, double>& fixed, int nodes = 10) {
  const Eigen::VectorXd mu = expectation(f, fam, fixed, nodes);
  Fn outer = [&](const std::vector<double>& x) {
    const Eigen::VectorXd c = f(x) - mu;
    Eigen::MatrixXd m = c * c.transpose();
    return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(m.data(), m.size()));
  };
  Eigen::VectorXd flat = expectation(outer, fam, fixed, nodes);
  return Eigen::Map<Eigen::MatrixXd>(flat.data(), mu.size(), mu.size());
}

// cov over X_I of E[f | X_I].
inline Eigen::MatrixXd covariance_of_conditional_expectation(const Fn& f,
                                                             const std::vector<deeppce::PolyFamily>& fam,
                                                             const deeppce::IndexSet& set, int nodes = 10) {
  Fn cond = [&](const std::vector<double>& x) {
    std::map<int, double> fixed;
    for (int i : set) fixed[i] = x[static_cast<std::size_t>(i)];
    return expectation(f, fam, fixed, nodes);
  };
  // Free variables are integrated inside `cond`; the outer integral only
  // needs to range over X_I, so other coordinates are pinned to one node.
  std::vector<deeppce::PolyFamily> fam_outer = fam;
  std::map<int, double> pin;
  for (int k = 0; k < static_cast<int>(fam.size()); ++k)
    if (!set.contains(k)) pin[k] = fam[static_cast<std::size_t>(k)].mean();
  return covariance(cond, fam_outer, pin, nodes);
}

}  // namespace quad_oracle
