#pragma once

// Central finite-difference oracle for graph gradients. Test-only: it
// rebuilds the whole graph from scratch for every perturbed evaluation and
// never looks at the analytic backward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "xprompt/graph.hpp"
#include "xprompt/matrix.hpp"

namespace xprompt::testing {

// Builds a loss from leaves holding the given values.
using LossBuilder = std::function<nk::LossScalar(nk::Graph&, const std::vector<nk::Var>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<Matrix>& values) {
  nk::Graph g;
  std::vector<nk::Var> leaves;
  for (const Matrix& v : values) leaves.push_back(g.leaf(v));
  return build(g, leaves).value;
}

inline std::vector<Matrix> numeric_gradients(const LossBuilder& build, std::vector<Matrix> values,
                                             double eps = 1e-5) {
  std::vector<Matrix> out;
  for (std::size_t p = 0; p < values.size(); ++p) {
    Matrix grad(values[p].rows(), values[p].cols());
    for (std::size_t i = 0; i < values[p].size(); ++i) {
      const double orig = values[p].values()[i];
      values[p].values()[i] = orig + eps;
      const double up = eval_loss(build, values);
      values[p].values()[i] = orig - eps;
      const double down = eval_loss(build, values);
      values[p].values()[i] = orig;
      grad.values()[i] = (up - down) / (2.0 * eps);
    }
    out.push_back(std::move(grad));
  }
  return out;
}

inline std::vector<Matrix> analytic_gradients(const LossBuilder& build,
                                              const std::vector<Matrix>& values) {
  nk::Graph g;
  std::vector<nk::Var> leaves;
  for (const Matrix& v : values) leaves.push_back(g.leaf(v, true));
  nk::LossScalar loss = build(g, leaves);
  g.backward(loss);
  std::vector<Matrix> out;
  for (const nk::Var& l : leaves) out.push_back(l.grad());
  return out;
}

// max over entries of |a - n| / max(|a|, |n|, floor). The floor keeps
// entries whose true gradient is ~0 from dominating through rounding noise.
inline double max_relative_error(const Matrix& analytic, const Matrix& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.values()[i], n = numeric.values()[i];
    const double scale = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / scale);
  }
  return worst;
}

inline double gradient_check(const LossBuilder& build, const std::vector<Matrix>& values,
                             double eps = 1e-5, double floor = 1e-6) {
  const auto a = analytic_gradients(build, values);
  const auto n = numeric_gradients(build, values, eps);
  double worst = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) worst = std::max(worst, max_relative_error(a[p], n[p], floor));
  return worst;
}

}  // namespace xprompt::testing
