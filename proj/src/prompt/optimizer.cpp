#include <algorithm>
#include <cmath>

#include "xprompt/errors.hpp"
#include "xprompt/prompt.hpp"

namespace xprompt {

const char* optimizer_kind_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::AdafactorLite: return "adafactor";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::Sgd: return "sgd";
  }
  return "unknown";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adafactor") return OptimizerKind::AdafactorLite;
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adafactor, adam or sgd)");
}

PromptOptimizer::PromptOptimizer(OptimizerConfig config, std::size_t rows, std::size_t cols,
                                 std::size_t pieces)
    : config_(config), rows_(rows), cols_(cols), pieces_(pieces) {
  if (pieces_ == 0 || cols_ % pieces_ != 0) {
    throw ConfigError("optimizer: width " + std::to_string(cols_) +
                      " is not divisible by piece count " + std::to_string(pieces_));
  }
  if (!(config_.learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  if (config_.weight_decay < 0.0) throw ConfigError("optimizer: weight decay must be nonnegative");
  reset();
}

void PromptOptimizer::reset() {
  steps_ = 0;
  piece_acc_ = Matrix(rows_, pieces_);
  offset_acc_ = Matrix(rows_, cols_ / pieces_);
  first_moment_ = Matrix(rows_, cols_);
  second_moment_ = Matrix(rows_, cols_);
}

void PromptOptimizer::step(Matrix& params, const Matrix& grad, const Matrix& entry_mask) {
  if (params.rows() != rows_ || params.cols() != cols_ || !params.same_shape(grad) ||
      !params.same_shape(entry_mask)) {
    throw DimensionError("optimizer step: expected " + std::to_string(rows_) + "x" +
                         std::to_string(cols_) + " params, grad and mask");
  }
  ++steps_;
  switch (config_.kind) {
    case OptimizerKind::AdafactorLite: step_adafactor(params, grad, entry_mask); break;
    case OptimizerKind::Adam: step_adam(params, grad, entry_mask); break;
    case OptimizerKind::Sgd: step_sgd(params, grad, entry_mask); break;
  }
}

void PromptOptimizer::step_adafactor(Matrix& params, const Matrix& grad, const Matrix& mask) {
  constexpr double kEps = 1e-30;
  const std::size_t w = cols_ / pieces_;
  const double beta2 = 1.0 - std::pow(static_cast<double>(steps_), config_.decay_exponent);
  const double lr = config_.learning_rate;
  std::vector<double> update(cols_);
  std::vector<double> offset_sum(w);
  for (std::size_t i = 0; i < rows_; ++i) {
    // Live pieces of this row (a piece is live or dead as a whole).
    std::size_t live_pieces = 0;
    std::fill(offset_sum.begin(), offset_sum.end(), 0.0);
    for (std::size_t c = 0; c < pieces_; ++c) {
      if (mask(i, c * w) == 0.0) continue;
      ++live_pieces;
      double s = 0.0;
      for (std::size_t t = 0; t < w; ++t) {
        const double g2 = grad(i, c * w + t) * grad(i, c * w + t) + kEps;
        s += g2;
        offset_sum[t] += g2;
      }
      piece_acc_(i, c) = beta2 * piece_acc_(i, c) + (1.0 - beta2) * (s / static_cast<double>(w));
    }
    if (live_pieces == 0) continue;
    for (std::size_t t = 0; t < w; ++t) {
      offset_acc_(i, t) = beta2 * offset_acc_(i, t) +
                          (1.0 - beta2) * (offset_sum[t] / static_cast<double>(live_pieces));
    }
    double piece_mean = 0.0;
    for (std::size_t c = 0; c < pieces_; ++c) {
      if (mask(i, c * w) != 0.0) piece_mean += piece_acc_(i, c);
    }
    piece_mean /= static_cast<double>(live_pieces);

    double sq = 0.0;
    for (std::size_t c = 0; c < pieces_; ++c) {
      if (mask(i, c * w) == 0.0) continue;
      for (std::size_t t = 0; t < w; ++t) {
        const double v = piece_acc_(i, c) * offset_acc_(i, t) / piece_mean;
        const double u = grad(i, c * w + t) / std::sqrt(v);
        update[c * w + t] = u;
        sq += u * u;
      }
    }
    const double rms = std::sqrt(sq / static_cast<double>(live_pieces * w));
    const double denom = std::max(1.0, rms / config_.clip_threshold);
    for (std::size_t c = 0; c < pieces_; ++c) {
      if (mask(i, c * w) == 0.0) continue;
      for (std::size_t t = 0; t < w; ++t) {
        double& p = params(i, c * w + t);
        p -= lr * (update[c * w + t] / denom) + lr * config_.weight_decay * p;
      }
    }
  }
}

void PromptOptimizer::step_adam(Matrix& params, const Matrix& grad, const Matrix& mask) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(kBeta1, t);
  const double c2 = 1.0 - std::pow(kBeta2, t);
  auto p = params.values();
  auto g = grad.values();
  auto mk = mask.values();
  auto m1 = first_moment_.values();
  auto m2 = second_moment_.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mk[i] == 0.0) continue;
    m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * g[i];
    m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * g[i] * g[i];
    p[i] -= config_.learning_rate * ((m1[i] / c1) / (std::sqrt(m2[i] / c2) + kEps) +
                                     config_.weight_decay * p[i]);
  }
}

void PromptOptimizer::step_sgd(Matrix& params, const Matrix& grad, const Matrix& mask) {
  auto p = params.values();
  auto g = grad.values();
  auto mk = mask.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mk[i] == 0.0) continue;
    p[i] -= config_.learning_rate * (g[i] + config_.weight_decay * p[i]);
  }
}

}  // namespace xprompt
