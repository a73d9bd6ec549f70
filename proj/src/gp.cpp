#include "mdc/gp.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "mdc/error.hpp"

namespace mdc {

double matern52(std::span<const double> a, std::span<const double> b,
                const GPHyperparameters& hp) {
  double r2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) / hp.length_scales[i];
    r2 += d * d;
  }
  const double s5r = std::sqrt(5.0 * r2);
  return hp.signal_variance * (1.0 + s5r + 5.0 / 3.0 * r2) * std::exp(-s5r);
}

GaussianProcess::GaussianProcess(std::size_t dim, GPHyperparameters hp)
    : dim_(dim), hp_(std::move(hp)) {
  if (hp_.length_scales.size() != dim_)
    throw UsageError("need one GP length scale per dimension");
  for (double l : hp_.length_scales)
    if (!(l > 0.0)) throw UsageError("GP length scales must be positive");
  if (!(hp_.signal_variance > 0.0) || !(hp_.noise_variance >= 0.0))
    throw UsageError("bad GP variances");
}

void GaussianProcess::condition(std::vector<std::vector<double>> inputs,
                                std::vector<double> targets) {
  if (inputs.size() != targets.size()) throw DataError("GP inputs/targets mismatch");
  for (const auto& x : inputs)
    if (x.size() != dim_) throw DataError("GP input has wrong dimension");
  inputs_ = std::move(inputs);
  targets_ = std::move(targets);
  const auto n = static_cast<Eigen::Index>(inputs_.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      k(i, j) = k(j, i) = matern52(inputs_[static_cast<std::size_t>(i)],
                                   inputs_[static_cast<std::size_t>(j)], hp_);
  k.diagonal().array() += hp_.noise_variance + kJitter;
  chol_.compute(k);
  if (chol_.info() != Eigen::Success)
    throw NumericalError("GP covariance is singular after jitter");
  const Eigen::Map<const Eigen::VectorXd> y(targets_.data(), n);
  alpha_ = chol_.solve(y);
  if (!alpha_.allFinite()) throw NumericalError("GP solve produced non-finite weights");
}

GPPrediction GaussianProcess::predict(std::span<const double> x) const {
  if (x.size() != dim_) throw DataError("GP query has wrong dimension");
  const double prior = hp_.signal_variance;
  if (inputs_.empty()) return {0.0, prior};
  const auto n = static_cast<Eigen::Index>(inputs_.size());
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i)
    ks[i] = matern52(inputs_[static_cast<std::size_t>(i)], x, hp_);
  const double mean = ks.dot(alpha_);
  const Eigen::VectorXd v = chol_.matrixL().solve(ks);
  const double var = std::max(0.0, prior - v.squaredNorm());
  return {mean, var};
}

double GaussianProcess::log_marginal_likelihood() const {
  const auto n = static_cast<Eigen::Index>(inputs_.size());
  if (n == 0) return 0.0;
  const Eigen::Map<const Eigen::VectorXd> y(targets_.data(), n);
  const double log_det = 2.0 * chol_.matrixLLT().diagonal().array().log().sum();
  return -0.5 * y.dot(alpha_) - 0.5 * log_det -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

const std::vector<double>& length_scale_grid() {
  static const std::vector<double> grid = {0.1, 0.15, 0.2, 0.3, 0.5,
                                           0.7, 1.0,  1.5, 2.0};
  return grid;
}

const std::vector<double>& noise_grid() {
  static const std::vector<double> grid = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
  return grid;
}

GaussianProcess fit_hyperparameters(std::vector<std::vector<double>> inputs,
                                    std::vector<double> targets) {
  if (inputs.empty()) throw DataError("cannot fit a GP without observations");
  const std::size_t dim = inputs.front().size();

  auto score = [&](const GPHyperparameters& hp) {
    GaussianProcess gp(dim, hp);
    try {
      gp.condition(inputs, targets);
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
    return gp.log_marginal_likelihood();
  };

  GPHyperparameters best;
  double best_lml = -std::numeric_limits<double>::infinity();
  for (double noise : noise_grid()) {
    for (double ls : length_scale_grid()) {
      GPHyperparameters hp{std::vector<double>(dim, ls), 1.0, noise};
      const double lml = score(hp);
      if (lml > best_lml) {
        best_lml = lml;
        best = hp;
      }
    }
  }
  if (!std::isfinite(best_lml)) throw NumericalError("GP covariance is singular after jitter");

  if (dim > 1) {
    for (int sweep = 0; sweep < 2; ++sweep) {
      for (std::size_t d = 0; d < dim; ++d) {
        for (double ls : length_scale_grid()) {
          if (ls == best.length_scales[d]) continue;
          GPHyperparameters hp = best;
          hp.length_scales[d] = ls;
          const double lml = score(hp);
          if (lml > best_lml) {
            best_lml = lml;
            best = hp;
          }
        }
      }
    }
  }
  GaussianProcess gp(dim, best);
  gp.condition(std::move(inputs), std::move(targets));
  return gp;
}

double expected_improvement(double mu, double sigma, double best) {
  const double diff = mu - best;
  if (!(sigma > 0.0)) return std::max(0.0, diff);
  const double z = diff / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, diff * cdf + sigma * pdf);
}

}  // namespace mdc
