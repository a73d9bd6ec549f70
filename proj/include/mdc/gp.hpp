#pragma once

#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace mdc {

struct GPHyperparameters {
  std::vector<double> length_scales;  // one per input dimension
  double signal_variance = 1.0;
  double noise_variance = 1e-6;
};

/// Matern-5/2 with per-dimension length scales.
double matern52(std::span<const double> a, std::span<const double> b,
                const GPHyperparameters& hp);

struct GPPrediction {
  double mean = 0.0;
  double variance = 0.0;  // latent, without observation noise
};

/// Zero-mean GP regression. With no observations it returns the prior.
class GaussianProcess {
 public:
  static constexpr double kJitter = 1e-8;

  GaussianProcess(std::size_t dim, GPHyperparameters hp);

  /// Throws NumericalError if K + (noise + jitter) I is not positive definite.
  void condition(std::vector<std::vector<double>> inputs, std::vector<double> targets);

  GPPrediction predict(std::span<const double> x) const;
  double log_marginal_likelihood() const;

  std::size_t dim() const { return dim_; }
  std::size_t observations() const { return inputs_.size(); }
  const GPHyperparameters& hyperparameters() const { return hp_; }
  const std::vector<std::vector<double>>& inputs() const { return inputs_; }
  const std::vector<double>& targets() const { return targets_; }

 private:
  std::size_t dim_;
  GPHyperparameters hp_;
  std::vector<std::vector<double>> inputs_;
  std::vector<double> targets_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd alpha_;
};

/// Grids searched when fitting hyperparameters by marginal likelihood.
const std::vector<double>& length_scale_grid();
const std::vector<double>& noise_grid();

/// Picks hyperparameters on the fixed grids: an isotropic search over
/// (length scale, noise), then two coordinate sweeps refining each
/// dimension's length scale. Signal variance stays 1 (targets are
/// standardized).
GaussianProcess fit_hyperparameters(std::vector<std::vector<double>> inputs,
                                    std::vector<double> targets);

/// Maximization form: (mu - best) Phi(z) + sigma phi(z), z = (mu - best) / sigma;
/// max(0, mu - best) when sigma == 0.
double expected_improvement(double mu, double sigma, double best);

}  // namespace mdc
