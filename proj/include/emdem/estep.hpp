#ifndef EMDEM_ESTEP_HPP
#define EMDEM_ESTEP_HPP

#include <utility>
#include <vector>

#include "emdem/core.hpp"
#include "emdem/prior.hpp"

namespace emdem {

/// Marginal posterior moments of the brightness field given the frame
/// and the current angle estimates: mean_j = E[l_j | y] and
/// second_moment_j = E[l_j^2 | y].
struct PosteriorSummary {
  Grid mean;
  Grid second_moment;
  bool converged = true;
  int iterations = 0;

  void validate() const;
};

/// Per-site loading factors h_j = h(theta_j, phi_j, channel at j).
std::vector<double> loading_factors(const MosaicFrame& frame,
                                    const PolarImage& angles);

/// Closed-form posterior of the linear-Gaussian model via dense linear
/// algebra: mean = (D^T D / s^2 + Sigma^-1)^-1 D^T y / s^2 and per-site
/// variances from the same inverse. Restricted to n_sites <= 4096;
/// intended as an oracle and for small problems.
PosteriorSummary gaussian_posterior_exact(const MosaicFrame& frame,
                                          const PolarImage& angles,
                                          const BrightnessPrior& prior);

/// Same closed form with an arbitrary dense prior precision matrix
/// (row-major n x n).
PosteriorSummary gaussian_posterior_dense(
    const MosaicFrame& frame, const PolarImage& angles,
    const std::vector<double>& prior_precision);

/// Stationary autoregressive surrogate of the spectral prior, fitted by
/// matching the first `order` autocovariance lags (Yule-Walker). The
/// chain solvers run on its state-space form; its exact covariance is
/// Toeplitz in autocovariance().
struct ArSurrogate {
  std::vector<double> coeff;      // a_1 .. a_p
  double noise_var = 0.0;         // innovation variance q
  std::vector<double> head_cov;   // r(0) .. r(p), matched to the prior

  static ArSurrogate fit(const BrightnessPrior& prior, int order = 2);

  /// r(0) .. r(count-1), extended past lag p by the AR recursion.
  std::vector<double> autocovariance(int count) const;
};

/// Kalman filter + RTS smoother over the chain using the AR surrogate
/// prior. Exact marginals of the surrogate model; matches the dense
/// solver under the same Toeplitz prior.
PosteriorSummary kalman_estep(const MosaicFrame& frame,
                              const PolarImage& angles,
                              const BrightnessPrior& prior, int ar_order = 2);

struct QnOptions {
  int memory = 10;
  int max_iter = 500;
  /// Euclidean gradient-norm stopping threshold; <= 0 selects
  /// 1e-8 * ||D^T y / sigma^2||.
  double grad_tol = 0.0;
  /// Variance probes are solved on a strided sublattice of each CFA
  /// phase class and ratio-interpolated elsewhere; stride 1 probes
  /// every site.
  int probe_stride = 2;
  double probe_rel_tol = 1e-4;
  /// Optional warm start for the mean solve.
  const std::vector<double>* init = nullptr;
};

/// MAP estimate of the brightness field by limited-memory quasi-Newton
/// iteration on the (quadratic) negative log posterior, with a
/// stationary spectral preconditioner. The posterior mean equals the
/// mode; variances come from probe solves of the same system.
PosteriorSummary qn_estep(const MosaicFrame& frame, const PolarImage& angles,
                          const BrightnessPrior& prior,
                          const QnOptions& opts = {});

PosteriorSummary qn_estep(const MosaicFrame& frame, const PolarImage& angles,
                          const BrightnessPrior& prior, int memory,
                          int max_iter, double grad_tol);

/// P_j = y_j * mean_j and Delta2_j = second_moment_j.
std::pair<Grid, Grid> assemble_moments(const MosaicFrame& frame,
                                       const PosteriorSummary& summary);

/// Even/odd aggregates of the chain moments used by the constant-color
/// surrogate.
struct ConstantAggregates {
  double Pe = 0.0, Po = 0.0, De2 = 0.0, Do2 = 0.0;
};
ConstantAggregates aggregate_even_odd(const Grid& P, const Grid& Delta2);

}  // namespace emdem

#endif  // EMDEM_ESTEP_HPP
