#ifndef EMDEM_PRIOR_HPP
#define EMDEM_PRIOR_HPP

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "emdem/core.hpp"

namespace emdem {

/// Zero-mean Gaussian brightness prior whose covariance is diagonal in
/// the Fourier basis with multipliers eps0 * max(|omega|, omega_min)^-nu.
/// |omega| is the folded scalar frequency on chains and the radial
/// frequency |omega|_2 on 2D grids. omega_min <= 0 selects the default
/// clamp 2*pi / max(width, height), which keeps the DC mode finite.
struct BrightnessPrior {
  int width = 0;
  int height = 1;
  double eps0 = 1.0;
  double nu = 2.0;
  double omega_min = 0.0;

  int n_sites() const { return width * height; }
  double resolved_omega_min() const;
  void validate() const;
};

/// Fourier multipliers of the covariance, row-major over the frequency
/// grid (k_y * width + k_x). All entries are finite and positive.
std::vector<double> spectral_multipliers(const BrightnessPrior& prior);

/// eps0 that makes the prior marginal standard deviation equal
/// target_std for the given shape/exponent/clamp.
double calibrate_eps0(const BrightnessPrior& shape, double target_std);

/// FFT-backed application of the prior covariance and its inverse.
/// Holds plans and scratch for one grid shape; one instance per thread.
class SpectralOps {
 public:
  explicit SpectralOps(const BrightnessPrior& prior);
  ~SpectralOps();
  SpectralOps(SpectralOps&&) noexcept;
  SpectralOps& operator=(SpectralOps&&) noexcept;
  SpectralOps(const SpectralOps&) = delete;
  SpectralOps& operator=(const SpectralOps&) = delete;

  int n_sites() const;
  const std::vector<double>& multipliers() const;

  /// out = Sigma^-1 * in
  void apply_precision(std::span<const double> in, std::span<double> out);
  /// out = Sigma * in
  void apply_covariance(std::span<const double> in, std::span<double> out);
  /// out = F^-1 diag(d) F in for an arbitrary real symmetric spectrum d
  /// on this grid (d must respect the omega -> -omega symmetry for a
  /// real result).
  void apply_fourier_diag(std::span<const double> d, std::span<const double> in,
                          std::span<double> out);

  std::vector<double> apply_precision(std::span<const double> in);
  std::vector<double> apply_covariance(std::span<const double> in);

  /// (1/N) sum_f m_f: the per-site prior variance (constant by
  /// stationarity).
  double marginal_variance() const;
  /// (1/N) sum_f 1/m_f: the per-site diagonal of Sigma^-1.
  double precision_diag() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One undirected weighted link between lattice sites (stored once with
/// i < j).
struct Link {
  int i = 0;
  int j = 0;
  double w = 0.0;
};

/// Pairwise neighborhood system with nonnegative link weights. Sites
/// are linear row-major indices into the image grid.
class LinkGraph {
 public:
  LinkGraph() = default;
  LinkGraph(int n_sites, std::vector<Link> links);

  int n_sites() const { return n_sites_; }
  const std::vector<Link>& links() const { return links_; }

  /// Per-site list of (neighbor, weight); each link appears from both
  /// endpoints.
  const std::vector<std::vector<std::pair<int, double>>>& adjacency() const;

 private:
  int n_sites_ = 0;
  std::vector<Link> links_;
  mutable std::vector<std::vector<std::pair<int, double>>> adj_;
  mutable bool adj_built_ = false;
};

/// |u_i x u_j| for unit color vectors (component order g, r, b). Zero
/// iff the vectors coincide; bounded by 1. Inputs must be unit norm to
/// within 1e-9.
double color_potential(const std::array<double, 3>& ui,
                       const std::array<double, 3>& uj);

/// Unnormalized MRF energy sum_links beta_ij |u_i x u_j| over the
/// angle fields. The partition function is never formed.
double mrf_energy(const PolarImage& angles, const LinkGraph& graph);

}  // namespace emdem

#endif  // EMDEM_PRIOR_HPP
