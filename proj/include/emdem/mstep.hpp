#ifndef EMDEM_MSTEP_HPP
#define EMDEM_MSTEP_HPP

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "emdem/core.hpp"
#include "emdem/prior.hpp"

namespace emdem {

/// Theta-dependent part of the constant-color surrogate (scaled by
/// sigma^2): Pe cos t + Po sin t - (De2 cos^2 t + Do2 sin^2 t) / 2.
double surrogate_constant(double theta, double Pe, double Po, double De2,
                          double Do2);

/// Golden-section bracketing maximizer on [lo, hi]. For quasi-concave f
/// the result is within tol of the argmax; otherwise it is a local
/// maximizer.
double binary_search_max(const std::function<double(double)>& f, double lo,
                         double hi, double tol);

inline double binary_search_max(const std::function<double(double)>& f,
                                double tol) {
  return binary_search_max(f, 0.0, 1.5707963267948966, tol);
}

/// Everything the angle surrogate needs besides the angles themselves.
/// Link weights are the current beta-hat values; sigma scales the MRF
/// penalty exactly as it enters the surrogate.
struct SurrogateTerms {
  const Grid* P = nullptr;
  const Grid* Delta2 = nullptr;
  const LinkGraph* graph = nullptr;
  const MosaicFrame* frame = nullptr;
  double sigma = 0.0;

  void validate() const;
};

/// Exact global maximizer of the surrogate over the discrete angle grid
/// {0, .., pi/2} with `levels` points, by dynamic programming on a
/// nearest-neighbor chain. Ties resolve to the lexicographically
/// smallest grid sequence. Graphs with links beyond nearest neighbors
/// are rejected.
std::vector<double> viterbi_chain(const SurrogateTerms& terms, int levels);

struct NeighborTerm {
  std::array<double, 3> u;  // neighbor's unit color vector
  double beta = 0.0;
};

/// Terms of the surrogate that depend on one site: -h^2 Delta2 / 2
/// + h P - sum_k sigma^2 beta_k |u x u_k| with h for the site's CFA
/// channel.
double local_surrogate_2d(double theta, double phi, Channel channel,
                          std::span<const NeighborTerm> neighbors, double p,
                          double delta2, double sigma);

/// Full surrogate value over the current angle fields (each link
/// counted once).
double surrogate_value(const PolarImage& angles, const SurrogateTerms& terms);

enum class SweepOrder { Forward, Backward };

/// One generalized-EM sweep: per site, maximize the local surrogate
/// over theta with phi held, then over phi with theta held (coarse grid
/// plus golden-section refinement). A site only moves on a strict
/// improvement, so the surrogate never decreases. Returns the surrogate
/// value after the sweep.
double coordinate_max_2d(PolarImage& angles, const SurrogateTerms& terms,
                         SweepOrder order);

}  // namespace emdem

#endif  // EMDEM_MSTEP_HPP
