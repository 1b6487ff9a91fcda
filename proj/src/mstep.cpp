#include "emdem/mstep.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace emdem {

namespace {
constexpr double kHalfPi = std::numbers::pi / 2.0;
constexpr double kGolden = 0.6180339887498949;  // (sqrt(5)-1)/2
}  // namespace

double surrogate_constant(double theta, double pe, double po, double de2,
                          double do2) {
  const double c = std::cos(theta), s = std::sin(theta);
  return pe * c + po * s - 0.5 * (de2 * c * c + do2 * s * s);
}

double binary_search_max(const std::function<double(double)>& f, double lo,
                         double hi, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("binary_search_max: tol <= 0");
  if (hi < lo) std::swap(lo, hi);
  double x1 = hi - kGolden * (hi - lo);
  double x2 = lo + kGolden * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  while (hi - lo > tol) {
    if (f1 >= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kGolden * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kGolden * (hi - lo);
      f2 = f(x2);
    }
  }
  return 0.5 * (lo + hi);
}

void SurrogateTerms::validate() const {
  if (!P || !Delta2 || !graph || !frame) {
    throw std::invalid_argument("SurrogateTerms: missing field");
  }
  if (!P->same_shape(*Delta2) || !P->same_shape(frame->samples)) {
    throw std::invalid_argument("SurrogateTerms: shape mismatch");
  }
  if (graph->n_sites() != static_cast<int>(P->size())) {
    throw std::invalid_argument("SurrogateTerms: graph size mismatch");
  }
  if (!(sigma > 0.0)) throw std::invalid_argument("SurrogateTerms: sigma <= 0");
  for (std::size_t i = 0; i < Delta2->size(); ++i) {
    if ((*Delta2)[i] < 0.0) {
      throw std::invalid_argument("SurrogateTerms: negative Delta2");
    }
  }
}

std::vector<double> viterbi_chain(const SurrogateTerms& terms, int levels) {
  terms.validate();
  if (levels < 2) throw std::invalid_argument("viterbi_chain: levels < 2");
  const MosaicFrame& frame = *terms.frame;
  if (frame.height != 1) {
    throw std::invalid_argument("viterbi_chain: 1D chains only");
  }
  const int n = frame.width;
  const int k = levels;

  // Nearest-neighbor weights; anything else is a loopy/non-chain graph.
  std::vector<double> beta(static_cast<std::size_t>(std::max(n - 1, 0)), 0.0);
  for (const Link& lk : terms.graph->links()) {
    if (lk.j != lk.i + 1) {
      throw std::invalid_argument("viterbi_chain: graph is not a chain");
    }
    beta[static_cast<std::size_t>(lk.i)] = lk.w;
  }

  std::vector<double> grid(static_cast<std::size_t>(k));
  for (int s = 0; s < k; ++s) grid[static_cast<std::size_t>(s)] = kHalfPi * s / (k - 1);

  auto unary = [&](int j, int s) {
    const double h =
        h_factor(grid[static_cast<std::size_t>(s)], 0.0, frame.channel_at(j, 0));
    const double d2 = (*terms.Delta2)[static_cast<std::size_t>(j)];
    const double p = (*terms.P)[static_cast<std::size_t>(j)];
    return -0.5 * h * h * d2 + h * p;
  };
  const double s2 = terms.sigma * terms.sigma;
  auto pair_term = [&](int j, int sa, int sb) {
    return -s2 * beta[static_cast<std::size_t>(j)] *
           std::abs(std::sin(grid[static_cast<std::size_t>(sa)] -
                             grid[static_cast<std::size_t>(sb)]));
  };

  // Backward value pass: value[j][s] = best achievable from site j on,
  // given state s at j. Forward selection then picks the smallest state
  // achieving the optimum, which yields the lexicographically smallest
  // optimal sequence.
  std::vector<std::vector<double>> value(
      static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(k)));
  for (int s = 0; s < k; ++s) {
    value[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(s)] =
        unary(n - 1, s);
  }
  for (int j = n - 2; j >= 0; --j) {
    for (int s = 0; s < k; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int t = 0; t < k; ++t) {
        const double v = pair_term(j, s, t) +
                         value[static_cast<std::size_t>(j + 1)][static_cast<std::size_t>(t)];
        if (v > best) best = v;
      }
      value[static_cast<std::size_t>(j)][static_cast<std::size_t>(s)] =
          unary(j, s) + best;
    }
  }

  std::vector<double> out(static_cast<std::size_t>(n));
  int prev = 0;
  {
    double best = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < k; ++s) {
      const double v = value[0][static_cast<std::size_t>(s)];
      if (v > best) {
        best = v;
        prev = s;
      }
    }
    out[0] = grid[static_cast<std::size_t>(prev)];
  }
  for (int j = 1; j < n; ++j) {
    int pick = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < k; ++t) {
      const double v = pair_term(j - 1, prev, t) +
                       value[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)];
      if (v > best) {
        best = v;
        pick = t;
      }
    }
    out[static_cast<std::size_t>(j)] = grid[static_cast<std::size_t>(pick)];
    prev = pick;
  }
  return out;
}

double local_surrogate_2d(double theta, double phi, Channel channel,
                          std::span<const NeighborTerm> neighbors, double p,
                          double delta2, double sigma) {
  const double h = h_factor(theta, phi, channel);
  double v = -0.5 * h * h * delta2 + h * p;
  if (!neighbors.empty()) {
    const double s2 = sigma * sigma;
    const auto u = unit_color_vector(theta, phi);
    for (const NeighborTerm& nb : neighbors) {
      v -= s2 * nb.beta * color_potential(u, nb.u);
    }
  }
  return v;
}

double surrogate_value(const PolarImage& angles, const SurrogateTerms& terms) {
  terms.validate();
  const MosaicFrame& frame = *terms.frame;
  double v = 0.0;
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const std::size_t i = frame.samples.index(x, y);
      const double h =
          h_factor(angles.theta[i], angles.phi_at(i), frame.channel_at(x, y));
      v += -0.5 * h * h * (*terms.Delta2)[i] + h * (*terms.P)[i];
    }
  }
  const double s2 = terms.sigma * terms.sigma;
  for (const Link& lk : terms.graph->links()) {
    const auto ui = unit_color_vector(angles.theta[lk.i], angles.phi_at(lk.i));
    const auto uj = unit_color_vector(angles.theta[lk.j], angles.phi_at(lk.j));
    v -= s2 * lk.w * color_potential(ui, uj);
  }
  return v;
}

namespace {

// Maximize g over [0, pi/2]: coarse grid bracketing (the MRF term makes
// g only piecewise smooth) followed by golden-section refinement. The
// current point is kept unless a candidate is strictly better.
template <class F>
double improve_coordinate(F&& g, double current, double current_value) {
  constexpr int kCoarse = 33;
  int best_idx = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < kCoarse; ++s) {
    const double t = kHalfPi * s / (kCoarse - 1);
    const double v = g(t);
    if (v > best_val) {
      best_val = v;
      best_idx = s;
    }
  }
  const double lo = kHalfPi * std::max(best_idx - 1, 0) / (kCoarse - 1);
  const double hi = kHalfPi * std::min(best_idx + 1, kCoarse - 1) / (kCoarse - 1);
  const double refined = binary_search_max(g, lo, hi, 1e-5);
  const double refined_val = g(refined);

  double cand = kHalfPi * best_idx / (kCoarse - 1);
  double cand_val = best_val;
  if (refined_val > cand_val ||
      (refined_val == cand_val && refined < cand)) {
    cand = refined;
    cand_val = refined_val;
  }
  if (cand_val > current_value) return cand;
  return current;
}

}  // namespace

double coordinate_max_2d(PolarImage& angles, const SurrogateTerms& terms,
                         SweepOrder order) {
  terms.validate();
  const MosaicFrame& frame = *terms.frame;
  if (angles.width != frame.width || angles.height != frame.height) {
    throw std::invalid_argument("coordinate_max_2d: shape mismatch");
  }
  const int n = static_cast<int>(frame.n_sites());
  const auto& adj = terms.graph->adjacency();
  const double sigma = terms.sigma;

  std::vector<NeighborTerm> nbrs;
  for (int step = 0; step < n; ++step) {
    const int i = (order == SweepOrder::Forward) ? step : n - 1 - step;
    const int x = i % frame.width;
    const int y = i / frame.width;
    const Channel ch = frame.channel_at(x, y);
    const double p = (*terms.P)[static_cast<std::size_t>(i)];
    const double d2 = (*terms.Delta2)[static_cast<std::size_t>(i)];

    nbrs.clear();
    for (const auto& [k, w] : adj[static_cast<std::size_t>(i)]) {
      nbrs.push_back(NeighborTerm{
          unit_color_vector(angles.theta[static_cast<std::size_t>(k)],
                            angles.phi_at(static_cast<std::size_t>(k))),
          w});
    }

    double theta = angles.theta[static_cast<std::size_t>(i)];
    double phi = angles.phi_at(static_cast<std::size_t>(i));

    auto g_theta = [&](double t) {
      return local_surrogate_2d(t, phi, ch, nbrs, p, d2, sigma);
    };
    double before = g_theta(theta);
    theta = improve_coordinate(g_theta, theta, before);
#ifndef NDEBUG
    assert(g_theta(theta) >= before - 1e-10 * (1.0 + std::abs(before)));
#endif
    angles.theta[static_cast<std::size_t>(i)] = theta;

    if (angles.has_phi) {
      auto g_phi = [&](double q) {
        return local_surrogate_2d(theta, q, ch, nbrs, p, d2, sigma);
      };
      before = g_phi(phi);
      phi = improve_coordinate(g_phi, phi, before);
#ifndef NDEBUG
      assert(g_phi(phi) >= before - 1e-10 * (1.0 + std::abs(before)));
#endif
      angles.phi[static_cast<std::size_t>(i)] = phi;
    }
  }
  return surrogate_value(angles, terms);
}

}  // namespace emdem
