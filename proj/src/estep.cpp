#include "emdem/estep.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <stdexcept>

namespace emdem {

void PosteriorSummary::validate() const {
  if (!mean.same_shape(second_moment)) {
    throw std::invalid_argument("PosteriorSummary: shape mismatch");
  }
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (second_moment[i] < mean[i] * mean[i] - 1e-9) {
      throw std::invalid_argument("PosteriorSummary: negative variance");
    }
  }
}

std::vector<double> loading_factors(const MosaicFrame& frame,
                                    const PolarImage& angles) {
  if (frame.width != angles.width || frame.height != angles.height) {
    throw std::invalid_argument("loading_factors: shape mismatch");
  }
  std::vector<double> h(frame.n_sites());
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const std::size_t i = frame.samples.index(x, y);
      h[i] = h_factor(angles.theta[i], angles.phi_at(i), frame.channel_at(x, y));
    }
  }
  return h;
}

namespace {

void check_sigma(double sigma) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("estep: sigma must be positive");
  }
}

PosteriorSummary dense_solve(const MosaicFrame& frame,
                             const std::vector<double>& h,
                             const Eigen::MatrixXd& prior_precision) {
  const int n = static_cast<int>(frame.n_sites());
  const double s2 = frame.sigma * frame.sigma;

  Eigen::MatrixXd a = prior_precision;
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) {
    a(i, i) += h[i] * h[i] / s2;
    b(i) = h[i] * frame.samples[static_cast<std::size_t>(i)] / s2;
  }

  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("gaussian_posterior: factorization failed");
  }
  const Eigen::VectorXd mean = llt.solve(b);
  const Eigen::MatrixXd cov =
      llt.solve(Eigen::MatrixXd::Identity(n, n));

  PosteriorSummary out;
  out.mean = Grid(frame.width, frame.height);
  out.second_moment = Grid(frame.width, frame.height);
  for (int i = 0; i < n; ++i) {
    out.mean[static_cast<std::size_t>(i)] = mean(i);
    out.second_moment[static_cast<std::size_t>(i)] =
        cov(i, i) + mean(i) * mean(i);
  }
  out.converged = true;
  out.iterations = 0;
  return out;
}

}  // namespace

PosteriorSummary gaussian_posterior_dense(
    const MosaicFrame& frame, const PolarImage& angles,
    const std::vector<double>& prior_precision) {
  check_sigma(frame.sigma);
  const int n = static_cast<int>(frame.n_sites());
  if (prior_precision.size() != static_cast<std::size_t>(n) * n) {
    throw std::invalid_argument("gaussian_posterior_dense: matrix size");
  }
  const auto h = loading_factors(frame, angles);
  Eigen::MatrixXd p(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      p(r, c) = prior_precision[static_cast<std::size_t>(r) * n + c];
    }
  }
  return dense_solve(frame, h, p);
}

PosteriorSummary gaussian_posterior_exact(const MosaicFrame& frame,
                                          const PolarImage& angles,
                                          const BrightnessPrior& prior) {
  check_sigma(frame.sigma);
  const int n = static_cast<int>(frame.n_sites());
  if (n > 4096) {
    throw std::invalid_argument("gaussian_posterior_exact: n_sites > 4096");
  }
  if (prior.width != frame.width || prior.height != frame.height) {
    throw std::invalid_argument("gaussian_posterior_exact: prior shape");
  }
  const auto h = loading_factors(frame, angles);

  // Sigma^-1 is circulant (block-circulant in 2D): fill the dense matrix
  // from its action on the first basis vector.
  SpectralOps ops(prior);
  std::vector<double> e0(static_cast<std::size_t>(n), 0.0);
  e0[0] = 1.0;
  const std::vector<double> col0 = ops.apply_precision(e0);

  Eigen::MatrixXd p(n, n);
  const int w = frame.width, hgt = frame.height;
  for (int yr = 0; yr < hgt; ++yr) {
    for (int xr = 0; xr < w; ++xr) {
      const int r = yr * w + xr;
      for (int yc = 0; yc < hgt; ++yc) {
        for (int xc = 0; xc < w; ++xc) {
          const int c = yc * w + xc;
          const int dy = ((yr - yc) % hgt + hgt) % hgt;
          const int dx = ((xr - xc) % w + w) % w;
          p(r, c) = col0[static_cast<std::size_t>(dy) * w + dx];
        }
      }
    }
  }
  return dense_solve(frame, h, p);
}

ArSurrogate ArSurrogate::fit(const BrightnessPrior& prior, int order) {
  if (order < 1) throw std::invalid_argument("ArSurrogate: order < 1");
  if (prior.height != 1) {
    throw std::invalid_argument("ArSurrogate: chain priors only");
  }
  const auto m = spectral_multipliers(prior);
  const int n = static_cast<int>(m.size());
  if (order >= n) throw std::invalid_argument("ArSurrogate: order >= n");

  // Target autocovariance of the periodic stationary prior.
  std::vector<double> r(static_cast<std::size_t>(order) + 1, 0.0);
  for (int k = 0; k <= order; ++k) {
    double s = 0.0;
    for (int f = 0; f < n; ++f) {
      s += m[static_cast<std::size_t>(f)] *
           std::cos(2.0 * std::numbers::pi * f * k / n);
    }
    r[static_cast<std::size_t>(k)] = s / n;
  }

  // Yule-Walker for the coefficients.
  Eigen::MatrixXd t(order, order);
  Eigen::VectorXd rhs(order);
  for (int i = 0; i < order; ++i) {
    rhs(i) = r[static_cast<std::size_t>(i) + 1];
    for (int j = 0; j < order; ++j) {
      t(i, j) = r[static_cast<std::size_t>(std::abs(i - j))];
    }
  }
  const Eigen::VectorXd a = t.ldlt().solve(rhs);

  ArSurrogate s;
  s.coeff.assign(a.data(), a.data() + order);
  s.noise_var = r[0];
  for (int k = 1; k <= order; ++k) {
    s.noise_var -= s.coeff[static_cast<std::size_t>(k) - 1] *
                   r[static_cast<std::size_t>(k)];
  }
  if (!(s.noise_var > 0.0)) {
    throw std::runtime_error("ArSurrogate: non-positive innovation variance");
  }
  s.head_cov = r;
  return s;
}

std::vector<double> ArSurrogate::autocovariance(int count) const {
  if (count < 1) throw std::invalid_argument("autocovariance: count < 1");
  const int p = static_cast<int>(coeff.size());
  std::vector<double> r(static_cast<std::size_t>(count), 0.0);
  for (int k = 0; k < count && k <= p; ++k) {
    r[static_cast<std::size_t>(k)] = head_cov[static_cast<std::size_t>(k)];
  }
  for (int k = p + 1; k < count; ++k) {
    double s = 0.0;
    for (int m = 1; m <= p; ++m) {
      s += coeff[static_cast<std::size_t>(m) - 1] *
           r[static_cast<std::size_t>(k - m)];
    }
    r[static_cast<std::size_t>(k)] = s;
  }
  return r;
}

PosteriorSummary kalman_estep(const MosaicFrame& frame,
                              const PolarImage& angles,
                              const BrightnessPrior& prior, int ar_order) {
  check_sigma(frame.sigma);
  if (frame.height != 1) {
    throw std::invalid_argument("kalman_estep: 1D frames only");
  }
  if (prior.width != frame.width || prior.height != 1) {
    throw std::invalid_argument("kalman_estep: prior shape mismatch");
  }
  const int n = frame.width;
  const int p = ar_order;
  const auto h = loading_factors(frame, angles);
  const ArSurrogate ar = ArSurrogate::fit(prior, p);
  const double r_meas = frame.sigma * frame.sigma;

  // State x_j = (l_j, l_{j-1}, ..., l_{j-p+1}) with companion dynamics.
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(p, p);
  for (int k = 0; k < p; ++k) f(0, k) = ar.coeff[static_cast<std::size_t>(k)];
  for (int k = 1; k < p; ++k) f(k, k - 1) = 1.0;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(p, p);
  q(0, 0) = ar.noise_var;

  // Stationary initial covariance: Toeplitz in the matched lags.
  Eigen::MatrixXd p0(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      p0(i, j) = ar.head_cov[static_cast<std::size_t>(std::abs(i - j))];
    }
  }

  std::vector<Eigen::VectorXd> x_pred(n), x_filt(n);
  std::vector<Eigen::MatrixXd> p_pred(n), p_filt(n);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd pc = p0;
  for (int j = 0; j < n; ++j) {
    if (j > 0) {
      x = f * x;
      pc = f * pc * f.transpose() + q;
      pc = 0.5 * (pc + pc.transpose().eval());
    }
    x_pred[j] = x;
    p_pred[j] = pc;

    const double hj = h[static_cast<std::size_t>(j)];
    const double innov = frame.samples[static_cast<std::size_t>(j)] - hj * x(0);
    const double s = hj * hj * pc(0, 0) + r_meas;
    const Eigen::VectorXd gain = pc.col(0) * (hj / s);
    x += gain * innov;
    pc -= gain * (hj * pc.col(0).transpose());
    pc = 0.5 * (pc + pc.transpose().eval());
    x_filt[j] = x;
    p_filt[j] = pc;
  }

  // RTS backward pass.
  PosteriorSummary out;
  out.mean = Grid(n, 1);
  out.second_moment = Grid(n, 1);
  Eigen::VectorXd xs = x_filt[n - 1];
  Eigen::MatrixXd ps = p_filt[n - 1];
  out.mean[static_cast<std::size_t>(n - 1)] = xs(0);
  out.second_moment[static_cast<std::size_t>(n - 1)] =
      ps(0, 0) + xs(0) * xs(0);
  for (int j = n - 2; j >= 0; --j) {
    const Eigen::MatrixXd gain =
        p_filt[j] * f.transpose() * p_pred[j + 1].ldlt().solve(
            Eigen::MatrixXd::Identity(p, p));
    xs = x_filt[j] + gain * (xs - x_pred[j + 1]);
    ps = p_filt[j] + gain * (ps - p_pred[j + 1]) * gain.transpose();
    ps = 0.5 * (ps + ps.transpose().eval());
    out.mean[static_cast<std::size_t>(j)] = xs(0);
    out.second_moment[static_cast<std::size_t>(j)] = ps(0, 0) + xs(0) * xs(0);
  }
  out.converged = true;
  out.iterations = 0;
  return out;
}

namespace {

// Quadratic model: f(x) = 0.5 x^T A x - b^T x with
// A = diag(h^2)/sigma^2 + Sigma^-1.
struct QuadraticSystem {
  const std::vector<double>& h;
  double inv_s2;
  SpectralOps& ops;
  std::vector<double> scratch;

  QuadraticSystem(const std::vector<double>& h_, double sigma,
                  SpectralOps& ops_)
      : h(h_), inv_s2(1.0 / (sigma * sigma)), ops(ops_), scratch(h_.size()) {}

  void apply(const std::vector<double>& v, std::vector<double>& out) {
    ops.apply_precision(v, scratch);
    for (std::size_t i = 0; i < v.size(); ++i) {
      out[i] = h[i] * h[i] * inv_s2 * v[i] + scratch[i];
    }
  }
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

struct LbfgsMemory {
  int capacity;
  std::deque<std::vector<double>> s, y;
  std::deque<double> rho;

  explicit LbfgsMemory(int cap) : capacity(cap) {}

  void push(std::vector<double> si, std::vector<double> yi) {
    const double sy = dot(si, yi);
    if (sy <= 0.0) return;  // skip non-curvature pairs
    if (static_cast<int>(s.size()) == capacity) {
      s.pop_front();
      y.pop_front();
      rho.pop_front();
    }
    s.push_back(std::move(si));
    y.push_back(std::move(yi));
    rho.push_back(1.0 / sy);
  }

  // d = H g via the two-loop recursion around the supplied H0 apply.
  template <class H0>
  void apply(const std::vector<double>& g, std::vector<double>& d,
             H0&& h0_apply) const {
    d = g;
    const int k = static_cast<int>(s.size());
    std::vector<double> alpha(static_cast<std::size_t>(k));
    for (int i = k - 1; i >= 0; --i) {
      alpha[static_cast<std::size_t>(i)] =
          rho[static_cast<std::size_t>(i)] *
          dot(s[static_cast<std::size_t>(i)], d);
      const auto& yi = y[static_cast<std::size_t>(i)];
      for (std::size_t j = 0; j < d.size(); ++j) {
        d[j] -= alpha[static_cast<std::size_t>(i)] * yi[j];
      }
    }
    std::vector<double> tmp = d;
    h0_apply(tmp, d);
    for (int i = 0; i < k; ++i) {
      const double beta = rho[static_cast<std::size_t>(i)] *
                          dot(y[static_cast<std::size_t>(i)], d);
      const auto& si = s[static_cast<std::size_t>(i)];
      for (std::size_t j = 0; j < d.size(); ++j) {
        d[j] += (alpha[static_cast<std::size_t>(i)] - beta) * si[j];
      }
    }
  }
};

struct SolveResult {
  std::vector<double> x;
  bool converged = false;
  int iterations = 0;
};

// Minimize 0.5 x^T A x - b^T x with L-BFGS, exact line search along each
// direction (valid for quadratics), preconditioner as H0.
template <class H0>
SolveResult lbfgs_solve(QuadraticSystem& sys, const std::vector<double>& b,
                        const std::vector<double>* init, int memory,
                        int max_iter, double grad_tol, H0&& h0_apply) {
  const std::size_t n = b.size();
  SolveResult res;
  if (init) {
    res.x = *init;
  } else {
    res.x.assign(n, 0.0);
    h0_apply(b, res.x);
  }

  std::vector<double> g(n), ax(n), d(n), ad(n);
  sys.apply(res.x, ax);
  for (std::size_t i = 0; i < n; ++i) g[i] = ax[i] - b[i];

  LbfgsMemory mem(memory);
  for (int it = 0; it < max_iter; ++it) {
    if (norm2(g) <= grad_tol) {
      res.converged = true;
      res.iterations = it;
      return res;
    }
    mem.apply(g, d, h0_apply);
    for (double& v : d) v = -v;
    double gd = dot(g, d);
    if (gd >= 0.0) {
      // Fall back to the preconditioned steepest descent direction.
      h0_apply(g, d);
      for (double& v : d) v = -v;
      gd = dot(g, d);
    }
    sys.apply(d, ad);
    const double dad = dot(d, ad);
    if (!(dad > 0.0)) break;
    const double step = -gd / dad;

    std::vector<double> s_vec(n), y_vec(n);
    for (std::size_t i = 0; i < n; ++i) {
      s_vec[i] = step * d[i];
      y_vec[i] = step * ad[i];  // exact gradient change for a quadratic
      res.x[i] += s_vec[i];
      g[i] += y_vec[i];
    }
    mem.push(std::move(s_vec), std::move(y_vec));
    res.iterations = it + 1;
  }
  res.converged = norm2(g) <= grad_tol;
  return res;
}

// CFA phase class of a site: variance fields share structure within a
// class, not across classes, so probing and interpolation stay inside
// one class.
int phase_count(const MosaicFrame& frame) {
  return frame.layout == MosaicLayout::Alternating1D ? 2 : 4;
}

int phase_of(const MosaicFrame& frame, int x, int y) {
  return frame.layout == MosaicLayout::Alternating1D ? (x & 1)
                                                     : (y & 1) * 2 + (x & 1);
}

// Anchor positions 0, s, 2s, ... on [0, len), always including len-1.
std::vector<int> anchor_positions(int len, int stride) {
  std::vector<int> pos;
  for (int i = 0; i < len; i += stride) pos.push_back(i);
  if (pos.back() != len - 1) pos.push_back(len - 1);
  return pos;
}

// Posterior correlation length of the stationary model with data weight
// cbar: the lag where the normalized posterior covariance drops under
// one half. Sets the averaging width for the variance baseline.
double stationary_corr_length(const std::vector<double>& mult, double cbar,
                              int width) {
  const int n = static_cast<int>(mult.size());
  auto cov_at = [&](int lag) {
    double s = 0.0;
    for (int f = 0; f < n; ++f) {
      // 1D lag response along the fastest axis of the frequency grid.
      const double w = 2.0 * std::numbers::pi * (f % width) / width;
      s += std::cos(w * lag) / (cbar + 1.0 / mult[static_cast<std::size_t>(f)]);
    }
    return s / n;
  };
  const double c0 = cov_at(0);
  for (int lag = 1; lag <= 16; ++lag) {
    if (cov_at(lag) < 0.5 * c0) return static_cast<double>(lag);
  }
  return 16.0;
}

// Gaussian smoothing of a site field within the full lattice (mirror
// borders), used to form the effective local data weight.
std::vector<double> gaussian_smooth(const std::vector<double>& v, int width,
                                    int height, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double k = std::exp(-0.5 * (i / sigma) * (i / sigma));
    kernel[static_cast<std::size_t>(i + radius)] = k;
    ksum += k;
  }
  for (double& k : kernel) k /= ksum;

  std::vector<double> tmp(v.size()), out(v.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        s += kernel[static_cast<std::size_t>(d + radius)] *
             v[static_cast<std::size_t>(y) * width + mirror_index(x + d, width)];
      }
      tmp[static_cast<std::size_t>(y) * width + x] = s;
    }
  }
  if (height == 1) return tmp;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        s += kernel[static_cast<std::size_t>(d + radius)] *
             tmp[static_cast<std::size_t>(mirror_index(y + d, height)) * width + x];
      }
      out[static_cast<std::size_t>(y) * width + x] = s;
    }
  }
  return out;
}

// Baseline variance under the locally stationary model: an effective
// local data weight c = <h^2>_local / s^2 against the full prior
// spectrum,
//   V(c) = (1/N) sum_f 1/(c + 1/m_f),
// tabulated over c and linearly interpolated.
class StationaryVarianceTable {
 public:
  StationaryVarianceTable(const std::vector<double>& mult, double inv_s2)
      : inv_s2_(inv_s2) {
    values_.resize(kPoints);
    for (int t = 0; t < kPoints; ++t) {
      const double c = inv_s2_ * t / (kPoints - 1);
      double s = 0.0;
      for (double m : mult) s += 1.0 / (c + 1.0 / m);
      values_[static_cast<std::size_t>(t)] = s / mult.size();
    }
  }

  double operator()(double h2) const {
    const double pos = std::clamp(h2, 0.0, 1.0) * (kPoints - 1);
    const int lo = std::min(static_cast<int>(pos), kPoints - 2);
    const double f = pos - lo;
    return (1.0 - f) * values_[static_cast<std::size_t>(lo)] +
           f * values_[static_cast<std::size_t>(lo) + 1];
  }

 private:
  static constexpr int kPoints = 257;
  double inv_s2_;
  std::vector<double> values_;
};

template <class H0>
double probe_variance(QuadraticSystem& sys, int site, int memory,
                      int max_iter, double tol, H0&& h0) {
  std::vector<double> e(sys.h.size(), 0.0);
  e[static_cast<std::size_t>(site)] = 1.0;
  SolveResult r = lbfgs_solve(sys, e, nullptr, memory, max_iter, tol, h0);
  return r.x[static_cast<std::size_t>(site)];
}

// Posterior variances: exact probe solves on a strided sublattice of
// each phase class; elsewhere the probe/baseline ratio is bilinearly
// interpolated over the class lattice and applied to the baseline.
template <class H0>
std::vector<double> qn_variance(const MosaicFrame& frame,
                                const std::vector<double>& h, double s2,
                                QuadraticSystem& sys, const QnOptions& opts,
                                H0&& h0) {
  const std::size_t n = frame.n_sites();
  std::vector<double> var(n, 0.0);
  const int probe_iter = std::max(opts.max_iter, 50);

  if (opts.probe_stride <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      var[i] = probe_variance(sys, static_cast<int>(i), opts.memory,
                              probe_iter, opts.probe_rel_tol, h0);
    }
    return var;
  }

  StationaryVarianceTable baseline(sys.ops.multipliers(), 1.0 / s2);

  // Effective local data weight: h^2 averaged over the posterior
  // correlation scale, so the baseline follows variance transitions at
  // color-segment boundaries instead of jumping with the local filter.
  double mean_h2 = 0.0;
  for (double v : h) mean_h2 += v * v;
  mean_h2 /= static_cast<double>(n);
  const double corr_len = stationary_corr_length(
      sys.ops.multipliers(), mean_h2 / s2, frame.width);
  std::vector<double> h2(n);
  for (std::size_t i = 0; i < n; ++i) h2[i] = h[i] * h[i];
  const std::vector<double> h2_local =
      gaussian_smooth(h2, frame.width, frame.height, corr_len);
  auto baseline_at = [&](int site) {
    return baseline(h2_local[static_cast<std::size_t>(site)]);
  };

  const int phases = phase_count(frame);
  const int px = 2;
  const int py = (frame.layout == MosaicLayout::Alternating1D) ? 1 : 2;

  for (int phase = 0; phase < phases; ++phase) {
    const int ox = (frame.layout == MosaicLayout::Alternating1D)
                       ? phase
                       : phase % 2;
    const int oy = (frame.layout == MosaicLayout::Alternating1D)
                       ? 0
                       : phase / 2;
    if (ox >= frame.width || oy >= frame.height) continue;
    const int cw = (frame.width - ox + px - 1) / px;
    const int ch = (frame.height - oy + py - 1) / py;

    const auto ax = anchor_positions(cw, opts.probe_stride);
    const auto ay = anchor_positions(ch, opts.probe_stride);

    // Probe/baseline ratios at the anchors.
    std::vector<double> ratio(ax.size() * ay.size(), 1.0);
    std::vector<char> anchored(n, 0);
    for (std::size_t iy = 0; iy < ay.size(); ++iy) {
      for (std::size_t ix = 0; ix < ax.size(); ++ix) {
        const int x = ox + px * ax[ix];
        const int y = oy + py * ay[iy];
        const int site = y * frame.width + x;
        const double v = probe_variance(sys, site, opts.memory, probe_iter,
                                        opts.probe_rel_tol, h0);
        ratio[iy * ax.size() + ix] = v / std::max(baseline_at(site), 1e-300);
        var[static_cast<std::size_t>(site)] = v;
        anchored[static_cast<std::size_t>(site)] = 1;
      }
    }

    // Bilinear interpolation of the ratio over the class lattice.
    auto segment = [](const std::vector<int>& a, int c) {
      std::size_t k = 0;
      while (k + 2 < a.size() && a[k + 1] <= c) ++k;
      return k;
    };
    for (int cy = 0; cy < ch; ++cy) {
      const std::size_t sy = segment(ay, cy);
      const int y0 = ay[sy], y1 = ay[sy + (ay.size() > 1 ? 1 : 0)];
      const double fy = (y1 > y0) ? double(cy - y0) / (y1 - y0) : 0.0;
      for (int cx = 0; cx < cw; ++cx) {
        const int x = ox + px * cx;
        const int y = oy + py * cy;
        const int site = y * frame.width + x;
        if (anchored[static_cast<std::size_t>(site)]) continue;
        const std::size_t sx = segment(ax, cx);
        const int x0 = ax[sx], x1 = ax[sx + (ax.size() > 1 ? 1 : 0)];
        const double fx = (x1 > x0) ? double(cx - x0) / (x1 - x0) : 0.0;
        const double r00 = ratio[sy * ax.size() + sx];
        const double r01 = ratio[sy * ax.size() + sx + (ax.size() > 1 ? 1 : 0)];
        const double r10 =
            ratio[(sy + (ay.size() > 1 ? 1 : 0)) * ax.size() + sx];
        const double r11 = ratio[(sy + (ay.size() > 1 ? 1 : 0)) * ax.size() +
                                 sx + (ax.size() > 1 ? 1 : 0)];
        const double r = (1 - fy) * ((1 - fx) * r00 + fx * r01) +
                         fy * ((1 - fx) * r10 + fx * r11);
        var[static_cast<std::size_t>(site)] = r * baseline_at(site);
      }
    }
  }
  return var;
}

}  // namespace

PosteriorSummary qn_estep(const MosaicFrame& frame, const PolarImage& angles,
                          const BrightnessPrior& prior,
                          const QnOptions& opts) {
  check_sigma(frame.sigma);
  if (prior.width != frame.width || prior.height != frame.height) {
    throw std::invalid_argument("qn_estep: prior shape mismatch");
  }
  if (opts.memory < 2) throw std::invalid_argument("qn_estep: memory < 2");
  const std::size_t n = frame.n_sites();
  const auto h = loading_factors(frame, angles);
  const double s2 = frame.sigma * frame.sigma;

  SpectralOps ops(prior);
  QuadraticSystem sys(h, frame.sigma, ops);

  std::vector<double> b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = h[i] * frame.samples[i] / s2;

  double mean_h2 = 0.0;
  for (double v : h) mean_h2 += v * v;
  mean_h2 /= static_cast<double>(n);

  // Stationary preconditioner H0 = (mean_h2/s^2 I + Sigma^-1)^-1, shared
  // by the mean solve and the variance probes.
  const auto& mult = ops.multipliers();
  std::vector<double> pre_mult(n);
  for (std::size_t i = 0; i < n; ++i) {
    pre_mult[i] = 1.0 / (mean_h2 / s2 + 1.0 / mult[i]);
  }
  auto h0 = [&](const std::vector<double>& v, std::vector<double>& out) {
    if (out.size() != v.size()) out.resize(v.size());
    ops.apply_fourier_diag(pre_mult, v, out);
  };

  double grad_tol = opts.grad_tol;
  if (grad_tol <= 0.0) grad_tol = 1e-8 * norm2(b);

  const SolveResult mean_res =
      lbfgs_solve(sys, b, opts.init, opts.memory, opts.max_iter, grad_tol, h0);

  PosteriorSummary out;
  out.mean = Grid(frame.width, frame.height);
  out.second_moment = Grid(frame.width, frame.height);
  for (std::size_t i = 0; i < n; ++i) out.mean[i] = mean_res.x[i];
  out.converged = mean_res.converged;
  out.iterations = mean_res.iterations;

  const std::vector<double> var = qn_variance(frame, h, s2, sys, opts, h0);
  for (std::size_t i = 0; i < n; ++i) {
    out.second_moment[i] = var[i] + out.mean[i] * out.mean[i];
  }
  return out;
}

PosteriorSummary qn_estep(const MosaicFrame& frame, const PolarImage& angles,
                          const BrightnessPrior& prior, int memory,
                          int max_iter, double grad_tol) {
  QnOptions opts;
  opts.memory = memory;
  opts.max_iter = max_iter;
  opts.grad_tol = grad_tol;
  return qn_estep(frame, angles, prior, opts);
}

std::pair<Grid, Grid> assemble_moments(const MosaicFrame& frame,
                                       const PosteriorSummary& summary) {
  if (!summary.mean.same_shape(frame.samples)) {
    throw std::invalid_argument("assemble_moments: shape mismatch");
  }
  Grid p(frame.width, frame.height);
  Grid d2 = summary.second_moment;
  for (std::size_t i = 0; i < frame.n_sites(); ++i) {
    p[i] = frame.samples[i] * summary.mean[i];
  }
  return {std::move(p), std::move(d2)};
}

ConstantAggregates aggregate_even_odd(const Grid& p, const Grid& delta2) {
  if (!p.same_shape(delta2) || p.height() != 1) {
    throw std::invalid_argument("aggregate_even_odd: 1D grids required");
  }
  ConstantAggregates agg;
  for (int x = 0; x < p.width(); ++x) {
    if (x % 2 == 0) {
      agg.Pe += p.at(x, 0);
      agg.De2 += delta2.at(x, 0);
    } else {
      agg.Po += p.at(x, 0);
      agg.Do2 += delta2.at(x, 0);
    }
  }
  return agg;
}

}  // namespace emdem
