#include "emdem/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace emdem {

namespace {
constexpr double kHalfPi = std::numbers::pi / 2.0;
constexpr double kQuarterPi = std::numbers::pi / 4.0;

double export_peak(const MosaicFrame& frame) {
  return static_cast<double>((1u << frame.bit_depth) - 1u);
}

double sample_std(const Grid& g) {
  double mean = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) mean += g[i];
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    var += (g[i] - mean) * (g[i] - mean);
  }
  return std::sqrt(var / static_cast<double>(g.size()));
}

}  // namespace

void EmConfig::validate() const {
  if (max_em_iters < 1) throw std::invalid_argument("EmConfig: max_em_iters < 1");
  if (!(angle_tol > 0.0)) throw std::invalid_argument("EmConfig: angle_tol <= 0");
  if (!(prior_nu > 0.0)) throw std::invalid_argument("EmConfig: prior_nu <= 0");
  if (!(prior_std_scale > 0.0)) {
    throw std::invalid_argument("EmConfig: prior_std_scale <= 0");
  }
  if (viterbi_levels < 2) throw std::invalid_argument("EmConfig: viterbi_levels < 2");
  if (qn_memory < 2) throw std::invalid_argument("EmConfig: qn_memory < 2");
  if (qn_max_iter < 1) throw std::invalid_argument("EmConfig: qn_max_iter < 1");
  if (!(qn_grad_tol_rel > 0.0)) {
    throw std::invalid_argument("EmConfig: qn_grad_tol_rel <= 0");
  }
  if (qn_probe_stride < 1) {
    throw std::invalid_argument("EmConfig: qn_probe_stride < 1");
  }
  if (pad < 0 || pad % 2 != 0) {
    throw std::invalid_argument("EmConfig: pad must be even and >= 0");
  }
  if (ar_order < 1) throw std::invalid_argument("EmConfig: ar_order < 1");
}

void RunManifest::put(const std::string& key, const std::string& value) {
  entries.emplace_back(key, value);
}
void RunManifest::put(const std::string& key, double value) {
  std::ostringstream os;
  os.precision(17);
  os << value;
  entries.emplace_back(key, os.str());
}
void RunManifest::put(const std::string& key, int value) {
  entries.emplace_back(key, std::to_string(value));
}
std::string RunManifest::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::vector<double> balance_profile(std::span<const double> l) {
  if (l.size() < 2) throw std::invalid_argument("balance_profile: length < 2");
  double diff = 0.0;
  for (std::size_t j = 0; j < l.size(); ++j) {
    diff += (j % 2 == 0) ? l[j] : -l[j];
  }
  const double shift = diff / static_cast<double>(l.size());
  std::vector<double> out(l.begin(), l.end());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] -= (j % 2 == 0) ? shift : -shift;
  }
  return out;
}

double closed_form_constant(const MosaicFrame& frame) {
  if (frame.height != 1) {
    throw std::invalid_argument("closed_form_constant: 1D frames only");
  }
  double se = 0.0, so = 0.0;
  for (int x = 0; x < frame.width; ++x) {
    ((x % 2 == 0) ? se : so) += frame.samples.at(x, 0);
  }
  if (se == 0.0 && so == 0.0) {
    throw std::invalid_argument("closed_form_constant: all-zero sums");
  }
  return std::clamp(std::atan2(so, se), 0.0, kHalfPi);
}

namespace {

double resolve_sigma(const MosaicFrame& frame, const EmConfig& cfg) {
  if (cfg.sigma > 0.0) return cfg.sigma;
  const double est = estimate_noise_sigma(frame);
  // The model needs sigma > 0 even for clean synthetic data.
  return std::max(est, 1e-6 * export_peak(frame));
}

BrightnessPrior resolve_prior(const MosaicFrame& frame, const EmConfig& cfg) {
  BrightnessPrior prior;
  prior.width = frame.width;
  prior.height = frame.height;
  prior.nu = cfg.prior_nu;
  prior.omega_min = cfg.prior_omega_min;  // <= 0 keeps the default clamp
  prior.eps0 = 1.0;
  if (cfg.prior_eps0 > 0.0) {
    prior.eps0 = cfg.prior_eps0;
  } else {
    const double target =
        std::max(cfg.prior_std_scale * sample_std(frame.samples),
                 1e-9 * export_peak(frame));
    prior.eps0 = calibrate_eps0(prior, target);
  }
  return prior;
}

BetaParams resolve_beta(const MosaicFrame& frame, const EmConfig& cfg) {
  BetaParams b = cfg.beta;
  if (cfg.beta_r_auto) b.R = 0.1 * export_peak(frame);
  b.validate();
  return b;
}

PosteriorSummary run_estep(const MosaicFrame& frame, const PolarImage& angles,
                           const BrightnessPrior& prior, const EmConfig& cfg,
                           const std::vector<double>* warm) {
  switch (cfg.estep) {
    case EstepKind::Exact:
      return gaussian_posterior_exact(frame, angles, prior);
    case EstepKind::Kalman:
      return kalman_estep(frame, angles, prior, cfg.ar_order);
    case EstepKind::QuasiNewton: {
      QnOptions opts;
      opts.memory = cfg.qn_memory;
      opts.max_iter = cfg.qn_max_iter;
      opts.grad_tol = 0.0;  // resolved against ||D^T y / s^2|| inside
      opts.probe_stride = cfg.qn_probe_stride;
      opts.init = warm;
      return qn_estep(frame, angles, prior, opts);
    }
  }
  throw std::logic_error("run_estep: unknown E-step kind");
}

PolarImage constant_angles_1d(int n, double theta) {
  PolarImage angles(n, 1, /*with_phi=*/false);
  for (std::size_t i = 0; i < angles.n_sites(); ++i) angles.theta[i] = theta;
  return angles;
}

}  // namespace

MosaicFrame mirror_pad(const MosaicFrame& frame, int pad) {
  if (pad == 0) return frame;
  if (pad < 0 || pad % 2 != 0) {
    throw std::invalid_argument("mirror_pad: pad must be even and >= 0");
  }
  const bool chain = frame.layout == MosaicLayout::Alternating1D;
  const int pw = frame.width + 2 * pad;
  const int ph = chain ? 1 : frame.height + 2 * pad;
  MosaicFrame out(pw, ph, frame.layout);
  out.pattern = frame.pattern;
  out.sigma = frame.sigma;
  out.bit_depth = frame.bit_depth;
  out.black_level = frame.black_level;
  const int oy = chain ? 0 : pad;
  for (int y = 0; y < ph; ++y) {
    const int sy = mirror_index(y - oy, frame.height);
    for (int x = 0; x < pw; ++x) {
      const int sx = mirror_index(x - pad, frame.width);
      out.samples.at(x, y) = frame.samples.at(sx, sy);
    }
  }
  return out;
}

Constant1dResult em_constant(const MosaicFrame& frame, const EmConfig& cfg) {
  cfg.validate();
  frame.validate();
  if (frame.layout != MosaicLayout::Alternating1D) {
    throw std::invalid_argument("em_constant: 1D alternating frames only");
  }
  MosaicFrame f = frame;
  f.sigma = resolve_sigma(frame, cfg);
  const BrightnessPrior prior = resolve_prior(f, cfg);

  Constant1dResult res;
  double theta = kQuarterPi;
  try {
    theta = closed_form_constant(f);
  } catch (const std::invalid_argument&) {
    theta = kQuarterPi;  // fully degenerate data
  }
  res.theta_trace.push_back(theta);

  PosteriorSummary summary;
  std::vector<double> warm;
  for (res.iterations = 0; res.iterations < cfg.max_em_iters;) {
    const PolarImage angles = constant_angles_1d(f.width, theta);
    summary = run_estep(f, angles, prior, cfg,
                        warm.empty() ? nullptr : &warm);
    warm = summary.mean.data();
    const auto [p, d2] = assemble_moments(f, summary);
    const ConstantAggregates agg = aggregate_even_odd(p, d2);
    const double next = binary_search_max(
        [&](double th) {
          return surrogate_constant(th, agg.Pe, agg.Po, agg.De2, agg.Do2);
        },
        0.0, kHalfPi, 1e-10);
    res.theta_trace.push_back(next);
    const double delta = std::abs(next - theta);
    theta = next;
    ++res.iterations;
    if (delta <= cfg.angle_tol) {
      res.converged = true;
      break;
    }
  }

  const PolarImage angles = constant_angles_1d(f.width, theta);
  summary = run_estep(f, angles, prior, cfg, warm.empty() ? nullptr : &warm);
  res.theta_ml = theta;
  res.l_hat = summary.mean.data();
  res.v_hat = compose_estimate(summary, angles);
  return res;
}

Piecewise1dResult em_piecewise_1d(const MosaicFrame& frame,
                                  const EmConfig& cfg) {
  cfg.validate();
  frame.validate();
  if (frame.layout != MosaicLayout::Alternating1D) {
    throw std::invalid_argument("em_piecewise_1d: 1D alternating frames only");
  }
  MosaicFrame f = mirror_pad(frame, cfg.pad);
  f.sigma = resolve_sigma(frame, cfg);
  const BrightnessPrior prior = resolve_prior(f, cfg);
  const int n = f.width;

  // Uniform nearest-neighbor regularizer; the adaptive model is not
  // consulted in this mode.
  std::vector<Link> links;
  links.reserve(static_cast<std::size_t>(n) - 1);
  for (int i = 0; i + 1 < n; ++i) {
    links.push_back(Link{i, i + 1, cfg.beta.beta0});
  }
  const LinkGraph graph(n, std::move(links));

  double init = kQuarterPi;
  try {
    init = closed_form_constant(f);
  } catch (const std::invalid_argument&) {
    init = kQuarterPi;
  }
  std::vector<double> theta(static_cast<std::size_t>(n), init);

  Piecewise1dResult res;
  PosteriorSummary summary;
  std::vector<double> warm;
  for (res.iterations = 0; res.iterations < cfg.max_em_iters;) {
    PolarImage angles(n, 1, /*with_phi=*/false);
    angles.theta.data() = theta;
    summary = run_estep(f, angles, prior, cfg, warm.empty() ? nullptr : &warm);
    warm = summary.mean.data();
    const auto [p, d2] = assemble_moments(f, summary);
    SurrogateTerms terms;
    terms.P = &p;
    terms.Delta2 = &d2;
    terms.graph = &graph;
    terms.frame = &f;
    terms.sigma = f.sigma;
    const std::vector<double> next = viterbi_chain(terms, cfg.viterbi_levels);
    double delta = 0.0;
    for (int i = 0; i < n; ++i) {
      delta = std::max(delta, std::abs(next[static_cast<std::size_t>(i)] -
                                       theta[static_cast<std::size_t>(i)]));
    }
    theta = next;
    ++res.iterations;
    if (delta <= cfg.angle_tol) {
      res.converged = true;
      break;
    }
  }

  PolarImage angles(n, 1, /*with_phi=*/false);
  angles.theta.data() = theta;
  summary = run_estep(f, angles, prior, cfg, warm.empty() ? nullptr : &warm);
  const RgbImage v_full = compose_estimate(summary, angles);

  res.theta.assign(theta.begin() + cfg.pad,
                   theta.begin() + cfg.pad + frame.width);
  res.l_hat.assign(summary.mean.data().begin() + cfg.pad,
                   summary.mean.data().begin() + cfg.pad + frame.width);
  res.v_hat = RgbImage(frame.width, 1);
  for (int x = 0; x < frame.width; ++x) {
    res.v_hat.r.at(x, 0) = v_full.r.at(x + cfg.pad, 0);
    res.v_hat.g.at(x, 0) = v_full.g.at(x + cfg.pad, 0);
    res.v_hat.b.at(x, 0) = v_full.b.at(x + cfg.pad, 0);
  }
  return res;
}

namespace {

// Second difference of the co-located chroma channel along one axis.
double axis_gradient(const MosaicFrame& f, int x, int y, int dx, int dy) {
  const double c = f.samples.at(x, y);
  const double a = f.samples.at(mirror_index(x - 2 * dx, f.width),
                                mirror_index(y - 2 * dy, f.height));
  const double b = f.samples.at(mirror_index(x + 2 * dx, f.width),
                                mirror_index(y + 2 * dy, f.height));
  return std::abs(2.0 * c - a - b);
}

}  // namespace

RgbImage laroche_init(const MosaicFrame& frame) {
  frame.validate();
  if (frame.layout != MosaicLayout::Bayer || frame.width < 4 ||
      frame.height < 4) {
    throw std::invalid_argument("laroche_init: Bayer frame >= 4x4 required");
  }
  const int w = frame.width, h = frame.height;
  Grid green(w, h);

  // Green plane: copy at G sites; at chroma sites interpolate along the
  // axis with the smaller second difference of the local chroma.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (frame.channel_at(x, y) == Channel::G) {
        green.at(x, y) = frame.samples.at(x, y);
        continue;
      }
      const double gh = axis_gradient(frame, x, y, 1, 0);
      const double gv = axis_gradient(frame, x, y, 0, 1);
      const double left = frame.samples.at(mirror_index(x - 1, w), y);
      const double right = frame.samples.at(mirror_index(x + 1, w), y);
      const double up = frame.samples.at(x, mirror_index(y - 1, h));
      const double down = frame.samples.at(x, mirror_index(y + 1, h));
      if (gh < gv) {
        green.at(x, y) = 0.5 * (left + right);
      } else if (gv < gh) {
        green.at(x, y) = 0.5 * (up + down);
      } else {
        green.at(x, y) = 0.25 * (left + right + up + down);
      }
    }
  }

  // Chroma planes from bilinear interpolation of (C - G) differences.
  RgbImage out(w, h);
  out.g = green;
  for (int pass = 0; pass < 2; ++pass) {
    const Channel target = (pass == 0) ? Channel::R : Channel::B;
    Grid& plane = (pass == 0) ? out.r : out.b;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Channel here = frame.channel_at(x, y);
        if (here == target) {
          plane.at(x, y) = frame.samples.at(x, y);
          continue;
        }
        double diff = 0.0;
        if (here == Channel::G) {
          // Two same-row or same-column chroma neighbors.
          const int xl = mirror_index(x - 1, w), xr = mirror_index(x + 1, w);
          if (frame.channel_at(xl, y) == target) {
            diff = 0.5 * ((frame.samples.at(xl, y) - green.at(xl, y)) +
                          (frame.samples.at(xr, y) - green.at(xr, y)));
          } else {
            const int yu = mirror_index(y - 1, h), yd = mirror_index(y + 1, h);
            diff = 0.5 * ((frame.samples.at(x, yu) - green.at(x, yu)) +
                          (frame.samples.at(x, yd) - green.at(x, yd)));
          }
        } else {
          // Opposite chroma site: four diagonal neighbors.
          const int xl = mirror_index(x - 1, w), xr = mirror_index(x + 1, w);
          const int yu = mirror_index(y - 1, h), yd = mirror_index(y + 1, h);
          diff = 0.25 * ((frame.samples.at(xl, yu) - green.at(xl, yu)) +
                         (frame.samples.at(xr, yu) - green.at(xr, yu)) +
                         (frame.samples.at(xl, yd) - green.at(xl, yd)) +
                         (frame.samples.at(xr, yd) - green.at(xr, yd)));
        }
        plane.at(x, y) = green.at(x, y) + diff;
      }
    }
  }
  for (std::size_t i = 0; i < out.n_sites(); ++i) {
    out.r[i] = std::max(out.r[i], 0.0);
    out.g[i] = std::max(out.g[i], 0.0);
    out.b[i] = std::max(out.b[i], 0.0);
  }
  return out;
}

RgbImage bilinear_demosaic(const MosaicFrame& frame) {
  frame.validate();
  if (frame.layout != MosaicLayout::Bayer) {
    throw std::invalid_argument("bilinear_demosaic: Bayer frames only");
  }
  const int w = frame.width, h = frame.height;
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int pass = 0; pass < 3; ++pass) {
        const Channel target = static_cast<Channel>(pass);
        Grid& plane = (target == Channel::R)   ? out.r
                      : (target == Channel::G) ? out.g
                                               : out.b;
        const Channel here = frame.channel_at(x, y);
        if (here == target) {
          plane.at(x, y) = frame.samples.at(x, y);
          continue;
        }
        const int xl = mirror_index(x - 1, w), xr = mirror_index(x + 1, w);
        const int yu = mirror_index(y - 1, h), yd = mirror_index(y + 1, h);
        if (target == Channel::G) {
          plane.at(x, y) = 0.25 * (frame.samples.at(xl, y) +
                                   frame.samples.at(xr, y) +
                                   frame.samples.at(x, yu) +
                                   frame.samples.at(x, yd));
        } else if (here == Channel::G) {
          if (frame.channel_at(xl, y) == target) {
            plane.at(x, y) =
                0.5 * (frame.samples.at(xl, y) + frame.samples.at(xr, y));
          } else {
            plane.at(x, y) =
                0.5 * (frame.samples.at(x, yu) + frame.samples.at(x, yd));
          }
        } else {
          plane.at(x, y) = 0.25 * (frame.samples.at(xl, yu) +
                                   frame.samples.at(xr, yu) +
                                   frame.samples.at(xl, yd) +
                                   frame.samples.at(xr, yd));
        }
      }
    }
  }
  for (std::size_t i = 0; i < out.n_sites(); ++i) {
    out.r[i] = std::max(out.r[i], 0.0);
    out.g[i] = std::max(out.g[i], 0.0);
    out.b[i] = std::max(out.b[i], 0.0);
  }
  return out;
}

RgbImage compose_estimate(const PosteriorSummary& summary,
                          const PolarImage& angles) {
  if (!summary.mean.same_shape(angles.theta)) {
    throw std::invalid_argument("compose_estimate: shape mismatch");
  }
  RgbImage out(angles.width, angles.height);
  for (std::size_t i = 0; i < angles.n_sites(); ++i) {
    const double m = summary.mean[i];
    const double t = angles.theta[i];
    const double p = angles.phi_at(i);
    out.g[i] = m * h_factor(t, p, Channel::G);
    out.r[i] = m * h_factor(t, p, Channel::R);
    out.b[i] = m * h_factor(t, p, Channel::B);
  }
  return out;
}

RgbImage em_demosaic(const MosaicFrame& frame, const EmConfig& cfg,
                     const RegressionTree& tree, RunManifest* manifest) {
  cfg.validate();
  frame.validate();
  if (frame.layout != MosaicLayout::Bayer) {
    throw std::invalid_argument("em_demosaic: Bayer frames only");
  }
  if (cfg.estep == EstepKind::Kalman) {
    throw std::invalid_argument("em_demosaic: chain E-step not usable in 2D");
  }
  const auto t_start = std::chrono::steady_clock::now();

  MosaicFrame f = mirror_pad(frame, cfg.pad);
  f.sigma = resolve_sigma(frame, cfg);
  const BrightnessPrior prior = resolve_prior(f, cfg);
  const BetaParams beta = resolve_beta(f, cfg);
  const double peak = export_peak(frame);

  if (manifest) {
    manifest->put("width", frame.width);
    manifest->put("height", frame.height);
    manifest->put("pad", cfg.pad);
    manifest->put("sigma", f.sigma);
    manifest->put("prior.eps0", prior.eps0);
    manifest->put("prior.nu", prior.nu);
    manifest->put("prior.omega_min", prior.resolved_omega_min());
    manifest->put("beta.beta0", beta.beta0);
    manifest->put("beta.alpha", beta.alpha);
    manifest->put("beta.R", beta.R);
    manifest->put("beta.radius", beta.radius);
    manifest->put("beta.prune_eps", beta.prune_eps);
    manifest->put("constant_d", cfg.constant_d);
    manifest->put("max_em_iters", cfg.max_em_iters);
    manifest->put("angle_tol", cfg.angle_tol);
    manifest->put("estep", cfg.estep == EstepKind::Exact ? "exact"
                                                         : "quasi-newton");
  }

  const RgbImage boot = laroche_init(f);
  PolarImage polar = rgb_to_polar(boot);

  PosteriorSummary summary;
  std::vector<double> warm;
  bool converged = false;
  int iter = 0;
  for (; iter < cfg.max_em_iters; ++iter) {
    summary = run_estep(f, polar, prior, cfg, warm.empty() ? nullptr : &warm);
    warm = summary.mean.data();
    if (manifest && !summary.converged) {
      manifest->put("warning.iter" + std::to_string(iter),
                    "estep not converged");
    }
    const auto [p, d2] = assemble_moments(f, summary);

    // Current-state working image and brightness for the link weights.
    const RgbImage working = compose_estimate(summary, polar);
    for (std::size_t i = 0; i < polar.n_sites(); ++i) {
      polar.l[i] = std::max(summary.mean[i], 0.0);
    }
    const LinkGraph graph =
        (cfg.constant_d > 0.0)
            ? build_link_graph(polar, working, cfg.constant_d, beta)
            : build_link_graph(polar, working, tree, beta);

    SurrogateTerms terms;
    terms.P = &p;
    terms.Delta2 = &d2;
    terms.graph = &graph;
    terms.frame = &f;
    terms.sigma = f.sigma;

    const Grid theta_before = polar.theta;
    const Grid phi_before = polar.phi;
    const double value = coordinate_max_2d(
        polar, terms,
        (iter % 2 == 0) ? SweepOrder::Forward : SweepOrder::Backward);

    double delta = 0.0;
    for (std::size_t i = 0; i < polar.n_sites(); ++i) {
      delta = std::max(delta, std::abs(polar.theta[i] - theta_before[i]));
      delta = std::max(delta, std::abs(polar.phi[i] - phi_before[i]));
    }
    if (manifest) {
      manifest->put("iter" + std::to_string(iter) + ".surrogate", value);
      manifest->put("iter" + std::to_string(iter) + ".delta", delta);
      manifest->put("iter" + std::to_string(iter) + ".estep_iterations",
                    summary.iterations);
    }
    if (delta <= cfg.angle_tol) {
      converged = true;
      ++iter;
      break;
    }
  }

  // Compose the posterior mean with the final angles, crop the padding
  // and clamp to the export range.
  for (std::size_t i = 0; i < polar.n_sites(); ++i) {
    polar.l[i] = std::max(summary.mean[i], 0.0);
  }
  const RgbImage full = polar_to_rgb(polar);
  RgbImage out(frame.width, frame.height);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      out.r.at(x, y) =
          std::clamp(full.r.at(x + cfg.pad, y + cfg.pad), 0.0, peak);
      out.g.at(x, y) =
          std::clamp(full.g.at(x + cfg.pad, y + cfg.pad), 0.0, peak);
      out.b.at(x, y) =
          std::clamp(full.b.at(x + cfg.pad, y + cfg.pad), 0.0, peak);
    }
  }
  if (manifest) {
    manifest->put("iterations", iter);
    manifest->put("converged", converged ? 1 : 0);
    const auto t_end = std::chrono::steady_clock::now();
    manifest->put("wall_time_s",
                  std::chrono::duration<double>(t_end - t_start).count());
  }
  return out;
}

double estimate_noise_sigma(const MosaicFrame& frame) {
  frame.validate();
  // Same-channel horizontal second differences; white noise of std s
  // gives them std s * sqrt(1.5).
  std::vector<double> resid;
  resid.reserve(frame.n_sites());
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 2; x + 2 < frame.width; ++x) {
      const double r = frame.samples.at(x, y) -
                       0.5 * (frame.samples.at(x - 2, y) +
                              frame.samples.at(x + 2, y));
      resid.push_back(std::abs(r));
    }
  }
  if (resid.empty()) return 0.0;
  std::nth_element(resid.begin(), resid.begin() + resid.size() / 2,
                   resid.end());
  const double mad = resid[resid.size() / 2];
  return mad / 0.6744897501960817 / std::sqrt(1.5);
}

}  // namespace emdem
