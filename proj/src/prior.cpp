#include "emdem/prior.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace emdem {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// FFTW plan creation is not reentrant; execution on private plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

double folded_frequency(int k, int n) {
  // omega_k = 2*pi*k/n folded to [-pi, pi]; we only need |omega|.
  double w = kTwoPi * k / n;
  if (w > std::numbers::pi) w = kTwoPi - w;
  return w;
}
}  // namespace

double BrightnessPrior::resolved_omega_min() const {
  if (omega_min > 0.0) return omega_min;
  return std::min(kTwoPi / std::max(width, height), std::numbers::pi);
}

void BrightnessPrior::validate() const {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("BrightnessPrior: dimensions must be positive");
  }
  if (eps0 <= 0.0) throw std::invalid_argument("BrightnessPrior: eps0 <= 0");
  if (nu <= 0.0) throw std::invalid_argument("BrightnessPrior: nu <= 0");
  const double wmin = resolved_omega_min();
  if (wmin <= 0.0 || wmin > std::numbers::pi) {
    throw std::invalid_argument("BrightnessPrior: omega_min out of (0, pi]");
  }
}

std::vector<double> spectral_multipliers(const BrightnessPrior& prior) {
  prior.validate();
  const double wmin = prior.resolved_omega_min();
  std::vector<double> m(static_cast<std::size_t>(prior.n_sites()));
  for (int ky = 0; ky < prior.height; ++ky) {
    const double wy = prior.height > 1 ? folded_frequency(ky, prior.height) : 0.0;
    for (int kx = 0; kx < prior.width; ++kx) {
      const double wx = folded_frequency(kx, prior.width);
      const double w = std::max(std::hypot(wx, wy), wmin);
      m[static_cast<std::size_t>(ky) * prior.width + kx] =
          prior.eps0 * std::pow(w, -prior.nu);
    }
  }
  return m;
}

double calibrate_eps0(const BrightnessPrior& shape, double target_std) {
  if (target_std <= 0.0) {
    throw std::invalid_argument("calibrate_eps0: target_std <= 0");
  }
  BrightnessPrior unit = shape;
  unit.eps0 = 1.0;
  const auto m = spectral_multipliers(unit);
  double sum = 0.0;
  for (double v : m) sum += v;
  return target_std * target_std * m.size() / sum;
}

struct SpectralOps::Impl {
  int width = 0, height = 0, n = 0;
  std::vector<double> mult;
  fftw_complex* buf = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;

  explicit Impl(const BrightnessPrior& prior)
      : width(prior.width),
        height(prior.height),
        n(prior.n_sites()),
        mult(spectral_multipliers(prior)) {
    std::lock_guard<std::mutex> lock(planner_mutex());
    buf = fftw_alloc_complex(static_cast<std::size_t>(n));
    if (height == 1) {
      fwd = fftw_plan_dft_1d(width, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
      bwd = fftw_plan_dft_1d(width, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    } else {
      fwd = fftw_plan_dft_2d(height, width, buf, buf, FFTW_FORWARD,
                             FFTW_ESTIMATE);
      bwd = fftw_plan_dft_2d(height, width, buf, buf, FFTW_BACKWARD,
                             FFTW_ESTIMATE);
    }
    if (!fwd || !bwd) throw std::runtime_error("SpectralOps: fftw plan failed");
  }

  ~Impl() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    if (fwd) fftw_destroy_plan(fwd);
    if (bwd) fftw_destroy_plan(bwd);
    if (buf) fftw_free(buf);
  }

  // out = F^-1 diag(g(i)) F in; g maps a frequency index to its scale.
  template <class G>
  void apply(std::span<const double> in, std::span<double> out, G&& g) {
    if (static_cast<int>(in.size()) != n || static_cast<int>(out.size()) != n) {
      throw std::invalid_argument("SpectralOps: length mismatch");
    }
    for (int i = 0; i < n; ++i) {
      buf[i][0] = in[i];
      buf[i][1] = 0.0;
    }
    fftw_execute(fwd);
    for (int i = 0; i < n; ++i) {
      const double s = g(i);
      buf[i][0] *= s;
      buf[i][1] *= s;
    }
    fftw_execute(bwd);
    const double inv_n = 1.0 / n;
    for (int i = 0; i < n; ++i) out[i] = buf[i][0] * inv_n;
  }
};

SpectralOps::SpectralOps(const BrightnessPrior& prior)
    : impl_(std::make_unique<Impl>(prior)) {}
SpectralOps::~SpectralOps() = default;
SpectralOps::SpectralOps(SpectralOps&&) noexcept = default;
SpectralOps& SpectralOps::operator=(SpectralOps&&) noexcept = default;

int SpectralOps::n_sites() const { return impl_->n; }
const std::vector<double>& SpectralOps::multipliers() const {
  return impl_->mult;
}

void SpectralOps::apply_precision(std::span<const double> in,
                                  std::span<double> out) {
  const auto& m = impl_->mult;
  impl_->apply(in, out, [&m](int i) { return 1.0 / m[static_cast<std::size_t>(i)]; });
}

void SpectralOps::apply_covariance(std::span<const double> in,
                                   std::span<double> out) {
  const auto& m = impl_->mult;
  impl_->apply(in, out, [&m](int i) { return m[static_cast<std::size_t>(i)]; });
}

void SpectralOps::apply_fourier_diag(std::span<const double> d,
                                     std::span<const double> in,
                                     std::span<double> out) {
  if (static_cast<int>(d.size()) != impl_->n) {
    throw std::invalid_argument("apply_fourier_diag: spectrum length");
  }
  impl_->apply(in, out, [&d](int i) { return d[static_cast<std::size_t>(i)]; });
}

std::vector<double> SpectralOps::apply_precision(std::span<const double> in) {
  std::vector<double> out(in.size());
  apply_precision(in, std::span<double>(out));
  return out;
}

std::vector<double> SpectralOps::apply_covariance(std::span<const double> in) {
  std::vector<double> out(in.size());
  apply_covariance(in, std::span<double>(out));
  return out;
}

double SpectralOps::marginal_variance() const {
  double s = 0.0;
  for (double m : impl_->mult) s += m;
  return s / impl_->n;
}

double SpectralOps::precision_diag() const {
  double s = 0.0;
  for (double m : impl_->mult) s += 1.0 / m;
  return s / impl_->n;
}

LinkGraph::LinkGraph(int n_sites, std::vector<Link> links)
    : n_sites_(n_sites), links_(std::move(links)) {
  if (n_sites_ <= 0) throw std::invalid_argument("LinkGraph: empty lattice");
  for (auto& lk : links_) {
    if (lk.i == lk.j) throw std::invalid_argument("LinkGraph: self link");
    if (lk.i > lk.j) std::swap(lk.i, lk.j);
    if (lk.i < 0 || lk.j >= n_sites_) {
      throw std::invalid_argument("LinkGraph: site out of range");
    }
    if (lk.w < 0.0) throw std::invalid_argument("LinkGraph: negative weight");
  }
  std::sort(links_.begin(), links_.end(), [](const Link& a, const Link& b) {
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });
  for (std::size_t k = 1; k < links_.size(); ++k) {
    if (links_[k].i == links_[k - 1].i && links_[k].j == links_[k - 1].j) {
      throw std::invalid_argument("LinkGraph: duplicate link");
    }
  }
}

const std::vector<std::vector<std::pair<int, double>>>& LinkGraph::adjacency()
    const {
  if (!adj_built_) {
    adj_.assign(static_cast<std::size_t>(n_sites_), {});
    for (const Link& lk : links_) {
      adj_[static_cast<std::size_t>(lk.i)].emplace_back(lk.j, lk.w);
      adj_[static_cast<std::size_t>(lk.j)].emplace_back(lk.i, lk.w);
    }
    adj_built_ = true;
  }
  return adj_;
}

double color_potential(const std::array<double, 3>& ui,
                       const std::array<double, 3>& uj) {
  auto norm = [](const std::array<double, 3>& u) {
    return std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  };
  if (std::abs(norm(ui) - 1.0) > 1e-9 || std::abs(norm(uj) - 1.0) > 1e-9) {
    throw std::invalid_argument("color_potential: inputs must be unit norm");
  }
  const double cx = ui[1] * uj[2] - ui[2] * uj[1];
  const double cy = ui[2] * uj[0] - ui[0] * uj[2];
  const double cz = ui[0] * uj[1] - ui[1] * uj[0];
  return std::min(1.0, std::sqrt(cx * cx + cy * cy + cz * cz));
}

double mrf_energy(const PolarImage& angles, const LinkGraph& graph) {
  if (graph.n_sites() != static_cast<int>(angles.n_sites())) {
    throw std::invalid_argument("mrf_energy: graph/image size mismatch");
  }
  double e = 0.0;
  for (const Link& lk : graph.links()) {
    const auto ui = unit_color_vector(angles.theta[lk.i], angles.phi_at(lk.i));
    const auto uj = unit_color_vector(angles.theta[lk.j], angles.phi_at(lk.j));
    e += lk.w * color_potential(ui, uj);
  }
  return e;
}

}  // namespace emdem
