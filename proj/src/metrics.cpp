#include "emdem/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace emdem {

namespace {

void check_shapes(const RgbImage& a, const RgbImage& b) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("metrics: image dimensions differ");
  }
}

}  // namespace

std::array<double, 3> channel_mse(const RgbImage& ref, const RgbImage& test) {
  check_shapes(ref, test);
  std::array<double, 3> mse{0.0, 0.0, 0.0};
  const double n = static_cast<double>(ref.n_sites());
  for (std::size_t i = 0; i < ref.n_sites(); ++i) {
    const double dr = ref.r[i] - test.r[i];
    const double dg = ref.g[i] - test.g[i];
    const double db = ref.b[i] - test.b[i];
    mse[0] += dr * dr;
    mse[1] += dg * dg;
    mse[2] += db * db;
  }
  mse[0] /= n;
  mse[1] /= n;
  mse[2] /= n;
  return mse;
}

double cpsnr(const RgbImage& ref, const RgbImage& test, double peak) {
  if (!(peak > 0.0)) throw std::invalid_argument("cpsnr: peak <= 0");
  const auto mse = channel_mse(ref, test);
  const double total = (mse[0] + mse[1] + mse[2]) / 3.0;
  if (total == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / total));
}

namespace {

constexpr double kFwhmToSigma = 0.42466090014400953;  // 1 / (2 sqrt(2 ln 2))

// Truncated unit-sum 1D Gaussian with FWHM hw_deg * ppd pixels.
std::vector<double> gaussian_kernel(double hw_deg, double ppd, int max_radius) {
  const double sigma = std::max(hw_deg * ppd * kFwhmToSigma, 1e-6);
  int radius = static_cast<int>(std::ceil(4.0 * sigma));
  radius = std::min(radius, max_radius);
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

Grid convolve_separable(const Grid& img, const std::vector<double>& k) {
  const int w = img.width(), h = img.height();
  const int r = static_cast<int>(k.size()) / 2;
  Grid tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) {
        s += k[static_cast<std::size_t>(d + r)] *
             img.at(mirror_index(x + d, w), y);
      }
      tmp.at(x, y) = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) {
        s += k[static_cast<std::size_t>(d + r)] *
             tmp.at(x, mirror_index(y + d, h));
      }
      out.at(x, y) = s;
    }
  }
  return out;
}

// Composite sum-of-Gaussians filter, normalized to unit DC gain.
Grid filter_plane(const Grid& plane, int plane_idx, double ppd) {
  const ScielabConstants& c = scielab_constants();
  const int count = c.filter_counts[static_cast<std::size_t>(plane_idx)];
  const int max_radius = std::max(plane.width(), plane.height());
  Grid out(plane.width(), plane.height(), 0.0);
  double wsum = 0.0;
  for (int f = 0; f < count; ++f) {
    const double wgt =
        c.filters[static_cast<std::size_t>(plane_idx)][static_cast<std::size_t>(2 * f)];
    const double hw =
        c.filters[static_cast<std::size_t>(plane_idx)][static_cast<std::size_t>(2 * f) + 1];
    const Grid g = convolve_separable(plane, gaussian_kernel(hw, ppd, max_radius));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wgt * g[i];
    wsum += wgt;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= wsum;
  return out;
}

struct LabImage {
  Grid l, a, b;
};

double lab_f(double t) {
  constexpr double d = 6.0 / 29.0;
  return (t > d * d * d) ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}

// Full path: normalized linear RGB -> XYZ -> opponent -> spatial filter
// -> XYZ -> CIELAB under the display white.
LabImage to_filtered_lab(const RgbImage& img, double ppd, double peak) {
  const ScielabConstants& c = scielab_constants();
  const int w = img.width, h = img.height;

  std::array<Grid, 3> opp{Grid(w, h), Grid(w, h), Grid(w, h)};
  for (std::size_t i = 0; i < img.n_sites(); ++i) {
    const double r = img.r[i] / peak;
    const double g = img.g[i] / peak;
    const double b = img.b[i] / peak;
    double xyz[3];
    for (int row = 0; row < 3; ++row) {
      xyz[row] = c.rgb_to_xyz[static_cast<std::size_t>(3 * row)] * r +
                 c.rgb_to_xyz[static_cast<std::size_t>(3 * row) + 1] * g +
                 c.rgb_to_xyz[static_cast<std::size_t>(3 * row) + 2] * b;
    }
    for (int row = 0; row < 3; ++row) {
      opp[static_cast<std::size_t>(row)][i] =
          c.opponent[static_cast<std::size_t>(3 * row)] * xyz[0] +
          c.opponent[static_cast<std::size_t>(3 * row) + 1] * xyz[1] +
          c.opponent[static_cast<std::size_t>(3 * row) + 2] * xyz[2];
    }
  }
  for (int p = 0; p < 3; ++p) {
    opp[static_cast<std::size_t>(p)] =
        filter_plane(opp[static_cast<std::size_t>(p)], p, ppd);
  }

  // Invert the opponent matrix once.
  const auto& m = c.opponent;
  const double det =
      m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
      m[2] * (m[3] * m[7] - m[4] * m[6]);
  const std::array<double, 9> inv = {
      (m[4] * m[8] - m[5] * m[7]) / det, (m[2] * m[7] - m[1] * m[8]) / det,
      (m[1] * m[5] - m[2] * m[4]) / det, (m[5] * m[6] - m[3] * m[8]) / det,
      (m[0] * m[8] - m[2] * m[6]) / det, (m[2] * m[3] - m[0] * m[5]) / det,
      (m[3] * m[7] - m[4] * m[6]) / det, (m[1] * m[6] - m[0] * m[7]) / det,
      (m[0] * m[4] - m[1] * m[3]) / det};

  const double xn = c.rgb_to_xyz[0] + c.rgb_to_xyz[1] + c.rgb_to_xyz[2];
  const double yn = c.rgb_to_xyz[3] + c.rgb_to_xyz[4] + c.rgb_to_xyz[5];
  const double zn = c.rgb_to_xyz[6] + c.rgb_to_xyz[7] + c.rgb_to_xyz[8];

  LabImage lab{Grid(w, h), Grid(w, h), Grid(w, h)};
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    const double o1 = opp[0][i], o2 = opp[1][i], o3 = opp[2][i];
    const double x = inv[0] * o1 + inv[1] * o2 + inv[2] * o3;
    const double y = inv[3] * o1 + inv[4] * o2 + inv[5] * o3;
    const double z = inv[6] * o1 + inv[7] * o2 + inv[8] * o3;
    const double fx = lab_f(x / xn), fy = lab_f(y / yn), fz = lab_f(z / zn);
    lab.l[i] = 116.0 * fy - 16.0;
    lab.a[i] = 500.0 * (fx - fy);
    lab.b[i] = 200.0 * (fy - fz);
  }
  return lab;
}

}  // namespace

double scielab_approx(const RgbImage& ref, const RgbImage& test,
                      double pixels_per_degree, double peak) {
  check_shapes(ref, test);
  if (!(pixels_per_degree > 0.0)) {
    throw std::invalid_argument("scielab_approx: pixels_per_degree <= 0");
  }
  if (!(peak > 0.0)) throw std::invalid_argument("scielab_approx: peak <= 0");
  const LabImage a = to_filtered_lab(ref, pixels_per_degree, peak);
  const LabImage b = to_filtered_lab(test, pixels_per_degree, peak);
  double sum = 0.0;
  for (std::size_t i = 0; i < ref.n_sites(); ++i) {
    const double dl = a.l[i] - b.l[i];
    const double da = a.a[i] - b.a[i];
    const double db = a.b[i] - b.b[i];
    sum += std::sqrt(dl * dl + da * da + db * db);
  }
  return sum / static_cast<double>(ref.n_sites());
}

MetricReport metric_report(const RgbImage& ref, const RgbImage& test,
                           double peak, double pixels_per_degree,
                           const std::string& image_id) {
  MetricReport rep;
  rep.channel_mse = channel_mse(ref, test);
  rep.psnr_db = cpsnr(ref, test, peak);
  rep.scielab_mean = scielab_approx(ref, test, pixels_per_degree, peak);
  rep.image_id = image_id;
  return rep;
}

}  // namespace emdem
