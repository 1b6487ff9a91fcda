#ifndef EMDEM_METRICS_HPP
#define EMDEM_METRICS_HPP

#include <array>
#include <string>

#include "emdem/core.hpp"

namespace emdem {

struct MetricReport {
  double psnr_db = 0.0;
  double scielab_mean = 0.0;
  std::array<double, 3> channel_mse{0.0, 0.0, 0.0};
  std::string image_id;
};

inline constexpr double kPsnrCapDb = 99.0;

/// Composite PSNR over all three channels:
/// 10 log10(peak^2 / mean squared error), capped at 99 dB for
/// identical images.
double cpsnr(const RgbImage& ref, const RgbImage& test, double peak);

std::array<double, 3> channel_mse(const RgbImage& ref, const RgbImage& test);

/// Spatial CIELAB approximation: opponent-space Gaussian filtering
/// scaled by pixels-per-degree, then mean CIELAB delta-E against the
/// filtered reference. Filter constants are pinned in
/// scielab_constants.cpp and mirrored in data/scielab_constants_v1.txt.
double scielab_approx(const RgbImage& ref, const RgbImage& test,
                      double pixels_per_degree, double peak = 255.0);

MetricReport metric_report(const RgbImage& ref, const RgbImage& test,
                           double peak, double pixels_per_degree,
                           const std::string& image_id);

/// Pinned filter bank: per opponent plane, (weight, halfwidth-degrees)
/// pairs; halfwidth is the full width at half maximum of the Gaussian.
struct ScielabConstants {
  std::array<double, 9> rgb_to_xyz;  // row-major, sRGB D65 linear
  std::array<double, 9> opponent;    // row-major, XYZ -> O1 O2 O3
  std::array<std::array<double, 6>, 3> filters;  // w0,h0,w1,h1,w2,h2 (0-pad)
  std::array<int, 3> filter_counts;
  const char* version;
};

const ScielabConstants& scielab_constants();

}  // namespace emdem

#endif  // EMDEM_METRICS_HPP
