#ifndef EMDEM_CORE_HPP
#define EMDEM_CORE_HPP

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "emdem/grid.hpp"

namespace emdem {

enum class Channel : std::uint8_t { R = 0, G = 1, B = 2 };

char channel_letter(Channel c);

/// 2x2 color filter array cell. Exactly two G tags on one diagonal,
/// one R and one B. Cell entry for absolute coordinates (x, y) is
/// tags[(y & 1) * 2 + (x & 1)].
struct CfaPattern {
  std::array<Channel, 4> tags{Channel::R, Channel::G, Channel::G, Channel::B};

  static CfaPattern from_name(std::string_view name);
  std::string name() const;

  Channel at(int x, int y) const { return tags[(y & 1) * 2 + (x & 1)]; }
  void validate() const;
};

/// Full three-channel image in linear intensity units. The 1D toy
/// setting is carried as a 1 x N image whose b channel is all zeros.
struct RgbImage {
  int width = 0;
  int height = 0;
  Grid r, g, b;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), r(w, h), g(w, h), b(w, h) {}

  std::size_t n_sites() const { return r.size(); }
  void validate() const;
};

/// Latent polar representation: per-site brightness l >= 0 and color
/// angles theta, phi in [0, pi/2]. phi is carried only in the
/// three-channel mode; 1D chains fix phi = 0 implicitly.
struct PolarImage {
  int width = 0;
  int height = 0;
  Grid l, theta, phi;
  bool has_phi = true;

  PolarImage() = default;
  PolarImage(int w, int h, bool with_phi = true)
      : width(w),
        height(h),
        l(w, h),
        theta(w, h),
        phi(with_phi ? Grid(w, h) : Grid()),
        has_phi(with_phi) {}

  std::size_t n_sites() const { return l.size(); }
  double phi_at(std::size_t i) const { return has_phi ? phi[i] : 0.0; }
  void validate() const;
};

enum class MosaicLayout : std::uint8_t {
  Bayer,          // 2D grid, channel per site from a CfaPattern
  Alternating1D,  // 1 x N chain: even sites carry the cos channel (G slot),
                  // odd sites the sin channel (R slot)
};

/// Single-channel sensor frame. Samples are kept as unclamped linear
/// reals; clamping and quantization happen only at file export.
struct MosaicFrame {
  int width = 0;
  int height = 0;
  Grid samples;
  MosaicLayout layout = MosaicLayout::Bayer;
  CfaPattern pattern;
  double sigma = 0.0;
  int bit_depth = 8;
  double black_level = 0.0;

  MosaicFrame() = default;
  MosaicFrame(int w, int h, MosaicLayout lay)
      : width(w), height(h), samples(w, h), layout(lay) {}

  std::size_t n_sites() const { return samples.size(); }
  Channel channel_at(int x, int y) const {
    if (layout == MosaicLayout::Alternating1D) {
      return (x % 2 == 0) ? Channel::G : Channel::R;
    }
    return pattern.at(x, y);
  }
  void validate() const;
};

/// Loading factor h(theta, phi) for one channel: the component of the
/// unit color vector u = (cos t, sin t cos p, sin t sin p) observed
/// through that filter. G -> cos t, R -> sin t cos p, B -> sin t sin p.
double h_factor(double theta, double phi, Channel c);

/// Unit color vector (g, r, b components) for the given angles.
std::array<double, 3> unit_color_vector(double theta, double phi);

PolarImage rgb_to_polar(const RgbImage& img);
RgbImage polar_to_rgb(const PolarImage& img);

/// Deterministic N(0,1) stream: mt19937_64 driving a Box-Muller
/// transform (trigonometric form, both uniforms drawn per sample from
/// the high 53 bits). The generator identity is part of the file
/// format contract for seeded synthesis.
class GaussianNoise {
 public:
  explicit GaussianNoise(std::uint64_t seed) : rng_(seed) {}
  double operator()();

 private:
  double next_unit();
  std::mt19937_64 rng_;
};

/// Sample img through a Bayer pattern and add i.i.d. N(0, sigma^2)
/// noise from the seeded generator. Samples are not clamped.
MosaicFrame mosaic_sample(const RgbImage& img, const CfaPattern& pattern,
                          double sigma, std::uint64_t seed);

/// 1 x N chain variant: even sites observe the cos channel (g), odd
/// sites the sin channel (r).
MosaicFrame mosaic_sample_1d(const RgbImage& img, double sigma,
                             std::uint64_t seed);

}  // namespace emdem

#endif  // EMDEM_CORE_HPP
