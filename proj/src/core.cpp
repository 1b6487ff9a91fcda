#include "emdem/core.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace emdem {

namespace {
constexpr double kQuarterPi = std::numbers::pi / 4.0;
constexpr double kHalfPi = std::numbers::pi / 2.0;
}  // namespace

char channel_letter(Channel c) {
  switch (c) {
    case Channel::R: return 'R';
    case Channel::G: return 'G';
    case Channel::B: return 'B';
  }
  return '?';
}

CfaPattern CfaPattern::from_name(std::string_view name) {
  if (name.size() != 4) {
    throw std::invalid_argument("CfaPattern: name must have 4 letters");
  }
  CfaPattern p;
  for (int i = 0; i < 4; ++i) {
    switch (name[i]) {
      case 'R': case 'r': p.tags[i] = Channel::R; break;
      case 'G': case 'g': p.tags[i] = Channel::G; break;
      case 'B': case 'b': p.tags[i] = Channel::B; break;
      default:
        throw std::invalid_argument("CfaPattern: unknown channel letter");
    }
  }
  p.validate();
  return p;
}

std::string CfaPattern::name() const {
  std::string s(4, '?');
  for (int i = 0; i < 4; ++i) s[i] = channel_letter(tags[i]);
  return s;
}

void CfaPattern::validate() const {
  int counts[3] = {0, 0, 0};
  for (Channel c : tags) ++counts[static_cast<int>(c)];
  const bool g_diagonal =
      (tags[0] == Channel::G && tags[3] == Channel::G) ||
      (tags[1] == Channel::G && tags[2] == Channel::G);
  if (counts[static_cast<int>(Channel::R)] != 1 ||
      counts[static_cast<int>(Channel::G)] != 2 ||
      counts[static_cast<int>(Channel::B)] != 1 || !g_diagonal) {
    throw std::invalid_argument(
        "CfaPattern: need one R, one B and two G on a diagonal");
  }
}

void RgbImage::validate() const {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("RgbImage: dimensions must be positive");
  }
  if (!r.same_shape(g) || !r.same_shape(b) || r.width() != width ||
      r.height() != height) {
    throw std::invalid_argument("RgbImage: channel shape mismatch");
  }
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] < 0.0 || g[i] < 0.0 || b[i] < 0.0) {
      throw std::invalid_argument("RgbImage: negative channel value");
    }
  }
}

void PolarImage::validate() const {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("PolarImage: dimensions must be positive");
  }
  if (!l.same_shape(theta) || l.width() != width || l.height() != height ||
      (has_phi && !l.same_shape(phi))) {
    throw std::invalid_argument("PolarImage: grid shape mismatch");
  }
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (l[i] < 0.0) throw std::invalid_argument("PolarImage: negative l");
    if (theta[i] < 0.0 || theta[i] > kHalfPi) {
      throw std::invalid_argument("PolarImage: theta out of [0, pi/2]");
    }
    if (has_phi && (phi[i] < 0.0 || phi[i] > kHalfPi)) {
      throw std::invalid_argument("PolarImage: phi out of [0, pi/2]");
    }
  }
}

void MosaicFrame::validate() const {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("MosaicFrame: dimensions must be positive");
  }
  if (sigma < 0.0) throw std::invalid_argument("MosaicFrame: sigma < 0");
  if (layout == MosaicLayout::Alternating1D && height != 1) {
    throw std::invalid_argument("MosaicFrame: 1D layout requires height 1");
  }
  if (layout == MosaicLayout::Bayer) pattern.validate();
}

double h_factor(double theta, double phi, Channel c) {
  switch (c) {
    case Channel::G: return std::cos(theta);
    case Channel::R: return std::sin(theta) * std::cos(phi);
    case Channel::B: return std::sin(theta) * std::sin(phi);
  }
  return 0.0;
}

std::array<double, 3> unit_color_vector(double theta, double phi) {
  return {std::cos(theta), std::sin(theta) * std::cos(phi),
          std::sin(theta) * std::sin(phi)};
}

PolarImage rgb_to_polar(const RgbImage& img) {
  img.validate();
  PolarImage out(img.width, img.height, /*with_phi=*/true);
  for (std::size_t i = 0; i < img.n_sites(); ++i) {
    const double r = img.r[i], g = img.g[i], b = img.b[i];
    const double l = std::sqrt(r * r + g * g + b * b);
    out.l[i] = l;
    if (l == 0.0) {
      // Black sites carry no color information; pi/4 biases no channel.
      out.theta[i] = kQuarterPi;
      out.phi[i] = kQuarterPi;
      continue;
    }
    const double c = std::min(1.0, std::max(0.0, g / l));
    out.theta[i] = std::acos(c);
    out.phi[i] = (r == 0.0 && b == 0.0) ? 0.0 : std::atan2(b, r);
  }
  return out;
}

RgbImage polar_to_rgb(const PolarImage& img) {
  img.validate();
  RgbImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.n_sites(); ++i) {
    const double l = img.l[i];
    const double t = img.theta[i];
    const double p = img.phi_at(i);
    out.g[i] = l * std::cos(t);
    out.r[i] = l * std::sin(t) * std::cos(p);
    out.b[i] = l * std::sin(t) * std::sin(p);
  }
  return out;
}

double GaussianNoise::next_unit() {
  // 53-bit mantissa in [0, 1).
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

double GaussianNoise::operator()() {
  const double u1 = 1.0 - next_unit();  // (0, 1]
  const double u2 = next_unit();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

MosaicFrame sample_impl(const RgbImage& img, MosaicFrame frame, double sigma,
                        std::uint64_t seed) {
  img.validate();
  if (sigma < 0.0) throw std::invalid_argument("mosaic_sample: sigma < 0");
  frame.sigma = sigma;
  GaussianNoise noise(seed);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double v = 0.0;
      switch (frame.channel_at(x, y)) {
        case Channel::R: v = img.r.at(x, y); break;
        case Channel::G: v = img.g.at(x, y); break;
        case Channel::B: v = img.b.at(x, y); break;
      }
      if (sigma > 0.0) v += sigma * noise();
      frame.samples.at(x, y) = v;
    }
  }
  return frame;
}

}  // namespace

MosaicFrame mosaic_sample(const RgbImage& img, const CfaPattern& pattern,
                          double sigma, std::uint64_t seed) {
  pattern.validate();
  MosaicFrame frame(img.width, img.height, MosaicLayout::Bayer);
  frame.pattern = pattern;
  return sample_impl(img, std::move(frame), sigma, seed);
}

MosaicFrame mosaic_sample_1d(const RgbImage& img, double sigma,
                             std::uint64_t seed) {
  if (img.height != 1) {
    throw std::invalid_argument("mosaic_sample_1d: image must be 1 x N");
  }
  MosaicFrame frame(img.width, 1, MosaicLayout::Alternating1D);
  return sample_impl(img, std::move(frame), sigma, seed);
}

}  // namespace emdem
