#include "emdem/metrics.hpp"

namespace emdem {

// Version v1. The same table ships as data/scielab_constants_v1.txt; a
// unit test keeps the two in sync. Opponent weights and filter
// halfwidths follow the published spatial-CIELAB pattern-color
// separable filters; halfwidths are FWHM in degrees of visual angle.
const ScielabConstants& scielab_constants() {
  static const ScielabConstants k = {
      // sRGB (linear, D65) -> XYZ
      {0.4124564, 0.3575761, 0.1804375,
       0.2126729, 0.7151522, 0.0721750,
       0.0193339, 0.1191920, 0.9503041},
      // XYZ -> opponent (lum, red-green, blue-yellow)
      {0.279, 0.720, -0.107,
       -0.449, 0.290, -0.077,
       0.086, -0.590, 0.501},
      // (weight, halfwidth) pairs per plane
      {{{0.921, 0.0283, 0.105, 0.133, -0.108, 4.336},
        {0.531, 0.0392, 0.330, 0.494, 0.0, 0.0},
        {0.488, 0.0536, 0.371, 0.386, 0.0, 0.0}}},
      {3, 2, 2},
      "v1",
  };
  return k;
}

}  // namespace emdem
