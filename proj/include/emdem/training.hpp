#ifndef EMDEM_TRAINING_HPP
#define EMDEM_TRAINING_HPP

#include <span>
#include <vector>

#include "emdem/beta.hpp"
#include "emdem/pipeline.hpp"

namespace emdem {

/// One patch's labeling outcome: the PSNR-optimal constancy scale and
/// the per-candidate scores behind it.
struct PatchLabel {
  double d = 0.0;
  std::vector<double> psnr_per_candidate;
};

/// Mosaic a ground-truth patch, demosaic it once per candidate scale
/// (constant-d pipeline), and pick the candidate with the highest
/// CPSNR against the ground truth; ties go to the largest candidate.
PatchLabel label_one_patch(const RgbImage& patch,
                           std::span<const double> candidate_ds,
                           const EmConfig& cfg, std::uint64_t seed);

/// Full labeling pass: for every patch, label it and record attribute
/// vectors at interior pixels on a stride-4 grid (margin 10, so the
/// largest window stays inside). Attributes come from the winning
/// demosaiced patch, never the ground truth. Patches must be at least
/// 24x24.
std::vector<LabeledSample> label_patches(std::span<const RgbImage> patches,
                                         std::span<const double> candidate_ds,
                                         const EmConfig& cfg,
                                         std::uint64_t seed);

}  // namespace emdem

#endif  // EMDEM_TRAINING_HPP
