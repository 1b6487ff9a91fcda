#include "emdem/training.hpp"

#include <stdexcept>

#include "emdem/metrics.hpp"

namespace emdem {

namespace {
constexpr int kSelectMargin = 10;  // half of the largest window
constexpr int kSelectStride = 4;
}  // namespace

PatchLabel label_one_patch(const RgbImage& patch,
                           std::span<const double> candidate_ds,
                           const EmConfig& cfg, std::uint64_t seed) {
  if (candidate_ds.empty()) {
    throw std::invalid_argument("label_one_patch: no candidates");
  }
  const CfaPattern pattern = CfaPattern::from_name("RGGB");
  const double synth_sigma = (cfg.sigma > 0.0) ? cfg.sigma : 0.0;
  const MosaicFrame frame = mosaic_sample(patch, pattern, synth_sigma, seed);
  const double peak = static_cast<double>((1u << frame.bit_depth) - 1u);
  const RegressionTree unused = RegressionTree::single_leaf(1.0);

  PatchLabel label;
  label.psnr_per_candidate.reserve(candidate_ds.size());
  double best = -1.0;
  for (double d : candidate_ds) {
    EmConfig run = cfg;
    run.constant_d = d;
    const RgbImage rec = em_demosaic(frame, run, unused);
    const double score = cpsnr(patch, rec, peak);
    label.psnr_per_candidate.push_back(score);
    if (score >= best) {  // ties go to the largest (later) candidate
      best = score;
      label.d = d;
    }
  }
  return label;
}

std::vector<LabeledSample> label_patches(std::span<const RgbImage> patches,
                                         std::span<const double> candidate_ds,
                                         const EmConfig& cfg,
                                         std::uint64_t seed) {
  if (candidate_ds.empty()) {
    throw std::invalid_argument("label_patches: no candidates");
  }
  const CfaPattern pattern = CfaPattern::from_name("RGGB");
  const RegressionTree unused = RegressionTree::single_leaf(1.0);

  std::vector<LabeledSample> out;
  std::uint64_t patch_seed = seed;
  for (const RgbImage& patch : patches) {
    if (patch.width < 24 || patch.height < 24) {
      throw std::invalid_argument("label_patches: patch smaller than 24x24");
    }
    const double synth_sigma = (cfg.sigma > 0.0) ? cfg.sigma : 0.0;
    const MosaicFrame frame =
        mosaic_sample(patch, pattern, synth_sigma, patch_seed++);
    const double peak = static_cast<double>((1u << frame.bit_depth) - 1u);

    double best = -1.0, label_d = candidate_ds[0];
    RgbImage winner;
    for (double d : candidate_ds) {
      EmConfig run = cfg;
      run.constant_d = d;
      RgbImage rec = em_demosaic(frame, run, unused);
      const double score = cpsnr(patch, rec, peak);
      if (score >= best) {  // ties go to the largest (later) candidate
        best = score;
        label_d = d;
        winner = std::move(rec);
      }
    }

    const AttributeExtractor extractor(winner);
    for (int y = kSelectMargin; y + kSelectMargin < patch.height;
         y += kSelectStride) {
      for (int x = kSelectMargin; x + kSelectMargin < patch.width;
           x += kSelectStride) {
        LabeledSample s;
        s.attrs = extractor.at(x, y);
        s.d = label_d;
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

}  // namespace emdem
