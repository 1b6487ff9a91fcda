#ifndef EMDEM_PIPELINE_HPP
#define EMDEM_PIPELINE_HPP

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emdem/beta.hpp"
#include "emdem/core.hpp"
#include "emdem/estep.hpp"
#include "emdem/mstep.hpp"
#include "emdem/prior.hpp"

namespace emdem {

enum class EstepKind { QuasiNewton, Kalman, Exact };

/// Run configuration shared by the EM pipelines. Fields <= 0 marked
/// "auto" are resolved from the data at run time; the resolved values
/// land in the run manifest.
struct EmConfig {
  double sigma = -1.0;            // auto: estimated from the frame
  double prior_eps0 = -1.0;       // auto: calibrated to the sample std
  double prior_nu = 2.0;
  double prior_omega_min = -1.0;  // auto: 2*pi / max dimension
  double prior_std_scale = 1.0;   // multiplier on the calibration target
  BetaParams beta{};
  bool beta_r_auto = true;        // R = 10% of the export range
  std::string tree_path{};
  double constant_d = -1.0;       // > 0 overrides the tree
  int max_em_iters = 20;
  double angle_tol = 1e-4;
  EstepKind estep = EstepKind::QuasiNewton;
  int viterbi_levels = 64;
  int qn_memory = 10;
  int qn_max_iter = 500;
  double qn_grad_tol_rel = 1e-8;
  int qn_probe_stride = 2;
  int pad = 8;
  int ar_order = 2;

  void validate() const;
};

/// Plain-text key=value run log: config echo, per-iteration surrogate
/// values, timings, warnings.
struct RunManifest {
  std::vector<std::pair<std::string, std::string>> entries;

  void put(const std::string& key, const std::string& value);
  void put(const std::string& key, double value);
  void put(const std::string& key, int value);
  std::string to_text() const;
};

/// Iteration state of a 2D EM run.
struct EmState {
  PolarImage angles;
  PosteriorSummary posterior;
  LinkGraph graph;
  double surrogate_value = 0.0;
  int iteration = 0;
};

/// Project l onto the subspace where even and odd sums agree (the
/// alternating-mean component is removed): the minimal-L2 change
/// making the top-frequency mode vanish.
std::vector<double> balance_profile(std::span<const double> l);

/// Hard-model closed form on a 1D frame: arctan of the odd/even sample
/// sums, folded into [0, pi/2].
double closed_form_constant(const MosaicFrame& frame);

struct Constant1dResult {
  double theta_ml = 0.0;
  std::vector<double> theta_trace;  // theta^(0), theta^(1), ...
  std::vector<double> l_hat;
  RgbImage v_hat;
  int iterations = 0;
  bool converged = false;
};

/// Constant-color EM on a chain: alternate posterior moments with the
/// closed-form surrogate maximization, starting from the hard-model
/// estimate.
Constant1dResult em_constant(const MosaicFrame& frame, const EmConfig& cfg);

struct Piecewise1dResult {
  std::vector<double> theta;
  std::vector<double> l_hat;
  RgbImage v_hat;
  int iterations = 0;
  bool converged = false;
};

/// Piecewise-constant color on a chain: chain E-step plus exact
/// discrete maximization over the angle grid, with a uniform
/// nearest-neighbor link weight (the tree is not consulted).
Piecewise1dResult em_piecewise_1d(const MosaicFrame& frame,
                                  const EmConfig& cfg);

/// Gradient-guided bootstrap interpolation: G at chroma sites along the
/// smaller second-difference direction, then R and B from bilinear
/// color-difference interpolation. Output clamped to >= 0.
RgbImage laroche_init(const MosaicFrame& frame);

/// Naive per-channel bilinear interpolation baseline.
RgbImage bilinear_demosaic(const MosaicFrame& frame);

/// v-hat composition: channel c at a site is mean * h(theta, phi, c).
RgbImage compose_estimate(const PosteriorSummary& summary,
                          const PolarImage& angles);

/// Full 2D pipeline: bootstrap, then iterate E-step / link-weight
/// refresh / coordinate maximization until the angles settle; the
/// output composes the posterior mean with the final angles, clamped to
/// the export range.
RgbImage em_demosaic(const MosaicFrame& frame, const EmConfig& cfg,
                     const RegressionTree& tree,
                     RunManifest* manifest = nullptr);

/// Noise estimate from same-channel second differences (robust MAD
/// scale); a stand-in when the sensor sigma was not characterized.
double estimate_noise_sigma(const MosaicFrame& frame);

/// Parity-preserving mirror extension of a frame by `pad` sites on each
/// border (pad must be even to keep CFA phase).
MosaicFrame mirror_pad(const MosaicFrame& frame, int pad);

}  // namespace emdem

#endif  // EMDEM_PIPELINE_HPP
