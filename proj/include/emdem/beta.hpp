#ifndef EMDEM_BETA_HPP
#define EMDEM_BETA_HPP

#include <array>
#include <span>
#include <vector>

#include "emdem/core.hpp"
#include "emdem/prior.hpp"

namespace emdem {

/// Parameters of the adaptive link weight
///   beta_ij = beta0 * exp(-|r_i - r_j|^2 / (2 d^2))
///                   * (1 + alpha * exp(-|l_i - l_j| / R)).
/// R defaults to 10% of the 8-bit range; pipelines rescale it to the
/// data range when configured to.
struct BetaParams {
  double beta0 = 1.0;
  double alpha = 4.0;
  double R = 25.5;
  double radius = 3.0;      // neighborhood cutoff in pixels
  double prune_eps = 1e-3;  // drop links below prune_eps * beta0

  void validate() const;
};

/// Window sizes for the attribute extractor (largest is capped near
/// 20x20).
inline constexpr std::array<int, 5> kAttributeWindows{3, 5, 9, 15, 21};
inline constexpr int kAttributeArity = 30;

/// Per-site prediction attributes: for each window size, the max and
/// min of G, of R-G, and of B-G over the window centered at the site
/// (mirror-padded at borders). Layout: window-major blocks of
/// [Gmax, Gmin, RGmax, RGmin, BGmax, BGmin].
using AttributeVector = std::array<double, kAttributeArity>;

/// Direct window-scan extraction for one site.
AttributeVector extract_attributes(const RgbImage& img, int x, int y);

/// Whole-image extraction with separable sliding min/max; equal to
/// extract_attributes at every site, cheaper when many sites are
/// queried.
class AttributeExtractor {
 public:
  explicit AttributeExtractor(const RgbImage& img);
  AttributeVector at(int x, int y) const;
  int width() const { return width_; }
  int height() const { return height_; }

 private:
  int width_ = 0, height_ = 0;
  // [window][quantity] -> max grid, min grid; quantity in {G, R-G, B-G}.
  std::vector<Grid> max_, min_;
};

struct TreeNode {
  int attr = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output d, in [0.25, 3.0]

  bool is_leaf() const { return attr < 0; }
};

inline constexpr double kDLeafMin = 0.25;
inline constexpr double kDLeafMax = 3.0;

/// Binary regression tree over AttributeVector inputs predicting the
/// color-constancy scale d. Node 0 is the root; descent goes left when
/// attrs[attr] < threshold.
class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes);

  static RegressionTree single_leaf(double d);

  double predict(const AttributeVector& attrs) const;
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int depth() const;

  /// Structural validation: well-formed binary tree rooted at node 0,
  /// every node reachable exactly once, leaf values in range.
  void validate() const;

 private:
  std::vector<TreeNode> nodes_;
};

double predict_d(const RegressionTree& tree, const AttributeVector& attrs);

/// Link weight between sites (xi, yi) and (xj, yj); the pairwise scale
/// is min(d_i, d_j), so a predicted color edge at either endpoint
/// weakens the link.
double beta_link(int xi, int yi, int xj, int yj, const Grid& l, double d_i,
                 double d_j, const BetaParams& params);

/// All links within params.radius, weighted by beta_link with d
/// predicted per site from the working image; links below
/// prune_eps * beta0 are dropped.
LinkGraph build_link_graph(const PolarImage& polar, const RgbImage& working,
                           const RegressionTree& tree,
                           const BetaParams& params);

/// Constant-d variant (tree replaced by a fixed scale).
LinkGraph build_link_graph(const PolarImage& polar, const RgbImage& working,
                           double constant_d, const BetaParams& params);

struct LabeledSample {
  AttributeVector attrs{};
  double d = 0.0;
};

/// CART-style trainer: each split maximizes variance reduction over all
/// (attribute, midpoint-threshold) pairs, ties to the lowest attribute
/// then lowest threshold; leaves output the clamped label mean.
/// max_depth <= 0 means unbounded.
RegressionTree train_tree(std::span<const LabeledSample> samples, int min_leaf,
                          int max_depth);

}  // namespace emdem

#endif  // EMDEM_BETA_HPP
