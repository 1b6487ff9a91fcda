#include "emdem/beta.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace emdem {

void BetaParams::validate() const {
  if (!(beta0 > 0.0)) throw std::invalid_argument("BetaParams: beta0 <= 0");
  if (alpha < 0.0) throw std::invalid_argument("BetaParams: alpha < 0");
  if (!(R > 0.0)) throw std::invalid_argument("BetaParams: R <= 0");
  if (radius < 1.0) throw std::invalid_argument("BetaParams: radius < 1");
  if (prune_eps < 0.0) throw std::invalid_argument("BetaParams: prune_eps < 0");
}

namespace {

double quantity(const RgbImage& img, int q, int x, int y) {
  switch (q) {
    case 0: return img.g.at(x, y);
    case 1: return img.r.at(x, y) - img.g.at(x, y);
    default: return img.b.at(x, y) - img.g.at(x, y);
  }
}

}  // namespace

AttributeVector extract_attributes(const RgbImage& img, int x, int y) {
  if (x < 0 || x >= img.width || y < 0 || y >= img.height) {
    throw std::invalid_argument("extract_attributes: site out of bounds");
  }
  AttributeVector out{};
  int slot = 0;
  for (int w : kAttributeWindows) {
    const int r = w / 2;
    for (int q = 0; q < 3; ++q) {
      double vmax = -std::numeric_limits<double>::infinity();
      double vmin = std::numeric_limits<double>::infinity();
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = mirror_index(y + dy, img.height);
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = mirror_index(x + dx, img.width);
          const double v = quantity(img, q, xx, yy);
          vmax = std::max(vmax, v);
          vmin = std::min(vmin, v);
        }
      }
      out[static_cast<std::size_t>(slot++)] = vmax;
      out[static_cast<std::size_t>(slot++)] = vmin;
    }
  }
  return out;
}

AttributeExtractor::AttributeExtractor(const RgbImage& img)
    : width_(img.width), height_(img.height) {
  const int nw = static_cast<int>(kAttributeWindows.size());
  max_.resize(static_cast<std::size_t>(nw) * 3);
  min_.resize(static_cast<std::size_t>(nw) * 3);

  Grid base(width_, height_), row_max(width_, height_), row_min(width_, height_);
  for (int wi = 0; wi < nw; ++wi) {
    const int r = kAttributeWindows[static_cast<std::size_t>(wi)] / 2;
    for (int q = 0; q < 3; ++q) {
      for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) base.at(x, y) = quantity(img, q, x, y);
      }
      // Horizontal pass with mirror indexing, then vertical.
      for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
          double vmax = -std::numeric_limits<double>::infinity();
          double vmin = std::numeric_limits<double>::infinity();
          for (int dx = -r; dx <= r; ++dx) {
            const double v = base.at(mirror_index(x + dx, width_), y);
            vmax = std::max(vmax, v);
            vmin = std::min(vmin, v);
          }
          row_max.at(x, y) = vmax;
          row_min.at(x, y) = vmin;
        }
      }
      Grid gmax(width_, height_), gmin(width_, height_);
      for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
          double vmax = -std::numeric_limits<double>::infinity();
          double vmin = std::numeric_limits<double>::infinity();
          for (int dy = -r; dy <= r; ++dy) {
            const int yy = mirror_index(y + dy, height_);
            vmax = std::max(vmax, row_max.at(x, yy));
            vmin = std::min(vmin, row_min.at(x, yy));
          }
          gmax.at(x, y) = vmax;
          gmin.at(x, y) = vmin;
        }
      }
      max_[static_cast<std::size_t>(wi * 3 + q)] = std::move(gmax);
      min_[static_cast<std::size_t>(wi * 3 + q)] = std::move(gmin);
    }
  }
}

AttributeVector AttributeExtractor::at(int x, int y) const {
  AttributeVector out{};
  int slot = 0;
  for (std::size_t wi = 0; wi < kAttributeWindows.size(); ++wi) {
    for (int q = 0; q < 3; ++q) {
      out[static_cast<std::size_t>(slot++)] = max_[wi * 3 + q].at(x, y);
      out[static_cast<std::size_t>(slot++)] = min_[wi * 3 + q].at(x, y);
    }
  }
  return out;
}

RegressionTree::RegressionTree(std::vector<TreeNode> nodes)
    : nodes_(std::move(nodes)) {
  validate();
}

RegressionTree RegressionTree::single_leaf(double d) {
  TreeNode leaf;
  leaf.value = d;
  return RegressionTree(std::vector<TreeNode>{leaf});
}

double RegressionTree::predict(const AttributeVector& attrs) const {
  int i = 0;
  while (!nodes_[static_cast<std::size_t>(i)].is_leaf()) {
    const TreeNode& nd = nodes_[static_cast<std::size_t>(i)];
    i = (attrs[static_cast<std::size_t>(nd.attr)] < nd.threshold) ? nd.left
                                                                  : nd.right;
  }
  return nodes_[static_cast<std::size_t>(i)].value;
}

int RegressionTree::depth() const {
  // Iterative depth over the validated structure.
  int best = 0;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    const TreeNode& nd = nodes_[static_cast<std::size_t>(i)];
    if (!nd.is_leaf()) {
      stack.push_back({nd.left, d + 1});
      stack.push_back({nd.right, d + 1});
    }
  }
  return best;
}

void RegressionTree::validate() const {
  if (nodes_.empty()) throw std::invalid_argument("RegressionTree: empty");
  const int n = static_cast<int>(nodes_.size());
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  std::vector<int> stack{0};
  int visited = 0;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    if (i < 0 || i >= n) {
      throw std::invalid_argument("RegressionTree: child index out of range");
    }
    if (seen[static_cast<std::size_t>(i)]++) {
      throw std::invalid_argument("RegressionTree: node reached twice");
    }
    ++visited;
    const TreeNode& nd = nodes_[static_cast<std::size_t>(i)];
    if (nd.is_leaf()) {
      if (nd.value < kDLeafMin || nd.value > kDLeafMax) {
        throw std::invalid_argument("RegressionTree: leaf value out of range");
      }
    } else {
      if (nd.attr < 0 || nd.attr >= kAttributeArity) {
        throw std::invalid_argument("RegressionTree: attribute out of range");
      }
      stack.push_back(nd.left);
      stack.push_back(nd.right);
    }
  }
  if (visited != n) {
    throw std::invalid_argument("RegressionTree: unreachable nodes");
  }
}

double predict_d(const RegressionTree& tree, const AttributeVector& attrs) {
  return tree.predict(attrs);
}

double beta_link(int xi, int yi, int xj, int yj, const Grid& l, double d_i,
                 double d_j, const BetaParams& params) {
  const double dx = xi - xj, dy = yi - yj;
  const double dist2 = dx * dx + dy * dy;
  if (dist2 > params.radius * params.radius + 1e-12) {
    throw std::invalid_argument("beta_link: sites beyond the radius");
  }
  const double d = std::min(d_i, d_j);
  if (!(d > 0.0)) throw std::invalid_argument("beta_link: d <= 0");
  const double dl = std::abs(l.at(xi, yi) - l.at(xj, yj));
  return params.beta0 * std::exp(-0.5 * dist2 / (d * d)) *
         (1.0 + params.alpha * std::exp(-dl / params.R));
}

namespace {

LinkGraph build_graph_impl(const PolarImage& polar,
                           const std::vector<double>& d_field,
                           const BetaParams& params) {
  params.validate();
  const int w = polar.width, h = polar.height;
  const int rad = static_cast<int>(std::floor(params.radius));
  const double cutoff = params.prune_eps * params.beta0;

  // Canonical forward offsets within the Euclidean radius.
  std::vector<std::pair<int, int>> offsets;
  for (int dy = 0; dy <= rad; ++dy) {
    for (int dx = (dy == 0 ? 1 : -rad); dx <= rad; ++dx) {
      if (dx * dx + dy * dy <= params.radius * params.radius) {
        offsets.emplace_back(dx, dy);
      }
    }
  }

  std::vector<Link> links;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      for (const auto& [dx, dy] : offsets) {
        const int xj = x + dx, yj = y + dy;
        if (xj < 0 || xj >= w || yj < 0 || yj >= h) continue;
        const int j = yj * w + xj;
        const double wgt =
            beta_link(x, y, xj, yj, polar.l, d_field[static_cast<std::size_t>(i)],
                      d_field[static_cast<std::size_t>(j)], params);
        if (wgt >= cutoff) links.push_back(Link{i, j, wgt});
      }
    }
  }
  return LinkGraph(w * h, std::move(links));
}

}  // namespace

LinkGraph build_link_graph(const PolarImage& polar, const RgbImage& working,
                           const RegressionTree& tree,
                           const BetaParams& params) {
  if (polar.width != working.width || polar.height != working.height) {
    throw std::invalid_argument("build_link_graph: shape mismatch");
  }
  const AttributeExtractor extractor(working);
  std::vector<double> d(polar.n_sites());
  for (int y = 0; y < polar.height; ++y) {
    for (int x = 0; x < polar.width; ++x) {
      d[static_cast<std::size_t>(y) * polar.width + x] =
          tree.predict(extractor.at(x, y));
    }
  }
  return build_graph_impl(polar, d, params);
}

LinkGraph build_link_graph(const PolarImage& polar, const RgbImage& working,
                           double constant_d, const BetaParams& params) {
  if (polar.width != working.width || polar.height != working.height) {
    throw std::invalid_argument("build_link_graph: shape mismatch");
  }
  if (!(constant_d > 0.0)) {
    throw std::invalid_argument("build_link_graph: constant d <= 0");
  }
  std::vector<double> d(polar.n_sites(), constant_d);
  return build_graph_impl(polar, d, params);
}

namespace {

struct SplitChoice {
  bool found = false;
  int attr = 0;
  double threshold = 0.0;
  double reduction = -1.0;
};

double label_mean(std::span<const LabeledSample> samples,
                  std::span<const int> idx) {
  double s = 0.0;
  for (int i : idx) s += samples[static_cast<std::size_t>(i)].d;
  return s / static_cast<double>(idx.size());
}

// Best (attribute, midpoint threshold) by weighted variance reduction;
// ties resolve to the lowest attribute and then the lowest threshold by
// scan order.
SplitChoice best_split(std::span<const LabeledSample> samples,
                       std::span<const int> idx, int min_leaf) {
  const int n = static_cast<int>(idx.size());
  SplitChoice best;
  std::vector<int> order(idx.begin(), idx.end());

  for (int attr = 0; attr < kAttributeArity; ++attr) {
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double va = samples[static_cast<std::size_t>(a)]
                            .attrs[static_cast<std::size_t>(attr)];
      const double vb = samples[static_cast<std::size_t>(b)]
                            .attrs[static_cast<std::size_t>(attr)];
      return va != vb ? va < vb : a < b;
    });
    double left_sum = 0.0, left_sq = 0.0;
    double total_sum = 0.0, total_sq = 0.0;
    for (int i : order) {
      const double d = samples[static_cast<std::size_t>(i)].d;
      total_sum += d;
      total_sq += d * d;
    }
    const double parent_sse = total_sq - total_sum * total_sum / n;

    for (int k = 0; k < n - 1; ++k) {
      const double d = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])].d;
      left_sum += d;
      left_sq += d * d;
      const double va = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]
                            .attrs[static_cast<std::size_t>(attr)];
      const double vb = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(k + 1)])]
                            .attrs[static_cast<std::size_t>(attr)];
      if (va == vb) continue;  // threshold must separate distinct values
      const int nl = k + 1, nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double right_sum = total_sum - left_sum;
      const double right_sq = total_sq - left_sq;
      const double sse = (left_sq - left_sum * left_sum / nl) +
                         (right_sq - right_sum * right_sum / nr);
      const double reduction = parent_sse - sse;
      if (reduction > best.reduction) {
        best.found = true;
        best.reduction = reduction;
        best.attr = attr;
        best.threshold = 0.5 * (va + vb);
      }
    }
  }
  return best;
}

int build_node(std::span<const LabeledSample> samples, std::vector<int> idx,
               int min_leaf, int max_depth, int depth,
               std::vector<TreeNode>& nodes) {
  const double mean = label_mean(samples, idx);
  bool constant = true;
  for (int i : idx) {
    if (samples[static_cast<std::size_t>(i)].d !=
        samples[static_cast<std::size_t>(idx[0])].d) {
      constant = false;
      break;
    }
  }

  SplitChoice split;
  const bool depth_ok = (max_depth <= 0) || (depth < max_depth);
  if (!constant && depth_ok && static_cast<int>(idx.size()) >= 2 * min_leaf) {
    split = best_split(samples, idx, min_leaf);
  }

  const int me = static_cast<int>(nodes.size());
  nodes.emplace_back();
  if (!split.found) {
    nodes[static_cast<std::size_t>(me)].value =
        std::clamp(mean, kDLeafMin, kDLeafMax);
    return me;
  }

  std::vector<int> left, right;
  for (int i : idx) {
    const double v = samples[static_cast<std::size_t>(i)]
                         .attrs[static_cast<std::size_t>(split.attr)];
    (v < split.threshold ? left : right).push_back(i);
  }
  nodes[static_cast<std::size_t>(me)].attr = split.attr;
  nodes[static_cast<std::size_t>(me)].threshold = split.threshold;
  const int l =
      build_node(samples, std::move(left), min_leaf, max_depth, depth + 1, nodes);
  const int r =
      build_node(samples, std::move(right), min_leaf, max_depth, depth + 1, nodes);
  nodes[static_cast<std::size_t>(me)].left = l;
  nodes[static_cast<std::size_t>(me)].right = r;
  return me;
}

}  // namespace

RegressionTree train_tree(std::span<const LabeledSample> samples, int min_leaf,
                          int max_depth) {
  if (min_leaf < 1) throw std::invalid_argument("train_tree: min_leaf < 1");
  if (static_cast<int>(samples.size()) < 2 * min_leaf) {
    throw std::invalid_argument("train_tree: too few samples");
  }
  for (const LabeledSample& s : samples) {
    if (s.d < kDLeafMin || s.d > kDLeafMax) {
      throw std::invalid_argument("train_tree: label out of range");
    }
  }
  std::vector<int> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<TreeNode> nodes;
  build_node(samples, std::move(idx), min_leaf, max_depth, 0, nodes);
  return RegressionTree(std::move(nodes));
}

}  // namespace emdem
