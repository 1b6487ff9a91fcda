#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "emdem/beta.hpp"

using namespace emdem;

namespace {

RgbImage random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 255.0);
  RgbImage img(w, h);
  for (std::size_t i = 0; i < img.n_sites(); ++i) {
    img.r[i] = uni(rng);
    img.g[i] = uni(rng);
    img.b[i] = uni(rng);
  }
  return img;
}

AttributeVector random_attrs(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-50.0, 300.0);
  AttributeVector a{};
  for (double& v : a) v = uni(rng);
  return a;
}

// Second traversal implementation, recursive on purpose.
double predict_recursive(const std::vector<TreeNode>& nodes, int i,
                         const AttributeVector& attrs) {
  const TreeNode& nd = nodes[static_cast<std::size_t>(i)];
  if (nd.is_leaf()) return nd.value;
  if (attrs[static_cast<std::size_t>(nd.attr)] < nd.threshold) {
    return predict_recursive(nodes, nd.left, attrs);
  }
  return predict_recursive(nodes, nd.right, attrs);
}

// Random well-formed tree with leaves in range.
std::vector<TreeNode> random_tree_nodes(std::mt19937_64& rng, int depth) {
  std::vector<TreeNode> nodes;
  std::uniform_real_distribution<double> leaf_val(kDLeafMin, kDLeafMax);
  std::uniform_real_distribution<double> thr(-20.0, 280.0);
  std::uniform_int_distribution<int> attr(0, kAttributeArity - 1);
  std::uniform_int_distribution<int> coin(0, 3);

  // Build recursively; index 0 is the root.
  struct Builder {
    std::vector<TreeNode>& nodes;
    std::mt19937_64& rng;
    std::uniform_real_distribution<double>& leaf_val;
    std::uniform_real_distribution<double>& thr;
    std::uniform_int_distribution<int>& attr;
    std::uniform_int_distribution<int>& coin;

    int build(int depth) {
      const int me = static_cast<int>(nodes.size());
      nodes.emplace_back();
      if (depth == 0 || coin(rng) == 0) {
        nodes[static_cast<std::size_t>(me)].value = leaf_val(rng);
        return me;
      }
      nodes[static_cast<std::size_t>(me)].attr = attr(rng);
      nodes[static_cast<std::size_t>(me)].threshold = thr(rng);
      const int l = build(depth - 1);
      const int r = build(depth - 1);
      nodes[static_cast<std::size_t>(me)].left = l;
      nodes[static_cast<std::size_t>(me)].right = r;
      return me;
    }
  } builder{nodes, rng, leaf_val, thr, attr, coin};
  builder.build(depth);
  return nodes;
}

double sample_mse(const RegressionTree& tree,
                  const std::vector<LabeledSample>& samples) {
  double mse = 0.0;
  for (const LabeledSample& s : samples) {
    const double e = tree.predict(s.attrs) - s.d;
    mse += e * e;
  }
  return mse / static_cast<double>(samples.size());
}

}  // namespace

TEST_CASE("attributes of a constant image") {
  RgbImage img(30, 30);
  for (std::size_t i = 0; i < img.n_sites(); ++i) {
    img.r[i] = 120.0;
    img.g[i] = 80.0;
    img.b[i] = 40.0;
  }
  const AttributeVector a = extract_attributes(img, 15, 15);
  for (int w = 0; w < 5; ++w) {
    CHECK(a[static_cast<std::size_t>(6 * w) + 0] == 80.0);    // G max
    CHECK(a[static_cast<std::size_t>(6 * w) + 1] == 80.0);    // G min
    CHECK(a[static_cast<std::size_t>(6 * w) + 2] == 40.0);    // (R-G) max
    CHECK(a[static_cast<std::size_t>(6 * w) + 3] == 40.0);
    CHECK(a[static_cast<std::size_t>(6 * w) + 4] == -40.0);   // (B-G) max
    CHECK(a[static_cast<std::size_t>(6 * w) + 5] == -40.0);
  }
}

TEST_CASE("a single bright pixel dominates the smallest window max") {
  RgbImage img(9, 9);
  for (std::size_t i = 0; i < img.n_sites(); ++i) img.g[i] = 10.0;
  img.g.at(4, 4) = 200.0;
  const AttributeVector a = extract_attributes(img, 4, 4);
  CHECK(a[0] == 200.0);  // w=3 G max
  CHECK(a[1] == 10.0);   // w=3 G min
}

TEST_CASE("sliding extractor equals the direct window scan everywhere") {
  const RgbImage img = random_image(25, 23, 41);
  const AttributeExtractor ex(img);
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 60; ++rep) {
    const int x = static_cast<int>(rng() % 25);
    const int y = static_cast<int>(rng() % 23);
    const AttributeVector direct = extract_attributes(img, x, y);
    const AttributeVector fast = ex.at(x, y);
    for (int k = 0; k < kAttributeArity; ++k) {
      CHECK(fast[static_cast<std::size_t>(k)] ==
            doctest::Approx(direct[static_cast<std::size_t>(k)]));
    }
  }
}

TEST_CASE("attribute invariant: max >= min per window and quantity") {
  const RgbImage img = random_image(24, 24, 43);
  std::mt19937_64 rng(44);
  for (int rep = 0; rep < 30; ++rep) {
    const AttributeVector a = extract_attributes(
        img, static_cast<int>(rng() % 24), static_cast<int>(rng() % 24));
    for (int slot = 0; slot < kAttributeArity; slot += 2) {
      CHECK(a[static_cast<std::size_t>(slot)] >=
            a[static_cast<std::size_t>(slot) + 1]);
    }
  }
}

TEST_CASE("predict_d basics") {
  const RegressionTree leaf = RegressionTree::single_leaf(1.5);
  std::mt19937_64 rng(45);
  CHECK(leaf.predict(random_attrs(rng)) == 1.5);

  std::vector<TreeNode> nodes(3);
  nodes[0].attr = 0;
  nodes[0].threshold = 10.0;
  nodes[0].left = 1;
  nodes[0].right = 2;
  nodes[1].value = 0.25;
  nodes[2].value = 3.0;
  const RegressionTree depth1(std::move(nodes));
  AttributeVector a{};
  a[0] = 5.0;
  CHECK(depth1.predict(a) == 0.25);
  a[0] = 15.0;
  CHECK(depth1.predict(a) == 3.0);
}

TEST_CASE("predict_d agrees with an independent recursive traversal") {
  std::mt19937_64 rng(46);
  for (int rep = 0; rep < 100; ++rep) {
    const auto nodes = random_tree_nodes(rng, 5);
    const RegressionTree tree{std::vector<TreeNode>(nodes)};
    for (int q = 0; q < 5; ++q) {
      const AttributeVector attrs = random_attrs(rng);
      CHECK(tree.predict(attrs) == predict_recursive(nodes, 0, attrs));
      CHECK(predict_d(tree, attrs) >= kDLeafMin);
      CHECK(predict_d(tree, attrs) <= kDLeafMax);
    }
  }
}

TEST_CASE("malformed trees fail at load time") {
  // Leaf out of range.
  std::vector<TreeNode> bad1(1);
  bad1[0].value = 5.0;
  CHECK_THROWS_AS(RegressionTree(std::move(bad1)), std::invalid_argument);

  // Child index out of range.
  std::vector<TreeNode> bad2(2);
  bad2[0].attr = 0;
  bad2[0].left = 1;
  bad2[0].right = 7;
  bad2[1].value = 1.0;
  CHECK_THROWS_AS(RegressionTree(std::move(bad2)), std::invalid_argument);

  // Node reached twice (diamond).
  std::vector<TreeNode> bad3(2);
  bad3[0].attr = 0;
  bad3[0].left = 1;
  bad3[0].right = 1;
  bad3[1].value = 1.0;
  CHECK_THROWS_AS(RegressionTree(std::move(bad3)), std::invalid_argument);

  // Unreachable node.
  std::vector<TreeNode> bad4(2);
  bad4[0].value = 1.0;
  bad4[1].value = 2.0;
  CHECK_THROWS_AS(RegressionTree(std::move(bad4)), std::invalid_argument);
}

TEST_CASE("beta_link closed-form values and monotonicity") {
  BetaParams params;
  params.beta0 = 2.0;
  params.alpha = 4.0;
  params.R = 10.0;
  params.radius = 3.0;
  Grid l(5, 1, 100.0);

  // Adjacent sites, equal brightness, d = 1.
  CHECK(beta_link(0, 0, 1, 0, l, 1.0, 1.0, params) ==
        doctest::Approx(2.0 * std::exp(-0.5) * 5.0));

  // Distance 0 (hypothetical supremum).
  CHECK(beta_link(2, 0, 2, 0, l, 1.0, 1.0, params) ==
        doctest::Approx(2.0 * 5.0));

  // Large brightness difference: second factor tends to 1.
  Grid l2 = l;
  l2.at(1, 0) = 1e9;
  CHECK(beta_link(0, 0, 1, 0, l2, 1.0, 1.0, params) ==
        doctest::Approx(2.0 * std::exp(-0.5)));

  // Monotone in distance and in brightness difference.
  double prev = 1e300;
  for (int dx = 1; dx <= 3; ++dx) {
    const double w = beta_link(0, 0, dx, 0, l, 1.2, 1.2, params);
    CHECK(w < prev);
    CHECK(w > 0.0);
    CHECK(w <= params.beta0 * (1.0 + params.alpha));
    prev = w;
  }
  prev = 1e300;
  for (double dl : {0.0, 5.0, 20.0, 80.0}) {
    Grid lm = l;
    lm.at(1, 0) = 100.0 + dl;
    const double w = beta_link(0, 0, 1, 0, lm, 1.0, 1.0, params);
    CHECK(w <= prev);
    prev = w;
  }

  // The pairwise scale is min(d_i, d_j).
  CHECK(beta_link(0, 0, 1, 0, l, 0.5, 3.0, params) ==
        doctest::Approx(beta_link(0, 0, 1, 0, l, 0.5, 0.5, params)));

  CHECK_THROWS_AS(beta_link(0, 0, 4, 0, l, 1.0, 1.0, params),
                  std::invalid_argument);
}

TEST_CASE("link graph construction: radius, pruning, and a pairwise oracle") {
  // radius 1 on a chain: nearest neighbors only.
  PolarImage polar(8, 1, false);
  for (std::size_t i = 0; i < 8; ++i) {
    polar.l[i] = 50.0;
    polar.theta[i] = 0.4;
  }
  RgbImage working(8, 1);
  for (std::size_t i = 0; i < 8; ++i) working.g[i] = 50.0;
  BetaParams params;
  params.radius = 1.0;
  params.prune_eps = 0.0;
  const LinkGraph chain = build_link_graph(polar, working, 1.0, params);
  CHECK(chain.links().size() == 7);
  for (const Link& lk : chain.links()) CHECK(lk.j == lk.i + 1);

  // Constant image: all same-distance links share one weight.
  PolarImage polar2(10, 6, true);
  for (std::size_t i = 0; i < polar2.n_sites(); ++i) {
    polar2.l[i] = 80.0;
    polar2.theta[i] = 0.8;
    polar2.phi[i] = 0.3;
  }
  RgbImage working2(10, 6);
  for (std::size_t i = 0; i < working2.n_sites(); ++i) {
    working2.r[i] = working2.g[i] = working2.b[i] = 80.0;
  }
  BetaParams params2;
  params2.radius = 2.0;
  const LinkGraph g2 =
      build_link_graph(polar2, working2, RegressionTree::single_leaf(1.3),
                       params2);
  for (const Link& lk : g2.links()) {
    const int dx = std::abs(lk.i % 10 - lk.j % 10);
    const int dy = std::abs(lk.i / 10 - lk.j / 10);
    const double want = beta_link(0, 0, dx, dy, polar2.l, 1.3, 1.3, params2);
    CHECK(lk.w == doctest::Approx(want));
  }

  // 8x8 random instance against per-pair recomputation.
  const RgbImage img = random_image(8, 8, 47);
  PolarImage polar3(8, 8, true);
  std::mt19937_64 rng(48);
  std::uniform_real_distribution<double> uni(10.0, 200.0);
  for (std::size_t i = 0; i < polar3.n_sites(); ++i) {
    polar3.l[i] = uni(rng);
    polar3.theta[i] = 0.5;
    polar3.phi[i] = 0.5;
  }
  BetaParams params3;
  params3.radius = 3.0;
  const RegressionTree tree{random_tree_nodes(rng, 4)};
  const LinkGraph g3 = build_link_graph(polar3, img, tree, params3);
  const AttributeExtractor ex(img);
  int checked = 0;
  for (const Link& lk : g3.links()) {
    const int xi = lk.i % 8, yi = lk.i / 8, xj = lk.j % 8, yj = lk.j / 8;
    const double di = tree.predict(ex.at(xi, yi));
    const double dj = tree.predict(ex.at(xj, yj));
    const double want = beta_link(xi, yi, xj, yj, polar3.l, di, dj, params3);
    CHECK(lk.w == doctest::Approx(want));
    ++checked;
  }
  CHECK(checked > 100);

  // Pruning drops weak links.
  BetaParams params4 = params3;
  params4.prune_eps = 0.9;  // keep only the strongest
  const LinkGraph g4 = build_link_graph(polar3, img, tree, params4);
  CHECK(g4.links().size() < g3.links().size());
  for (const Link& lk : g4.links()) {
    CHECK(lk.w >= params4.prune_eps * params4.beta0);
  }
}

TEST_CASE("train_tree: constant labels collapse to one leaf") {
  std::mt19937_64 rng(49);
  std::vector<LabeledSample> samples(20);
  for (auto& s : samples) {
    s.attrs = random_attrs(rng);
    s.d = 2.0;
  }
  const RegressionTree tree = train_tree(samples, 1, 0);
  CHECK(tree.nodes().size() == 1);
  CHECK(tree.predict(samples[0].attrs) == 2.0);
}

TEST_CASE("train_tree: two separated clusters give a depth-1 tree") {
  std::mt19937_64 rng(50);
  std::vector<LabeledSample> samples;
  for (int i = 0; i < 10; ++i) {
    LabeledSample s;
    s.attrs = random_attrs(rng);
    s.attrs[0] = 1.0 + 0.01 * i;
    s.d = 0.5;
    samples.push_back(s);
    s.attrs = random_attrs(rng);
    s.attrs[0] = 100.0 + 0.01 * i;
    s.d = 2.5;
    samples.push_back(s);
  }
  const RegressionTree tree = train_tree(samples, 1, 0);
  CHECK(tree.depth() == 1);
  AttributeVector lo{}, hi{};
  lo[0] = 1.05;
  hi[0] = 100.05;
  CHECK(tree.predict(lo) == doctest::Approx(0.5));
  CHECK(tree.predict(hi) == doctest::Approx(2.5));
}

TEST_CASE("train_tree at depth 2 beats or ties the best single split") {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> label(kDLeafMin, kDLeafMax);
  std::vector<LabeledSample> samples(50);
  for (auto& s : samples) {
    s.attrs = random_attrs(rng);
    s.d = label(rng);
  }
  const RegressionTree deep = train_tree(samples, 1, 2);
  const RegressionTree single = train_tree(samples, 1, 1);
  CHECK(sample_mse(deep, samples) <= sample_mse(single, samples) + 1e-12);
}

TEST_CASE("train_tree reaches zero error under the exact-fit conditions") {
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> label(kDLeafMin, kDLeafMax);
  std::vector<LabeledSample> samples(40);
  for (auto& s : samples) {
    s.attrs = random_attrs(rng);  // distinct with probability 1
    s.d = label(rng);
  }
  const RegressionTree tree = train_tree(samples, 1, 0);
  CHECK(sample_mse(tree, samples) == doctest::Approx(0.0).epsilon(1e-24));
}

TEST_CASE("train_tree input validation") {
  std::mt19937_64 rng(53);
  std::vector<LabeledSample> few(3);
  for (auto& s : few) {
    s.attrs = random_attrs(rng);
    s.d = 1.0;
  }
  CHECK_THROWS_AS(train_tree(few, 2, 0), std::invalid_argument);

  std::vector<LabeledSample> bad(4);
  for (auto& s : bad) {
    s.attrs = random_attrs(rng);
    s.d = 9.0;  // out of the leaf range
  }
  CHECK_THROWS_AS(train_tree(bad, 1, 0), std::invalid_argument);
}
