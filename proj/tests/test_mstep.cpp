#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "emdem/mstep.hpp"

using namespace emdem;

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kHalfPi = kPi / 2.0;

double grid_argmax(const std::function<double(double)>& f, int points) {
  double best_x = 0.0, best_v = -1e300;
  for (int i = 0; i < points; ++i) {
    const double x = kHalfPi * i / (points - 1);
    const double v = f(x);
    if (v > best_v) {
      best_v = v;
      best_x = x;
    }
  }
  return best_x;
}

struct ChainInstance {
  MosaicFrame frame;
  Grid p, d2;
  LinkGraph graph;
  double sigma;
};

ChainInstance random_chain(int n, double beta, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> up(-50.0, 400.0);
  std::uniform_real_distribution<double> ud(1.0, 300.0);
  ChainInstance inst{MosaicFrame(n, 1, MosaicLayout::Alternating1D),
                     Grid(n, 1), Grid(n, 1), LinkGraph(), 3.0};
  inst.frame.sigma = inst.sigma;
  std::vector<Link> links;
  for (int i = 0; i < n; ++i) {
    inst.p.at(i, 0) = up(rng);
    inst.d2.at(i, 0) = ud(rng);
    if (i + 1 < n) links.push_back(Link{i, i + 1, beta});
  }
  inst.graph = LinkGraph(n, std::move(links));
  return inst;
}

SurrogateTerms terms_of(const ChainInstance& inst) {
  SurrogateTerms t;
  t.P = &inst.p;
  t.Delta2 = &inst.d2;
  t.graph = &inst.graph;
  t.frame = &inst.frame;
  t.sigma = inst.sigma;
  return t;
}

// Exhaustive search over the discrete angle grid with the same
// lexicographic-smallest tie rule (strictly better replaces).
std::vector<int> brute_force_chain(const ChainInstance& inst, int k) {
  const int n = inst.frame.width;
  std::vector<double> grid(static_cast<std::size_t>(k));
  for (int s = 0; s < k; ++s) grid[static_cast<std::size_t>(s)] = kHalfPi * s / (k - 1);
  std::vector<double> beta(static_cast<std::size_t>(n - 1), 0.0);
  for (const Link& lk : inst.graph.links()) beta[static_cast<std::size_t>(lk.i)] = lk.w;

  auto unary = [&](int j, int s) {
    const double h = (j % 2 == 0) ? std::cos(grid[static_cast<std::size_t>(s)])
                                  : std::sin(grid[static_cast<std::size_t>(s)]);
    return -0.5 * h * h * inst.d2.at(j, 0) + h * inst.p.at(j, 0);
  };
  const double s2 = inst.sigma * inst.sigma;

  std::vector<int> idx(static_cast<std::size_t>(n), 0), best_idx;
  double best = -1e300;
  while (true) {
    double v = 0.0;
    for (int j = 0; j < n; ++j) {
      v += unary(j, idx[static_cast<std::size_t>(j)]);
      if (j + 1 < n) {
        v -= s2 * beta[static_cast<std::size_t>(j)] *
             std::abs(std::sin(grid[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])] -
                               grid[static_cast<std::size_t>(idx[static_cast<std::size_t>(j) + 1])]));
      }
    }
    if (v > best) {
      best = v;
      best_idx = idx;
    }
    int pos = n - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == k - 1) {
      idx[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++idx[static_cast<std::size_t>(pos)];
  }
  return best_idx;
}

}  // namespace

TEST_CASE("surrogate_constant argmax: symmetry and degenerate cases") {
  auto argmax = [](double pe, double po, double de2, double do2) {
    return grid_argmax(
        [&](double t) { return surrogate_constant(t, pe, po, de2, do2); },
        100001);
  };
  CHECK(argmax(2.0, 2.0, 1.5, 1.5) == doctest::Approx(kPi / 4.0).epsilon(1e-4));
  CHECK(argmax(1.0, 0.0, 0.0, 0.0) == doctest::Approx(0.0));

  // Random instances: golden section against the dense grid.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(0.0, 5.0);
  for (int rep = 0; rep < 25; ++rep) {
    const double pe = uni(rng), po = uni(rng), de2 = uni(rng), do2 = uni(rng);
    auto f = [&](double t) { return surrogate_constant(t, pe, po, de2, do2); };
    const double golden = binary_search_max(f, 0.0, kHalfPi, 1e-6);
    const double grid = grid_argmax(f, 100001);
    CHECK(std::abs(golden - grid) < 2e-5);  // within grid spacing + tol
  }
}

TEST_CASE("binary_search_max on elementary functions") {
  CHECK(binary_search_max([](double t) { return std::cos(t); }, 0.0, kHalfPi,
                          1e-8) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(binary_search_max([](double t) { return -(t - 0.7) * (t - 0.7); }, 0.0,
                          kHalfPi, 1e-8) == doctest::Approx(0.7));
  CHECK_THROWS_AS(binary_search_max([](double t) { return t; }, 0.0, 1.0, 0.0),
                  std::invalid_argument);
}

TEST_CASE("viterbi: decoupled chain maximizes each unary term") {
  ChainInstance inst = random_chain(9, 0.0, 5);
  const auto got = viterbi_chain(terms_of(inst), 16);
  for (int j = 0; j < 9; ++j) {
    double best_v = -1e300, best_t = 0.0;
    for (int s = 0; s < 16; ++s) {
      const double t = kHalfPi * s / 15.0;
      const double h = (j % 2 == 0) ? std::cos(t) : std::sin(t);
      const double v = -0.5 * h * h * inst.d2.at(j, 0) + h * inst.p.at(j, 0);
      if (v > best_v) {
        best_v = v;
        best_t = t;
      }
    }
    CHECK(got[static_cast<std::size_t>(j)] == doctest::Approx(best_t));
  }
}

TEST_CASE("viterbi equals exhaustive search on random instances") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 12; ++rep) {
    const int n = 2 + static_cast<int>(rng() % 5);  // up to 6
    const int k = 2 + static_cast<int>(rng() % 11); // up to 12
    const double beta = (rep % 3 == 0) ? 0.0 : 5.0 + 10.0 * (rep % 5);
    ChainInstance inst = random_chain(n, beta, 100 + rep);
    const auto got = viterbi_chain(terms_of(inst), k);
    const auto want = brute_force_chain(inst, k);
    REQUIRE(got.size() == want.size());
    for (int j = 0; j < n; ++j) {
      CHECK(got[static_cast<std::size_t>(j)] ==
            doctest::Approx(kHalfPi * want[static_cast<std::size_t>(j)] / (k - 1)));
    }
  }
}

TEST_CASE("viterbi: an overwhelming link weight forces a constant chain") {
  ChainInstance inst = random_chain(6, 1e6, 11);
  const auto got = viterbi_chain(terms_of(inst), 12);
  for (int j = 1; j < 6; ++j) {
    CHECK(got[static_cast<std::size_t>(j)] == doctest::Approx(got[0]));
  }
  const auto want = brute_force_chain(inst, 12);
  for (int j = 0; j < 6; ++j) {
    CHECK(got[static_cast<std::size_t>(j)] ==
          doctest::Approx(kHalfPi * want[static_cast<std::size_t>(j)] / 11.0));
  }
}

TEST_CASE("viterbi rejects non-chain graphs") {
  ChainInstance inst = random_chain(6, 1.0, 13);
  std::vector<Link> links = inst.graph.links();
  links.push_back(Link{0, 2, 1.0});  // skip link -> not a nearest-neighbor chain
  inst.graph = LinkGraph(6, links);
  CHECK_THROWS_AS(viterbi_chain(terms_of(inst), 8), std::invalid_argument);
}

TEST_CASE("local surrogate: no-neighbor maximum sits on the channel axis") {
  // G site, Delta2 = 0, P = 1: the surrogate is cos(theta), maximal at 0.
  auto f = [&](double t) {
    return local_surrogate_2d(t, 0.3, Channel::G, {}, 1.0, 0.0, 1.0);
  };
  CHECK(grid_argmax(f, 10001) == doctest::Approx(0.0));
}

TEST_CASE("local surrogate: a dominant link pins the site to its neighbor") {
  const double tn = 0.9, pn = 0.4;
  std::vector<NeighborTerm> nbrs{NeighborTerm{unit_color_vector(tn, pn), 1e9}};
  double best_v = -1e300, best_t = 0.0, best_p = 0.0;
  for (int i = 0; i <= 300; ++i) {
    for (int j = 0; j <= 300; ++j) {
      const double t = kHalfPi * i / 300.0, p = kHalfPi * j / 300.0;
      const double v =
          local_surrogate_2d(t, p, Channel::R, nbrs, 120.0, 90.0, 2.0);
      if (v > best_v) {
        best_v = v;
        best_t = t;
        best_p = p;
      }
    }
  }
  CHECK(best_t == doctest::Approx(tn).epsilon(0.01));
  CHECK(best_p == doctest::Approx(pn).epsilon(0.01));
}

TEST_CASE("local terms add up to the global surrogate") {
  const int w = 6, h = 4;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> ua(0.05, kHalfPi - 0.05);
  std::uniform_real_distribution<double> up(-30.0, 300.0);
  std::uniform_real_distribution<double> ud(1.0, 200.0);
  std::uniform_real_distribution<double> uw(0.0, 4.0);

  MosaicFrame frame(w, h, MosaicLayout::Bayer);
  frame.pattern = CfaPattern::from_name("RGGB");
  frame.sigma = 2.5;
  PolarImage angles(w, h, true);
  Grid p(w, h), d2(w, h);
  for (std::size_t i = 0; i < angles.n_sites(); ++i) {
    angles.theta[i] = ua(rng);
    angles.phi[i] = ua(rng);
    p[i] = up(rng);
    d2[i] = ud(rng);
  }
  std::vector<Link> links;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (x + 1 < w) links.push_back(Link{i, i + 1, uw(rng)});
      if (y + 1 < h) links.push_back(Link{i, i + w, uw(rng)});
    }
  }
  const LinkGraph graph(w * h, links);
  SurrogateTerms terms;
  terms.P = &p;
  terms.Delta2 = &d2;
  terms.graph = &graph;
  terms.frame = &frame;
  terms.sigma = frame.sigma;

  // Sum per-site data terms plus each link once.
  double total = 0.0;
  const auto& adj = graph.adjacency();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      total += local_surrogate_2d(angles.theta[static_cast<std::size_t>(i)],
                                  angles.phi[static_cast<std::size_t>(i)],
                                  frame.channel_at(x, y), {},
                                  p[static_cast<std::size_t>(i)],
                                  d2[static_cast<std::size_t>(i)], frame.sigma);
    }
  }
  for (const Link& lk : graph.links()) {
    total -= frame.sigma * frame.sigma * lk.w *
             color_potential(
                 unit_color_vector(angles.theta[lk.i], angles.phi[lk.i]),
                 unit_color_vector(angles.theta[lk.j], angles.phi[lk.j]));
  }
  CHECK(surrogate_value(angles, terms) ==
        doctest::Approx(total).epsilon(1e-12));
  (void)adj;
}

TEST_CASE("coordinate sweep never decreases the surrogate") {
  const int w = 8, h = 8;
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> ua(0.05, kHalfPi - 0.05);
  std::uniform_real_distribution<double> up(-50.0, 400.0);
  std::uniform_real_distribution<double> ud(1.0, 250.0);
  std::uniform_real_distribution<double> uw(0.0, 6.0);

  for (int rep = 0; rep < 4; ++rep) {
    MosaicFrame frame(w, h, MosaicLayout::Bayer);
    frame.pattern = CfaPattern::from_name("RGGB");
    frame.sigma = 3.0;
    PolarImage angles(w, h, true);
    Grid p(w, h), d2(w, h);
    for (std::size_t i = 0; i < angles.n_sites(); ++i) {
      angles.theta[i] = ua(rng);
      angles.phi[i] = ua(rng);
      p[i] = up(rng);
      d2[i] = ud(rng);
    }
    std::vector<Link> links;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int i = y * w + x;
        if (x + 1 < w) links.push_back(Link{i, i + 1, uw(rng)});
        if (y + 1 < h) links.push_back(Link{i, i + w, uw(rng)});
      }
    }
    const LinkGraph graph(w * h, links);
    SurrogateTerms terms;
    terms.P = &p;
    terms.Delta2 = &d2;
    terms.graph = &graph;
    terms.frame = &frame;
    terms.sigma = frame.sigma;

    const double before = surrogate_value(angles, terms);
    const double after = coordinate_max_2d(angles, terms, SweepOrder::Forward);
    CHECK(after >= before - 1e-10 * (1.0 + std::abs(before)));
    CHECK(after > before);  // random start: some site strictly improves

    // A second sweep from the result cannot decrease either.
    const double third = coordinate_max_2d(angles, terms, SweepOrder::Backward);
    CHECK(third >= after - 1e-10 * (1.0 + std::abs(after)));
  }
}

TEST_CASE("coordinate sweep at a fixed point leaves angles unchanged") {
  const int w = 4, h = 4;
  MosaicFrame frame(w, h, MosaicLayout::Bayer);
  frame.pattern = CfaPattern::from_name("RGGB");
  frame.sigma = 2.0;
  PolarImage angles(w, h, true);
  Grid p(w, h, 100.0), d2(w, h, 100.0);
  // Uniform gray is a coordinatewise maximum when every site already
  // maximizes its decoupled term and all potentials vanish.
  const LinkGraph graph(w * h, {});
  SurrogateTerms terms;
  terms.P = &p;
  terms.Delta2 = &d2;
  terms.graph = &graph;
  terms.frame = &frame;
  terms.sigma = frame.sigma;
  // Start each site at its decoupled argmax (h* = P / Delta2 = 1).
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      switch (frame.channel_at(x, y)) {
        case Channel::G: angles.theta[i] = 0.0; angles.phi[i] = 0.3; break;
        case Channel::R: angles.theta[i] = kHalfPi; angles.phi[i] = 0.0; break;
        case Channel::B: angles.theta[i] = kHalfPi; angles.phi[i] = kHalfPi; break;
      }
    }
  }
  const Grid theta_before = angles.theta;
  const Grid phi_before = angles.phi;
  const double before = surrogate_value(angles, terms);
  const double after = coordinate_max_2d(angles, terms, SweepOrder::Forward);
  CHECK(after == doctest::Approx(before));
  for (std::size_t i = 0; i < angles.n_sites(); ++i) {
    CHECK(angles.theta[i] == theta_before[i]);
    CHECK(angles.phi[i] == phi_before[i]);
  }
}

TEST_CASE("decoupled sweep matches a per-site fine-grid oracle") {
  const int w = 6, h = 6;
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> ua(0.05, kHalfPi - 0.05);
  std::uniform_real_distribution<double> up(10.0, 300.0);
  std::uniform_real_distribution<double> ud(50.0, 250.0);

  MosaicFrame frame(w, h, MosaicLayout::Bayer);
  frame.pattern = CfaPattern::from_name("RGGB");
  frame.sigma = 2.0;
  PolarImage angles(w, h, true);
  Grid p(w, h), d2(w, h);
  for (std::size_t i = 0; i < angles.n_sites(); ++i) {
    angles.theta[i] = ua(rng);
    angles.phi[i] = ua(rng);
    p[i] = up(rng);
    d2[i] = ud(rng);
  }
  const LinkGraph graph(w * h, {});
  SurrogateTerms terms;
  terms.P = &p;
  terms.Delta2 = &d2;
  terms.graph = &graph;
  terms.frame = &frame;
  terms.sigma = frame.sigma;
  coordinate_max_2d(angles, terms, SweepOrder::Forward);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const Channel ch = frame.channel_at(x, y);
      double best = -1e300;
      for (int a = 0; a <= 400; ++a) {
        for (int b = 0; b <= 400; ++b) {
          best = std::max(best, local_surrogate_2d(
                                    kHalfPi * a / 400.0, kHalfPi * b / 400.0,
                                    ch, {}, p[i], d2[i], frame.sigma));
        }
      }
      const double got = local_surrogate_2d(angles.theta[i], angles.phi[i], ch,
                                            {}, p[i], d2[i], frame.sigma);
      CHECK(got >= best - 1e-5 * (1.0 + std::abs(best)));
    }
  }
}
