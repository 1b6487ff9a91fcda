#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

#include "emdem/prior.hpp"

using namespace emdem;

namespace {
constexpr double kPi = std::numbers::pi;

// Dense covariance straight from the definition:
// Sigma_jk = (1/N) sum_f m_f cos(2 pi f (j-k) / N).
Eigen::MatrixXd dense_covariance_1d(const BrightnessPrior& prior) {
  const auto m = spectral_multipliers(prior);
  const int n = prior.n_sites();
  Eigen::MatrixXd s(n, n);
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < n; ++k) {
      double acc = 0.0;
      for (int f = 0; f < n; ++f) {
        acc += m[static_cast<std::size_t>(f)] *
               std::cos(2.0 * kPi * f * (j - k) / n);
      }
      s(j, k) = acc / n;
    }
  }
  return s;
}

}  // namespace

TEST_CASE("spectral multipliers: white limit, clamp, and a pinned value") {
  BrightnessPrior white{4, 1, 2.5, 1e-12, 0.5};
  for (double m : spectral_multipliers(white)) {
    CHECK(m == doctest::Approx(2.5).epsilon(1e-9));
  }

  BrightnessPrior p{4, 1, 1.0, 2.0, 0.01};
  const auto m = spectral_multipliers(p);
  CHECK(m[0] == doctest::Approx(std::pow(0.01, -2.0)));  // clamped DC
  CHECK(m[1] == doctest::Approx(std::pow(kPi / 2.0, -2.0)));
  CHECK(m[2] == doctest::Approx(std::pow(kPi, -2.0)));
  CHECK(m[3] == doctest::Approx(std::pow(kPi / 2.0, -2.0)));  // folded
  for (double v : m) {
    CHECK(v > 0.0);
    CHECK(std::isfinite(v));
  }
}

TEST_CASE("prior validation") {
  CHECK_THROWS_AS(spectral_multipliers(BrightnessPrior{0, 1, 1.0, 2.0, 0.1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(spectral_multipliers(BrightnessPrior{4, 1, -1.0, 2.0, 0.1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(spectral_multipliers(BrightnessPrior{4, 1, 1.0, -2.0, 0.1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(spectral_multipliers(BrightnessPrior{4, 1, 1.0, 2.0, 4.0}),
                  std::invalid_argument);
}

TEST_CASE("apply_precision: zero input, round trip, length check") {
  BrightnessPrior p{64, 1, 2.0, 2.0, -1.0};
  SpectralOps ops(p);

  std::vector<double> zero(64, 0.0);
  for (double v : ops.apply_precision(zero)) CHECK(v == doctest::Approx(0.0));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> v(64);
  for (double& x : v) x = uni(rng);
  const auto round_trip = ops.apply_covariance(ops.apply_precision(v));
  for (int i = 0; i < 64; ++i) {
    CHECK(round_trip[static_cast<std::size_t>(i)] ==
          doctest::Approx(v[static_cast<std::size_t>(i)]).epsilon(1e-10));
  }

  std::vector<double> wrong(16);
  std::vector<double> out(64);
  CHECK_THROWS_AS(ops.apply_precision(std::span<const double>(wrong),
                                      std::span<double>(out)),
                  std::invalid_argument);
}

TEST_CASE("apply operators match the dense Fourier-basis matrix at N=8") {
  BrightnessPrior p{8, 1, 1.5, 1.7, -1.0};
  SpectralOps ops(p);
  const Eigen::MatrixXd sigma = dense_covariance_1d(p);
  const Eigen::MatrixXd prec = sigma.inverse();

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd v(8);
    for (int i = 0; i < 8; ++i) v(i) = uni(rng);
    std::vector<double> vin(v.data(), v.data() + 8);
    const auto cov = ops.apply_covariance(vin);
    const auto pre = ops.apply_precision(vin);
    const Eigen::VectorXd cov_ref = sigma * v;
    const Eigen::VectorXd pre_ref = prec * v;
    for (int i = 0; i < 8; ++i) {
      CHECK(cov[static_cast<std::size_t>(i)] ==
            doctest::Approx(cov_ref(i)).epsilon(1e-10));
      CHECK(pre[static_cast<std::size_t>(i)] ==
            doctest::Approx(pre_ref(i)).epsilon(1e-10));
    }
  }
}

TEST_CASE("covariance operator is symmetric positive definite") {
  for (int n : {16, 64}) {
    BrightnessPrior p{n, 1, 3.0, 2.0, -1.0};
    const Eigen::MatrixXd sigma = dense_covariance_1d(p);
    CHECK((sigma - sigma.transpose()).norm() < 1e-10 * sigma.norm());
    std::mt19937_64 rng(n);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
      Eigen::VectorXd v(n);
      for (int i = 0; i < n; ++i) v(i) = uni(rng);
      if (v.norm() == 0.0) continue;
      CHECK(v.dot(sigma * v) > 0.0);
    }
  }
}

TEST_CASE("2d multipliers are radially symmetric") {
  BrightnessPrior p{8, 8, 1.0, 2.0, -1.0};
  const auto m = spectral_multipliers(p);
  // (kx, ky) and (ky, kx) share |omega|_2.
  for (int ky = 0; ky < 8; ++ky) {
    for (int kx = 0; kx < 8; ++kx) {
      CHECK(m[static_cast<std::size_t>(ky) * 8 + kx] ==
            doctest::Approx(m[static_cast<std::size_t>(kx) * 8 + ky]));
    }
  }
}

TEST_CASE("calibrate_eps0 hits the requested marginal std") {
  BrightnessPrior shape{32, 1, 1.0, 2.0, -1.0};
  shape.eps0 = calibrate_eps0(shape, 60.0);
  SpectralOps ops(shape);
  CHECK(std::sqrt(ops.marginal_variance()) == doctest::Approx(60.0));
}

TEST_CASE("color_potential basics") {
  const auto u0 = unit_color_vector(0.3, 0.9);
  CHECK(color_potential(u0, u0) == doctest::Approx(0.0));

  const auto a = unit_color_vector(0.0, 0.0);
  const auto b = unit_color_vector(kPi / 2.0, 0.0);
  CHECK(color_potential(a, b) == doctest::Approx(1.0));

  const auto c = unit_color_vector(0.3, 0.0);
  const auto d = unit_color_vector(0.8, 0.0);
  CHECK(color_potential(c, d) == doctest::Approx(std::sin(0.5)));
  CHECK(color_potential(d, c) == doctest::Approx(std::sin(0.5)));

  CHECK_THROWS_AS(color_potential({1.0, 1.0, 0.0}, a), std::invalid_argument);

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> uni(0.0, kPi / 2.0);
  for (int k = 0; k < 100; ++k) {
    const auto u = unit_color_vector(uni(rng), uni(rng));
    const auto v = unit_color_vector(uni(rng), uni(rng));
    const double pot = color_potential(u, v);
    CHECK(pot >= 0.0);
    CHECK(pot <= 1.0);
    CHECK(pot == doctest::Approx(color_potential(v, u)));
  }
}

TEST_CASE("link graph canonicalization and validation") {
  CHECK_THROWS_AS(LinkGraph(4, {Link{1, 1, 0.5}}), std::invalid_argument);
  CHECK_THROWS_AS(LinkGraph(4, {Link{0, 4, 0.5}}), std::invalid_argument);
  CHECK_THROWS_AS(LinkGraph(4, {Link{0, 1, -0.5}}), std::invalid_argument);
  CHECK_THROWS_AS(LinkGraph(4, {Link{0, 1, 0.5}, Link{1, 0, 0.2}}),
                  std::invalid_argument);

  const LinkGraph g(4, {Link{2, 0, 0.5}, Link{1, 2, 0.25}});
  CHECK(g.links()[0].i == 0);
  CHECK(g.links()[0].j == 2);
  CHECK(g.adjacency()[2].size() == 2);
}

TEST_CASE("mrf energy: constants, a single link, and a summation oracle") {
  PolarImage constant(5, 1, true);
  for (std::size_t i = 0; i < 5; ++i) {
    constant.l[i] = 1.0;
    constant.theta[i] = 0.7;
    constant.phi[i] = 0.2;
  }
  std::vector<Link> chain;
  for (int i = 0; i + 1 < 5; ++i) chain.push_back(Link{i, i + 1, 2.0});
  const LinkGraph graph(5, chain);
  CHECK(mrf_energy(constant, graph) == doctest::Approx(0.0));

  PolarImage two(2, 1, false);
  two.theta.at(0, 0) = 0.0;
  two.theta.at(1, 0) = kPi / 2.0;
  const LinkGraph pair_graph(2, {Link{0, 1, 2.0}});
  CHECK(mrf_energy(two, pair_graph) == doctest::Approx(2.0));

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uni(0.0, kPi / 2.0);
  PolarImage rnd(6, 1, true);
  for (std::size_t i = 0; i < 6; ++i) {
    rnd.theta[i] = uni(rng);
    rnd.phi[i] = uni(rng);
  }
  std::vector<Link> links6;
  std::uniform_real_distribution<double> w(0.0, 3.0);
  for (int i = 0; i + 1 < 6; ++i) links6.push_back(Link{i, i + 1, w(rng)});
  const LinkGraph g6(6, links6);
  double manual = 0.0;
  for (const Link& lk : g6.links()) {
    manual += lk.w * color_potential(
                         unit_color_vector(rnd.theta[lk.i], rnd.phi[lk.i]),
                         unit_color_vector(rnd.theta[lk.j], rnd.phi[lk.j]));
  }
  CHECK(mrf_energy(rnd, g6) == doctest::Approx(manual).epsilon(1e-12));

  // Direction relabeling must not change the energy.
  std::vector<Link> flipped;
  for (const Link& lk : g6.links()) flipped.push_back(Link{lk.j, lk.i, lk.w});
  CHECK(mrf_energy(rnd, LinkGraph(6, flipped)) == doctest::Approx(manual));
}

TEST_CASE("mrf energy rejects out-of-range links") {
  PolarImage img(3, 1, false);
  CHECK_THROWS_AS(mrf_energy(img, LinkGraph(5, {Link{0, 4, 1.0}})),
                  std::invalid_argument);
}
