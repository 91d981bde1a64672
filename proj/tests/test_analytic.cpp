#include <catch_amalgamated.hpp>

#include "csg/analytic.hpp"

using namespace csg;

namespace {

// Closed form for gamma = 2, kappa = 1/2 on [0,1]^2 x [L, U]:
// int (ell - ln s) ds = ell (U - L) - [s ln s - s]_L^U = 1.
double ell_closed_form(double L, double U) {
  auto F = [](double s) { return s * std::log(s) - s; };
  return (1.0 + F(U) - F(L)) / (U - L);
}

}  // namespace

TEST_CASE("steady state: closed form for the quadratic energy") {
  Constants k;
  BoxDomain box{Vec3(0, 0, 1), Vec3(1, 1, 1.8)};
  auto s = steady_state(box, k);
  CHECK(s.ell_star() == Catch::Approx(ell_closed_form(1, 1.8)).epsilon(1e-11));
  CHECK(s.ell_star() == Catch::Approx(1.57252).epsilon(1e-5));
  CHECK(std::abs(s.mass() - 1.0) < 1e-10);
  CHECK(s(Vec3(0.5, 0.5, 1.8)) == Catch::Approx(s.ell_star() - std::log(1.8)));
  CHECK(s(Vec3(0.5, 0.5, 1.8)) > 0);
}

TEST_CASE("steady state: left bracket endpoint carries no mass") {
  Constants k;
  BoxDomain box{Vec3(0, 0, 1), Vec3(1, 1, 1.8)};
  CHECK(SteadyState::mass(box, k, k.g * std::log(k.delta)) == 0.0);
}

TEST_CASE("steady state: normalization holds across energies and kappa") {
  BoxDomain box{Vec3(0, 0, 1), Vec3(2, 1, 3)};
  for (double gamma : {1.3, 1.6, 2.0})
    for (double kappa : {0.5, 1.0}) {
      Constants k;
      k.gamma = gamma;
      k.kappa = kappa;
      k.g = 0.7;
      auto s = steady_state(box, k);
      CHECK(std::abs(s.mass() - 1.0) < 1e-10);
      // Independent check: composite Simpson in x3.
      const int n = 20000;
      double h = (box.hi(2) - box.lo(2)) / n, acc = 0;
      for (int i = 0; i <= n; ++i) {
        double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
        acc += w * s(Vec3(0, 0, box.lo(2) + i * h));
      }
      CHECK(acc * h / 3 * 2.0 == Catch::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("steady state: domain outside the slab is rejected") {
  Constants k;
  CHECK_THROWS_AS(steady_state(BoxDomain{Vec3(0, 0, 0), Vec3(1, 1, 1)}, k), config_error);
}

TEST_CASE("ellipse reference: circular orbit parameters") {
  Constants k;
  auto ref = ellipse_reference(1, 1, 1, Vec3(0.1, 0, 10), k);
  const auto& p = ref.params();
  CHECK(p.A == Catch::Approx(13.0 / 15.0));
  CHECK(p.B == Catch::Approx(13.0 / 15.0));
  CHECK(p.period() == Catch::Approx(30 * M_PI / 13).epsilon(1e-14));
  CHECK(p.valid());
  CHECK(p.oscillation_margin > 0);
  for (double t : {0.0, 1.0, 3.3}) CHECK(ref.z(t).head<2>().norm() == Catch::Approx(0.1).epsilon(1e-14));
  CHECK((ref.z(p.period()) - p.z_bar).norm() < 1e-14);
}

TEST_CASE("ellipse reference: trajectory solves the linear system and stays on the level set") {
  Constants k;
  k.f_cor = 1.3;
  auto ref = ellipse_reference(1.0, 0.6, 0.8, Vec3(0.05, -0.03, 12), k);
  const auto& p = ref.params();
  CHECK(p.A != p.B);
  double level = p.z_bar(0) * p.z_bar(0) / p.A + p.z_bar(1) * p.z_bar(1) / p.B;
  for (int s = 0; s <= 100; ++s) {
    double t = 0.1 * s, h = 1e-5;
    Vec3 fd = (ref.z(t + h) - ref.z(t - h)) / (2 * h);
    CHECK((fd - ref.zdot(t)).norm() < 1e-9);
    Vec3 z = ref.z(t);
    CHECK(z(0) * z(0) / p.A + z(1) * z(1) / p.B == Catch::Approx(level).epsilon(1e-12));
    CHECK(z(2) == p.z_bar(2));
  }
}

TEST_CASE("ellipse reference: optimal weight integrates to unit mass") {
  Constants k;
  auto ref = ellipse_reference(1, 1, 1, Vec3(0.1, 0, 10), k);
  // Tensor midpoint rule on sigma* = w* - c over the box.
  const int M = 40;
  double s = 0, dv = 2.0 / M * 2.0 / M * 1.0 / M;
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j)
      for (int l = 0; l < M; ++l) {
        Vec3 x(-1 + (i + 0.5) * 2.0 / M, -1 + (j + 0.5) * 2.0 / M, (l + 0.5) / M);
        double v = ref.sigma_star(x, 0.7);
        CHECK(v > 0);
        s += v * dv;
      }
  CHECK(s == Catch::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("ellipse reference: stationary seed and failing preconditions") {
  Constants k;
  auto still = ellipse_reference(1, 1, 1, Vec3(0, 0, 10), k);
  CHECK((still.z(5.0) - Vec3(0, 0, 10)).norm() == 0.0);
  auto low = ellipse_reference(1, 1, 1, Vec3(0.1, 0, 1), k);
  CHECK_FALSE(low.params().height_ok);
  CHECK(low.params().height_margin < 0);
  // Tall enough for A, B in (0,1) but the orbit is too wide for the
  // oscillation bound.
  auto wide = ellipse_reference(1, 1, 1, Vec3(3, 0, 2), k);
  CHECK(wide.params().height_ok);
  CHECK_FALSE(wide.params().oscillation_ok);
  Constants other;
  other.gamma = 1.5;
  CHECK_THROWS_AS(ellipse_reference(1, 1, 1, Vec3(0.1, 0, 10), other), config_error);
}
