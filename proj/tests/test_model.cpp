#include <catch_amalgamated.hpp>

#include "csg/model.hpp"

#include <random>

using namespace csg;

TEST_CASE("ensemble report: two seeds in distinct planes") {
  Constants k;
  Ensemble e{{Vec3(0, 0, 1), Vec3(0, 0, 2)}, {0.5, 0.5}};
  auto r = validate_ensemble(e, k);
  CHECK(r.well_prepared);
  CHECK(r.min_plane_gap == Catch::Approx(1.0));
  CHECK(r.mass_sum_deviation < 1e-15);
  CHECK(r.in_slab);
}

TEST_CASE("ensemble report: shared plane is distinct but not well-prepared") {
  Constants k;
  Ensemble e{{Vec3(0, 0, 1), Vec3(1, 0, 1)}, {0.5, 0.5}};
  auto r = validate_ensemble(e, k);
  CHECK(r.distinct);
  CHECK_FALSE(r.well_prepared);
  CHECK_THROWS_AS(require_well_prepared(e, k), config_error);
}

TEST_CASE("ensemble report: single seed is vacuously well-prepared") {
  Constants k;
  Ensemble e{{Vec3(0.3, -2, 5)}, {1.0}};
  CHECK(validate_ensemble(e, k).well_prepared);
  CHECK_NOTHROW(require_well_prepared(e, k));
}

TEST_CASE("plane gap below threshold is rejected") {
  Constants k;
  Ensemble e{{Vec3(0, 0, 1), Vec3(1, 0, 1 + 1e-10)}, {0.5, 0.5}};
  CHECK_FALSE(validate_ensemble(e, k).well_prepared);
}

TEST_CASE("slab membership uses delta") {
  Constants k;
  k.delta = 0.1;
  Ensemble e{{Vec3(0, 0, 11)}, {1.0}};
  CHECK_FALSE(validate_ensemble(e, k).in_slab);
}

TEST_CASE("masses off the simplex are renormalized") {
  Ensemble e{{Vec3(0, 0, 1), Vec3(0, 0, 2)}, {1.0, 3.0}};
  CHECK(normalize_masses(e));
  CHECK(e.m[0] == Catch::Approx(0.25));
  CHECK_FALSE(normalize_masses(e));
}

TEST_CASE("constants validation") {
  Constants k;
  CHECK_NOTHROW(k.validate());
  k.gamma = 2.5;
  CHECK_THROWS(k.validate());
  k = Constants{};
  k.delta = 1.0;
  CHECK_THROWS(k.validate());
  k = Constants{};
  k.gamma = 1.4;
  CHECK(k.gamma_prime() == Catch::Approx(3.5));
  CHECK(k.gamma_prime() > 2);
  k.gamma = 2.0;
  CHECK(k.gamma_prime() == 2.0);
}

TEST_CASE("J is skew, has a zero third row and norm f") {
  Constants k;
  k.f_cor = 1.7;
  Mat3 J = k.J();
  CHECK((J + J.transpose()).norm() == 0.0);
  CHECK(J.row(2).norm() == 0.0);
  Eigen::JacobiSVD<Mat3> svd(J);
  CHECK(svd.singularValues()(0) == Catch::Approx(1.7));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> N;
  for (int s = 0; s < 100; ++s) {
    Vec3 v(N(rng), N(rng), N(rng));
    Vec3 Jv = J * v;
    CHECK(std::abs(Jv.dot(v)) < 1e-12);
    CHECK(Jv(2) == 0.0);
  }
}

TEST_CASE("det of the coordinate change") {
  Constants k;
  k.f_cor = 2;
  k.g = 3;
  CHECK(k.det_dphi() == Catch::Approx(1.0 / 48.0));
}

TEST_CASE("sim config defaults") {
  SimConfig s;
  Constants k;
  CHECK(s.tolerance_for(k) == 1e-10);
  k.gamma = 1.5;
  CHECK(s.tolerance_for(k) == 1e-8);
  s.dt = -1;
  CHECK_THROWS(s.validate());
}
