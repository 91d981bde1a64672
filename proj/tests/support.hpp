#pragma once

// Shared fixtures for the test binaries.

#include "csg/model.hpp"

#include <random>

namespace csg::testing {

// Axis-aligned box in Phi-coordinates.
inline PhiPolytopeDomain phi_box(const Vec3& lo, const Vec3& hi) {
  PhiPolytopeDomain d;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e(a) = 1;
    d.halfspaces.push_back({-e, -lo(a)});
    d.halfspaces.push_back({e, hi(a)});
  }
  return d;
}

inline PhiPolytopeDomain phi_simplex(const Vec3& origin, double size) {
  PhiPolytopeDomain d;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e(a) = -1;
    d.halfspaces.push_back({e, -origin(a)});
  }
  d.halfspaces.push_back({Vec3(1, 1, 1), origin.sum() + size});
  return d;
}

// Seeds with distinct heights spread through [zlo, zhi] and equal masses.
inline Ensemble random_ensemble(std::size_t n, std::mt19937_64& rng, Vec3 zlo = Vec3(0, 0, 1),
                                Vec3 zhi = Vec3(1, 1, 3)) {
  std::uniform_real_distribution<double> U(0, 1);
  Ensemble e;
  for (std::size_t i = 0; i < n; ++i) {
    // Stratify heights so planes never coincide.
    double h = zlo(2) + (zhi(2) - zlo(2)) * (i + 0.1 + 0.8 * U(rng)) / n;
    e.z.emplace_back(zlo(0) + (zhi(0) - zlo(0)) * U(rng), zlo(1) + (zhi(1) - zlo(1)) * U(rng), h);
    e.m.push_back(1.0 / n);
  }
  std::shuffle(e.z.begin(), e.z.end(), rng);
  return e;
}

}  // namespace csg::testing
