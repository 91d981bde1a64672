#pragma once

// Core value types shared by every other header: physical constants, seed
// ensembles, fluid domains and run configuration.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace csg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Constants {
  double f_cor = 1.0;
  double g = 1.0;
  double gamma = 2.0;
  double kappa = 0.5;
  double delta = 0.01;

  double gamma_prime() const { return gamma / (gamma - 1.0); }

  // Rotation generator of the seed ODE; the third row is zero so z3 is frozen.
  Mat3 J() const {
    Mat3 m = Mat3::Zero();
    m(0, 1) = -f_cor;
    m(1, 0) = f_cor;
    return m;
  }

  // Jacobian determinant of p -> x, constant over space.
  double det_dphi() const { return 1.0 / (f_cor * f_cor * f_cor * f_cor * g); }

  // gamma = 2 sits outside the open interval of the theory but is accepted
  // because the closed-form orbit needs it.
  bool gamma_at_upper_limit() const { return gamma == 2.0; }

  void validate() const {
    if (!(f_cor > 0)) throw config_error("f_cor must be positive");
    if (!(g > 0)) throw config_error("g must be positive");
    if (!(kappa > 0)) throw config_error("kappa must be positive");
    if (!(delta > 0 && delta < 1)) throw config_error("delta must lie in (0,1)");
    if (!(gamma > 1 && gamma <= 2)) throw config_error("gamma must lie in (1,2]");
  }
};

inline constexpr double kMassSumTol = 1e-12;
inline constexpr double kPlaneSeparationTol = 1e-9;

struct Ensemble {
  std::vector<Vec3> z;
  std::vector<double> m;

  std::size_t size() const { return z.size(); }
};

struct EnsembleReport {
  double mass_sum_deviation = 0;
  double min_mass = 0;
  double min_seed_distance = std::numeric_limits<double>::infinity();
  double min_plane_gap = std::numeric_limits<double>::infinity();
  bool in_slab = true;
  bool masses_positive = true;
  bool distinct = true;
  bool well_prepared = true;
};

inline EnsembleReport validate_ensemble(const Ensemble& e, const Constants& k) {
  EnsembleReport r;
  double sum = 0;
  r.min_mass = e.m.empty() ? 0 : e.m[0];
  for (double mi : e.m) {
    sum += mi;
    r.min_mass = std::min(r.min_mass, mi);
    if (!(mi > 0)) r.masses_positive = false;
  }
  r.mass_sum_deviation = std::abs(sum - 1.0);
  for (std::size_t i = 0; i < e.size(); ++i) {
    double z3 = e.z[i](2);
    if (!(z3 > k.delta && z3 < 1.0 / k.delta)) r.in_slab = false;
    for (std::size_t j = i + 1; j < e.size(); ++j) {
      r.min_seed_distance = std::min(r.min_seed_distance, (e.z[i] - e.z[j]).norm());
      r.min_plane_gap = std::min(r.min_plane_gap, std::abs(z3 - e.z[j](2)));
    }
  }
  r.distinct = r.min_seed_distance > 0;
  r.well_prepared = r.min_plane_gap >= kPlaneSeparationTol;
  return r;
}

// Rescales masses onto the simplex if they drift past the tolerance. Returns
// true when a rescale happened so callers can log it.
inline bool normalize_masses(Ensemble& e) {
  double sum = 0;
  for (double mi : e.m) sum += mi;
  if (std::abs(sum - 1.0) <= kMassSumTol) return false;
  if (!(sum > 0)) throw config_error("ensemble masses sum to zero");
  for (double& mi : e.m) mi /= sum;
  return true;
}

// Throws unless the ensemble is usable by the dual solver.
inline void require_well_prepared(const Ensemble& e, const Constants& k) {
  if (e.size() == 0) throw config_error("empty ensemble");
  if (e.m.size() != e.z.size()) throw config_error("ensemble z and m lengths differ");
  EnsembleReport r = validate_ensemble(e, k);
  if (!r.masses_positive) throw config_error("ensemble masses must be positive");
  if (r.mass_sum_deviation > kMassSumTol) throw config_error("ensemble masses do not sum to 1");
  for (const auto& zi : e.z)
    if (!(zi(2) > 0)) throw config_error("seed third coordinate must be positive");
  if (!r.well_prepared) throw config_error("ensemble is not well-prepared (repeated z3 plane)");
}

// Half-space n.p <= d.
struct Halfspace3 {
  Vec3 n;
  double d;
};

struct Halfspace2 {
  Vec2 n;
  double d;
};

// Axis-aligned box in physical coordinates.
struct BoxDomain {
  Vec3 lo;
  Vec3 hi;
  // Horizontal subdivisions used when the curved Phi-space image is
  // replaced by prisms.
  int facets_per_side = 16;
};

// Convex polytope in Phi-coordinates; its physical image is generally curved.
struct PhiPolytopeDomain {
  std::vector<Halfspace3> halfspaces;
};

// Convex polygon in 2D Phi-coordinates.
struct PhiPolygon2DDomain {
  std::vector<Halfspace2> halfplanes;
};

// Physical rectangle for the 2D cost, polygonalized in Phi-space.
struct Box2DDomain {
  Vec2 lo;
  Vec2 hi;
  int segments = 1024;
};

using Domain = std::variant<BoxDomain, PhiPolytopeDomain, PhiPolygon2DDomain, Box2DDomain>;

inline bool is_2d(const Domain& d) {
  return std::holds_alternative<PhiPolygon2DDomain>(d) || std::holds_alternative<Box2DDomain>(d);
}

struct SimConfig {
  double tau = 1.0;
  double dt = 1e-3;
  double newton_tol = 0;  // 0 selects the gamma-dependent default
  int newton_max_iter = 100;
  int quadrature_degree = 4;
  int grid_resolution = 100;
  int record_stride = 1;
  // Box domains: "prism" (exact cells over a polygonalized image) or
  // "column" (exact in x3, Gauss in the horizontal).
  std::string box_integrator = "prism";
  int column_panels = 0;  // 0 selects 1 panel for N = 1, otherwise 24
  int column_order = 4;

  double tolerance_for(const Constants& k) const {
    if (newton_tol > 0) return newton_tol;
    return k.gamma == 2.0 ? 1e-10 : 1e-8;
  }

  void validate() const {
    if (!(tau > 0)) throw config_error("sim.tau must be positive");
    if (!(dt > 0)) throw config_error("sim.dt must be positive");
    if (newton_tol < 0) throw config_error("sim.newton_tol must be positive");
    if (newton_max_iter <= 0) throw config_error("sim.newton_max_iter must be positive");
    if (quadrature_degree <= 0) throw config_error("sim.quadrature_degree must be positive");
    if (grid_resolution <= 0) throw config_error("sim.grid_resolution must be positive");
    if (record_stride <= 0) throw config_error("sim.record_stride must be positive");
    if (box_integrator != "prism" && box_integrator != "column")
      throw config_error("sim.box_integrator must be prism or column");
  }
};

}  // namespace csg
