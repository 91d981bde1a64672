#pragma once

// Closed-form references: the stratified steady state on a box and the
// elliptic orbit of a single seed over a centred box (gamma = 2, kappa = 1/2).

#include "csg/cost.hpp"
#include "csg/quadrature.hpp"

namespace csg {

// sigma(x) = (f*)'(ell - g ln x3) on a physical box.
class SteadyState {
 public:
  SteadyState(const BoxDomain& box, const Constants& k, double ell) : box_(box), k_(k), ell_(ell) {}

  double ell_star() const { return ell_; }
  const BoxDomain& box() const { return box_; }

  double operator()(const Vec3& x) const { return Conjugate(k_).d1(ell_ - k_.g * std::log(x(2))); }

  // int over the box of sigma for a given ell.
  static double mass(const BoxDomain& box, const Constants& k, double ell) {
    double area = (box.hi(0) - box.lo(0)) * (box.hi(1) - box.lo(1));
    return area * column_integral(box.lo(2), box.hi(2), k, ell);
  }

  double mass() const { return mass(box_, k_, ell_); }

  // int_L^U (f*)'(ell - g ln s) ds. Past s = exp(ell/g) the integrand
  // vanishes; near that point it behaves like (kink - s)^(gamma'-1), which a
  // Gauss-Jacobi rule absorbs exactly.
  static double column_integral(double L, double U, const Constants& k, double ell) {
    Conjugate fs(k);
    double kink = std::exp(ell / k.g);
    if (kink <= L) return 0;
    double a = fs.gamma_prime() - 1.0;
    const int n = 48;
    if (kink >= U) {
      Rule1D r = gauss_legendre01(n);
      double s = 0;
      for (std::size_t q = 0; q < r.x.size(); ++q) s += r.w[q] * fs.d1(ell - k.g * std::log(L + (U - L) * r.x[q]));
      return (U - L) * s;
    }
    Rule1D r = gauss_jacobi01(n, a);
    double s = 0, len = kink - L;
    for (std::size_t q = 0; q < r.x.size(); ++q) {
      double x = L + len * r.x[q];
      double one_minus = 1.0 - r.x[q];
      s += r.w[q] * fs.d1(ell - k.g * std::log(x)) / std::pow(one_minus, a);
    }
    return len * s;
  }

 private:
  BoxDomain box_;
  Constants k_;
  double ell_;
};

inline constexpr double kSteadyTol = 1e-12;

inline SteadyState steady_state(const BoxDomain& box, const Constants& k) {
  k.validate();
  if (!(box.lo(2) > k.delta && box.hi(2) < 1.0 / k.delta))
    throw config_error("steady state needs the domain inside the slab delta < x3 < 1/delta");
  double lo = k.g * std::log(k.delta);
  double span = 1.0;
  double hi = lo + span;
  while (SteadyState::mass(box, k, hi) <= 1.0) {
    span *= 2;
    hi = lo + span;
    if (span > 1e12) throw std::runtime_error("steady state bracket did not close");
  }
  while (hi - lo > kSteadyTol) {
    double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (SteadyState::mass(box, k, mid) < 1.0 ? lo : hi) = mid;
  }
  return SteadyState(box, k, 0.5 * (lo + hi));
}

struct EllipseParams {
  double a = 1, b = 1, h = 1;
  double A = 0, B = 0, omega = 0;
  Vec3 z_bar = Vec3::Zero();
  double volume = 0;
  // Validity: height bound and the oscillation condition with its margins
  // (positive when satisfied).
  bool height_ok = false;
  double height_margin = 0;
  bool oscillation_ok = false;
  double oscillation_margin = 0;

  bool valid() const { return height_ok && oscillation_ok; }
  double period() const { return 2 * M_PI / omega; }
};

class EllipseReference {
 public:
  EllipseReference(const EllipseParams& p, const Constants& k) : p_(p), k_(k) {}

  const EllipseParams& params() const { return p_; }

  Vec3 z(double t) const {
    const Vec3& zb = p_.z_bar;
    double f = k_.f_cor;
    if (p_.omega == 0) return zb;
    double c = std::cos(p_.omega * t), s = std::sin(p_.omega * t);
    return Vec3(zb(0) * c - f * p_.A * zb(1) / p_.omega * s, zb(1) * c + f * p_.B * zb(0) / p_.omega * s, zb(2));
  }

  Vec3 zdot(double t) const {
    Vec3 q = z(t);
    return Vec3(-k_.f_cor * p_.A * q(1), k_.f_cor * p_.B * q(0), 0);
  }

  // int over the box of c(x, z).
  double integral_c(const Vec3& z) const {
    double a = p_.a, b = p_.b, h = p_.h, f2 = k_.f_cor * k_.f_cor;
    double sx = 2 * b * h * (2 * a * a * a / 3 + 2 * a * z(0) * z(0));
    double sy = 2 * a * h * (2 * b * b * b / 3 + 2 * b * z(1) * z(1));
    return (0.5 * f2 * (sx + sy) + k_.g * 2 * a * b * h * h) / z(2);
  }

  double w_star(double t) const { return (1.0 + integral_c(z(t))) / p_.volume; }
  double sigma_star(const Vec3& x, double t) const { return w_star(t) - cost_c(x, z(t), k_); }

 private:
  EllipseParams p_;
  Constants k_;
};

// Box [-a,a] x [-b,b] x [0,h]. Requires gamma = 2 and kappa = 1/2.
inline EllipseReference ellipse_reference(double a, double b, double h, const Vec3& z_bar, const Constants& k) {
  if (k.gamma != 2.0 || k.kappa != 0.5) throw config_error("ellipse reference needs gamma = 2 and kappa = 1/2");
  if (!(z_bar(2) > 0)) throw config_error("seed height must be positive");
  EllipseParams p;
  p.a = a;
  p.b = b;
  p.h = h;
  p.z_bar = z_bar;
  p.volume = 4 * a * b * h;
  double f2 = k.f_cor * k.f_cor;
  p.A = 1 - p.volume * f2 * b * b / (3 * z_bar(2));
  p.B = 1 - p.volume * f2 * a * a / (3 * z_bar(2));
  double bound = p.volume * f2 * std::max(a * a, b * b) / 3;
  p.height_margin = z_bar(2) - bound;
  p.height_ok = p.height_margin > 0;
  p.omega = p.height_ok ? k.f_cor * std::sqrt(p.A * p.B) : 0;
  EllipseReference ref(p, k);

  // Oscillation condition c(x, y) - mean_X c(., y) < 1/|X| sampled on a
  // 32^3 node grid of X and 256 points of the orbit.
  double worst = -std::numeric_limits<double>::infinity();
  if (p.height_ok) {
    const int M = 32, S = 256;
    double r = std::sqrt(z_bar(0) * z_bar(0) / p.A + z_bar(1) * z_bar(1) / p.B);
    for (int s = 0; s < S; ++s) {
      double th = 2 * M_PI * s / S;
      Vec3 y(std::sqrt(p.A) * r * std::cos(th), std::sqrt(p.B) * r * std::sin(th), z_bar(2));
      double mean = ref.integral_c(y) / p.volume;
      for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j)
          for (int l = 0; l < M; ++l) {
            Vec3 x(-a + 2 * a * i / (M - 1.0), -b + 2 * b * j / (M - 1.0), h * l / (M - 1.0));
            worst = std::max(worst, cost_c(x, y, k) - mean);
          }
    }
    p.oscillation_margin = 1.0 / p.volume - worst;
    p.oscillation_ok = p.oscillation_margin > 0;
  }
  return EllipseReference(p, k);
}

}  // namespace csg
