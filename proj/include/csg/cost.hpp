#pragma once

// Transport cost, internal-energy conjugate, the coordinate change to
// Phi-space and the lift that turns cost cells into power cells.

#include "csg/model.hpp"

namespace csg {

inline void require_positive_height(double y3) {
  if (!(y3 > 0)) throw std::domain_error("seed height must be positive");
}

inline double cost_c(const Vec3& x, const Vec3& y, const Constants& k) {
  require_positive_height(y(2));
  double f2 = k.f_cor * k.f_cor;
  double dx = x(0) - y(0), dy = x(1) - y(1);
  return (0.5 * f2 * (dx * dx + dy * dy) + k.g * x(2)) / y(2);
}

struct CostGradients {
  Vec3 dx;
  Vec3 dy;
};

inline CostGradients grad_cost(const Vec3& x, const Vec3& y, const Constants& k) {
  double c = cost_c(x, y, k);
  double f2 = k.f_cor * k.f_cor;
  CostGradients r;
  r.dx = Vec3(f2 * (x(0) - y(0)) / y(2), f2 * (x(1) - y(1)) / y(2), k.g / y(2));
  r.dy = Vec3(f2 * (y(0) - x(0)) / y(2), f2 * (y(1) - x(1)) / y(2), -c / y(2));
  return r;
}

// Internal energy density f(s) = kappa s^gamma.
inline double internal_energy(double s, const Constants& k) {
  return s > 0 ? k.kappa * std::pow(s, k.gamma) : 0.0;
}

struct FStar {
  double value = 0;
  double d1 = 0;
  double d2 = 0;
};

// Legendre conjugate of the internal energy and its first two derivatives.
// Everything vanishes for t <= 0.
class Conjugate {
 public:
  explicit Conjugate(const Constants& k) : gp_(k.gamma_prime()), quadratic_(k.gamma == 2.0) {
    scale_ = std::pow(k.kappa * k.gamma, 1.0 - gp_);
  }

  double gamma_prime() const { return gp_; }

  FStar operator()(double t) const {
    FStar r;
    if (!(t > 0)) return r;
    if (quadratic_) {
      r.d1 = scale_ * t;
      r.value = 0.5 * r.d1 * t;
      r.d2 = scale_;
      return r;
    }
    double tp = std::pow(t, gp_ - 2.0);
    r.d2 = (gp_ - 1.0) * scale_ * tp;
    r.d1 = scale_ * tp * t;
    r.value = r.d1 * t / gp_;
    return r;
  }

  double d1(double t) const {
    if (!(t > 0)) return 0.0;
    return quadratic_ ? scale_ * t : scale_ * std::pow(t, gp_ - 1.0);
  }

  double value(double t) const {
    if (!(t > 0)) return 0.0;
    return quadratic_ ? 0.5 * scale_ * t * t : scale_ * std::pow(t, gp_) / gp_;
  }

  // Antiderivative of the conjugate vanishing at 0.
  double antiderivative(double t) const {
    if (!(t > 0)) return 0.0;
    if (quadratic_) return scale_ * t * t * t / 6.0;
    return scale_ * std::pow(t, gp_ + 1.0) / (gp_ * (gp_ + 1.0));
  }

 private:
  double gp_;
  double scale_;
  bool quadratic_;
};

inline FStar fstar_derivatives(double t, const Constants& k) { return Conjugate(k)(t); }

// Phi maps convex coordinates p to physical x; the cost is affine in p.
inline Vec3 phi(const Vec3& p, const Constants& k) {
  double if2 = 1.0 / (k.f_cor * k.f_cor);
  return Vec3(if2 * p(0), if2 * p(1), (p(2) - 0.5 * if2 * (p(0) * p(0) + p(1) * p(1))) / k.g);
}

inline Vec3 phi_inverse(const Vec3& x, const Constants& k) {
  double f2 = k.f_cor * k.f_cor;
  return Vec3(f2 * x(0), f2 * x(1), k.g * x(2) + 0.5 * f2 * (x(0) * x(0) + x(1) * x(1)));
}

struct AffineCostForm {
  Vec3 a;
  double b;

  double operator()(const Vec3& p) const { return a.dot(p) + b; }
};

// c(phi(p), y) = a.p + b.
inline AffineCostForm affine_cost_form(const Vec3& y, const Constants& k) {
  require_positive_height(y(2));
  double inv = 1.0 / y(2);
  double f2 = k.f_cor * k.f_cor;
  return {Vec3(-y(0) * inv, -y(1) * inv, inv), 0.5 * f2 * (y(0) * y(0) + y(1) * y(1)) * inv};
}

struct PowerLift {
  std::vector<Vec3> y_hat;
  std::vector<double> psi_hat;
};

// In p-coordinates c(phi(p), z_i) - w_i = |p - y_hat_i|^2 - psi_hat_i - |p|^2.
inline PowerLift power_lift(const VecX& w, const Ensemble& e, const Constants& k) {
  PowerLift r;
  r.y_hat.reserve(e.size());
  r.psi_hat.reserve(e.size());
  double f2 = k.f_cor * k.f_cor;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const Vec3& z = e.z[i];
    double h = 0.5 / z(2);
    Vec3 yh(h * z(0), h * z(1), -h);
    r.y_hat.push_back(yh);
    r.psi_hat.push_back(w(i) + yh.squaredNorm() - f2 * (z(0) * z(0) + z(1) * z(1)) * h);
  }
  return r;
}

// Bisector half-space of cell i against j in p-space: n.p <= d.
inline Halfspace3 power_bisector(const PowerLift& lift, std::size_t i, std::size_t j) {
  const Vec3& yi = lift.y_hat[i];
  const Vec3& yj = lift.y_hat[j];
  Vec3 n = 2.0 * (yj - yi);
  double d = yj.squaredNorm() - yi.squaredNorm() - lift.psi_hat[j] + lift.psi_hat[i];
  double s = n.norm();
  return {n / s, d / s};
}

// Index minimizing c(x, z_i) - w_i; ties go to the lowest index.
inline std::size_t assign_point(const Vec3& x, const VecX& w, const Ensemble& e, const Constants& k) {
  std::size_t best = 0;
  double bv = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < e.size(); ++i) {
    double v = cost_c(x, e.z[i], k) - w(i);
    if (v < bv) {
      bv = v;
      best = i;
    }
  }
  return best;
}

// ---- 2D cost: c(x, y) = (f^2 (x1 - y1)^2 / 2 + g x2) / y2 -----------------

inline double cost_c2d(const Vec2& x, const Vec2& y, const Constants& k) {
  require_positive_height(y(1));
  double dx = x(0) - y(0);
  return (0.5 * k.f_cor * k.f_cor * dx * dx + k.g * x(1)) / y(1);
}

inline Vec2 phi2d(const Vec2& p, const Constants& k) {
  double if2 = 1.0 / (k.f_cor * k.f_cor);
  return Vec2(if2 * p(0), (p(1) - 0.5 * if2 * p(0) * p(0)) / k.g);
}

inline Vec2 phi2d_inverse(const Vec2& x, const Constants& k) {
  double f2 = k.f_cor * k.f_cor;
  return Vec2(f2 * x(0), k.g * x(1) + 0.5 * f2 * x(0) * x(0));
}

inline double det_dphi2d(const Constants& k) { return 1.0 / (k.f_cor * k.f_cor * k.g); }

struct AffineCostForm2D {
  Vec2 a;
  double b;

  double operator()(const Vec2& p) const { return a.dot(p) + b; }
};

inline AffineCostForm2D affine_cost_form2d(const Vec2& y, const Constants& k) {
  require_positive_height(y(1));
  double inv = 1.0 / y(1);
  return {Vec2(-y(0) * inv, inv), 0.5 * k.f_cor * k.f_cor * y(0) * y(0) * inv};
}

// Weights that turn the power diagram of the affine costs a_i.p + b_i into
// the Voronoi diagram of points q_i = center + s (a_bar - a_i), with s halved
// until every q_i lies in the domain. Each cell then contains its q_i, so no
// cell starts empty.
template <class V, class Contains>
VecX spread_weights(const std::vector<V>& a, const std::vector<double>& b, const V& center, double extent,
                    Contains&& contains) {
  std::size_t n = a.size();
  VecX w(n);
  V mean = V::Zero();
  for (const auto& ai : a) mean += ai;
  mean /= double(n);
  double R = 0;
  for (const auto& ai : a) R = std::max(R, (ai - mean).norm());
  if (R == 0) {
    for (std::size_t i = 0; i < n; ++i) w(i) = b[i];
    return w;
  }
  double s = extent / R;
  std::vector<V> q(n);
  for (int tries = 0; tries < 60; ++tries, s *= 0.5) {
    bool inside = true;
    for (std::size_t i = 0; i < n && inside; ++i) {
      q[i] = center + s * (mean - a[i]);
      inside = contains(q[i]);
    }
    if (inside) break;
  }
  for (std::size_t i = 0; i < n; ++i) w(i) = b[i] - q[i].squaredNorm() / (2 * s);
  return w;
}

struct PowerLift2D {
  std::vector<Vec2> y_hat;
  std::vector<double> psi_hat;
};

inline PowerLift2D power_lift2d(const VecX& w, const std::vector<Vec2>& z, const Constants& k) {
  PowerLift2D r;
  double f2 = k.f_cor * k.f_cor;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double h = 0.5 / z[i](1);
    Vec2 yh(h * z[i](0), -h);
    r.y_hat.push_back(yh);
    r.psi_hat.push_back(w(i) + yh.squaredNorm() - f2 * z[i](0) * z[i](0) * h);
  }
  return r;
}

inline Halfspace2 power_bisector2d(const PowerLift2D& lift, std::size_t i, std::size_t j) {
  Vec2 n = 2.0 * (lift.y_hat[j] - lift.y_hat[i]);
  double d = lift.y_hat[j].squaredNorm() - lift.y_hat[i].squaredNorm() - lift.psi_hat[j] +
             lift.psi_hat[i];
  double s = n.norm();
  return {n / s, d / s};
}

}  // namespace csg
