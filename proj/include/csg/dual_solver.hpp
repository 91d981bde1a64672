#pragma once

// The concave dual functional G(w, z), its derivatives, the damped Newton
// maximizer for the optimal weights, energy bookkeeping, and the fixed-density
// transport dual.

#include "csg/tessellation.hpp"

#include <Eigen/Cholesky>

namespace csg {

struct DualReport {
  VecX w;
  double G = 0;
  VecX residual;  // m_i - cell mass_i
  int iterations = 0;
  bool converged = false;
  double gap = 0;
  std::string backend;
  std::string message;

  double max_residual() const { return residual.size() ? residual.cwiseAbs().maxCoeff() : 0.0; }
};

struct SolverOptions {
  double tol = 1e-10;
  int max_iter = 100;
  double armijo = 1e-4;
  // Masses below this fraction of min m_i are rejected inside the damping.
  double floor_fraction = 0.5;
  bool pin_first = false;
};

inline double eval_G(const CellIntegrals& ci, const VecX& w, const std::vector<double>& m) {
  double s = 0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m[i] * w(i);
  return s - ci.fstar.sum();
}

template <class Backend>
double eval_G(const Backend& b, const VecX& w, const Ensemble& e) {
  return eval_G(b.integrate(w, e), w, e.m);
}

inline VecX grad_w_G(const CellIntegrals& ci, const std::vector<double>& m) {
  return Eigen::Map<const VecX>(m.data(), m.size()) - ci.mass;
}

// Off-diagonal: positive facet terms. Diagonal: minus the (f*)'' integral
// minus the row sum of the facet terms.
inline MatX hessian_ww_G(const CellIntegrals& ci) {
  MatX H = ci.facet;
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    H(i, i) = 0;
    H(i, i) = -ci.fss(i) - H.row(i).sum();
  }
  return H;
}

inline std::vector<Vec3> grad_z_G(const CellIntegrals& ci) { return ci.grad_z; }

struct EnergyComponents {
  double transport = 0;
  double internal = 0;
  double total = 0;
  double G = 0;
  double gap = 0;
};

inline EnergyComponents energy_components(const CellIntegrals& ci, const VecX& w, const std::vector<double>& m) {
  EnergyComponents r;
  r.transport = ci.transport.sum();
  r.internal = ci.internal.sum();
  r.total = r.transport + r.internal;
  r.G = eval_G(ci, w, m);
  r.gap = std::abs(r.total - r.G);
  return r;
}

inline double sigma_star_at(const Vec3& x, const VecX& w, const Ensemble& e, const Constants& k) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < e.size(); ++i) best = std::max(best, w(i) - cost_c(x, e.z[i], k));
  return Conjugate(k).d1(best);
}

// One evaluation of a concave objective: value, gradient and Hessian.
struct ConcaveEval {
  double value = 0;
  VecX grad;
  VecX mass;
  MatX hess;
};

// Maximizes a concave function whose gradient is m - mass(w). Phase one
// (some mass below the floor) takes Levenberg-Marquardt regularized steps,
// which degrade to gradient ascent for large damping; phase two is damped
// Newton with Armijo backtracking that keeps every mass above the floor.
template <class EvalFn>
DualReport maximize_concave(EvalFn&& eval, VecX w, double floor, const SolverOptions& opt) {
  DualReport rep;
  std::size_t n = w.size();
  std::size_t off = opt.pin_first ? 1 : 0;
  if (opt.pin_first) w(0) = 0;
  ConcaveEval cur = eval(w);
  double mu = 0;
  auto direction = [&](const ConcaveEval& ev, double damping) {
    std::size_t r = n - off;
    MatX A = -ev.hess.bottomRightCorner(r, r);
    if (damping > 0) A.diagonal().array() += damping;
    VecX g = ev.grad.tail(r);
    VecX d = VecX::Zero(n);
    Eigen::LLT<MatX> llt(A);
    if (llt.info() == Eigen::Success) {
      d.tail(r) = llt.solve(g);
    } else {
      Eigen::LDLT<MatX> ldlt(A);
      d.tail(r) = ldlt.solve(g);
    }
    return d;
  };
  for (int it = 0;; ++it) {
    rep.iterations = it;
    double gnorm = cur.grad.tail(n - off).cwiseAbs().maxCoeff();
    if (gnorm <= opt.tol) {
      rep.converged = true;
      break;
    }
    if (it >= opt.max_iter) {
      rep.message = "iteration cap reached";
      break;
    }
    bool phase_one = cur.mass.tail(n - off).minCoeff() < floor || (off && cur.mass(0) < floor);
    bool accepted = false;
    if (phase_one) {
      if (mu == 0) mu = std::max(1e-8, 1e-3 * cur.hess.diagonal().cwiseAbs().maxCoeff());
      for (int tries = 0; tries < 60 && !accepted; ++tries) {
        VecX d = direction(cur, mu);
        ConcaveEval nxt = eval(VecX(w + d));
        double slope = cur.grad.dot(d);
        if (nxt.value >= cur.value + opt.armijo * slope) {
          w += d;
          cur = std::move(nxt);
          mu = std::max(1e-12, mu / 3);
          accepted = true;
        } else {
          mu *= 4;
        }
      }
    } else {
      VecX d = direction(cur, 0);
      double slope = cur.grad.dot(d);
      double gn = cur.grad.tail(n - off).norm();
      for (double a = 1.0; a > 1e-12 && !accepted; a *= 0.5) {
        ConcaveEval nxt = eval(VecX(w + a * d));
        if (nxt.mass.minCoeff() < floor) continue;
        bool armijo = nxt.value >= cur.value + opt.armijo * a * slope;
        // Near the optimum G changes below rounding; fall back on the
        // gradient norm so the last quadratic steps are not rejected.
        bool flat = std::abs(nxt.value - cur.value) <= 1e-13 * (1 + std::abs(cur.value)) &&
                    nxt.grad.tail(n - off).norm() < gn;
        if (armijo || flat) {
          w += a * d;
          cur = std::move(nxt);
          accepted = true;
        }
      }
    }
    if (!accepted) {
      rep.message = "line search failed";
      rep.iterations = it + 1;
      break;
    }
  }
  rep.w = w;
  rep.G = cur.value;
  rep.residual = cur.grad;
  return rep;
}

template <class Backend>
ConcaveEval evaluate_dual(const Backend& b, const VecX& w, const Ensemble& e) {
  CellIntegrals ci = b.integrate(w, e, kNeedHessian);
  ConcaveEval ev;
  ev.value = eval_G(ci, w, e.m);
  ev.grad = grad_w_G(ci, e.m);
  ev.mass = ci.mass;
  ev.hess = hessian_ww_G(ci);
  return ev;
}

// Optimal weights for the full dual. Initial weights default to
// c(x_bar, z_i) + 1 with x_bar inside the domain.
template <class Backend>
DualReport solve_w_star(const Backend& b, const Ensemble& e, const VecX* init, SolverOptions opt) {
  require_well_prepared(e, b.constants());
  VecX w0 = init && init->size() == Eigen::Index(e.size()) ? *init : b.initial_weights(e);
  double floor = opt.floor_fraction * *std::min_element(e.m.begin(), e.m.end());
  opt.pin_first = false;
  DualReport r = maximize_concave([&](const VecX& w) { return evaluate_dual(b, w, e); }, w0, floor, opt);
  r.backend = b.name();
  return r;
}

// Equal-mass style transport weights for a uniform source density. The
// transport dual is shift invariant, so w_1 is pinned to zero.
template <class Geometry>
DualReport solve_transport_weights(const Geometry& geo, const Ensemble& e, SolverOptions opt) {
  std::size_t n = e.size();
  if (n == 1) {
    DualReport r;
    r.w = VecX::Zero(1);
    r.residual = VecX::Zero(1);
    r.converged = true;
    return r;
  }
  opt.pin_first = true;
  Eigen::Map<const VecX> m(e.m.data(), n);
  // Start with every cell non-empty and keep masses above half the smaller
  // of the initial and target minima (damped Newton of Kitagawa, Merigot
  // and Thibert), so the regularized phase is not needed.
  VecX w0 = geo.spread_weights(e);
  w0.array() -= w0(0);
  double floor = std::min(m.minCoeff(), geo.integrate_transport(w0, e).mass.minCoeff());
  floor = opt.floor_fraction * (floor > 0 ? floor : m.minCoeff());
  auto eval = [&](const VecX& w) {
    auto t = geo.integrate_transport(w, e);
    ConcaveEval ev;
    ev.value = m.dot(w) + t.value;
    ev.grad = m - t.mass;
    ev.mass = t.mass;
    ev.hess = t.facet;
    for (std::size_t i = 0; i < n; ++i) {
      ev.hess(i, i) = 0;
      ev.hess(i, i) = -ev.hess.row(i).sum();
    }
    return ev;
  };
  return maximize_concave(eval, w0, floor, opt);
}

// Adapter so the 2D geometry fits solve_transport_weights.
class Transport2DAdapter {
 public:
  Transport2DAdapter(const Transport2D& t, const Constants& k) : t_(t), k_(k) {}

  PolytopeBackend::TransportEval integrate_transport(const VecX& w, const Ensemble& e) const {
    std::vector<Vec2> z;
    for (const auto& zi : e.z) z.emplace_back(zi(0), zi(1));
    auto r = t_.integrate(w, z);
    return {r.mass, r.facet, r.value};
  }

  VecX spread_weights(const Ensemble& e) const {
    std::vector<Vec2> z;
    for (const auto& zi : e.z) z.emplace_back(zi(0), zi(1));
    return t_.spread_weights(z);
  }

 private:
  const Transport2D& t_;
  Constants k_;
};

// Convenience: full report with the duality gap filled in.
template <class Backend>
DualReport solve_with_gap(const Backend& b, const Ensemble& e, const VecX* init, const SolverOptions& opt) {
  DualReport r = solve_w_star(b, e, init, opt);
  CellIntegrals ci = b.integrate(r.w, e, kNeedEnergy);
  r.gap = energy_components(ci, r.w, e.m).gap;
  return r;
}

}  // namespace csg
