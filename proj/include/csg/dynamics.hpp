#pragma once

// Seed dynamics: the centroid map, the velocity z' = J(z - C(z)), RK4 time
// stepping with warm-started dual solves, and conservation diagnostics.

#include "csg/dual_solver.hpp"

#include <sstream>

namespace csg {

struct CentroidResult {
  std::vector<Vec3> C;
  DualReport report;
  CellIntegrals cells;
};

template <class Backend>
CentroidResult centroid_map(const Backend& b, const Ensemble& e, const VecX* warm, const SolverOptions& opt) {
  CentroidResult r;
  r.report = solve_w_star(b, e, warm, opt);
  if (!r.report.converged) return r;
  r.cells = b.integrate(r.report.w, e, kNeedMoments | kNeedGradZ | kNeedEnergy);
  r.C.resize(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) r.C[i] = r.cells.moment[i] / e.m[i];
  return r;
}

inline std::vector<Vec3> velocity_from(const Ensemble& e, const std::vector<Vec3>& C, const Constants& k,
                                       bool reverse = false) {
  Mat3 J = k.J();
  if (reverse) J = -J;
  std::vector<Vec3> v(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) v[i] = J * (e.z[i] - C[i]);
  return v;
}

template <class Backend>
std::vector<Vec3> velocity(const Backend& b, const Ensemble& e, const VecX* warm, const SolverOptions& opt) {
  auto r = centroid_map(b, e, warm, opt);
  if (!r.report.converged) throw std::runtime_error("dual solve failed: " + r.report.message);
  return velocity_from(e, r.C, b.constants());
}

struct TrajectoryRecord {
  std::vector<double> t;
  std::vector<std::vector<Vec3>> z;
  std::vector<std::vector<Vec3>> C;
  std::vector<std::vector<Vec3>> zdot;
  std::vector<VecX> w;
  std::vector<double> E;
  std::vector<int> iters;       // Newton iterations spent on the step ending here
  std::vector<double> orthogonality;  // sum_i dG/dz_i . z_i'
  std::vector<double> residual;       // max_i |m_i - mass_i| of the recorded solve
  std::vector<double> gap;            // |E - G| / |G| of the recorded solve
  bool complete = false;
  std::string diagnostic;
  double radius = 0;
  double f_cor = 1;

  std::size_t size() const { return t.size(); }
};

inline double min_pair_distance(const std::vector<Vec3>& z) {
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t j = i + 1; j < z.size(); ++j) d = std::min(d, (z[i] - z[j]).norm());
  return d;
}

inline constexpr double kCollisionTol = 1e-8;

namespace detail {

struct StageEval {
  std::vector<Vec3> v;
  CentroidResult c;
};

}  // namespace detail

// Classical RK4 on the seed positions. Each stage warm-starts from the
// previous stage's weights; the end-of-step evaluation doubles as the first
// stage of the next step. A failed step is retried once as two half steps.
template <class Backend>
TrajectoryRecord simulate(const Backend& b, const Ensemble& e0, const SimConfig& cfg, bool reverse = false) {
  cfg.validate();
  const Constants& k = b.constants();
  require_well_prepared(e0, k);
  SolverOptions opt;
  opt.tol = cfg.tolerance_for(k);
  opt.max_iter = cfg.newton_max_iter;

  TrajectoryRecord rec;
  rec.radius = b.bounding_radius();
  rec.f_cor = k.f_cor;
  VecX warm;
  int spent = 0;
  auto eval = [&](const Ensemble& e, detail::StageEval& out) {
    out.c = centroid_map(b, e, warm.size() ? &warm : nullptr, opt);
    spent += out.c.report.iterations;
    if (!out.c.report.converged) return false;
    warm = out.c.report.w;
    out.v = velocity_from(e, out.c.C, k, reverse);
    return true;
  };
  auto push = [&](double t, const Ensemble& e, const detail::StageEval& s) {
    rec.t.push_back(t);
    rec.z.push_back(e.z);
    rec.C.push_back(s.c.C);
    rec.zdot.push_back(s.v);
    rec.w.push_back(s.c.report.w);
    rec.E.push_back(s.c.report.G);
    rec.iters.push_back(spent);
    double o = 0;
    for (std::size_t i = 0; i < e.size(); ++i) o += s.c.cells.grad_z[i].dot(s.v[i]);
    rec.orthogonality.push_back(o);
    rec.residual.push_back(s.c.report.max_residual());
    EnergyComponents ec = energy_components(s.c.cells, s.c.report.w, e.m);
    rec.gap.push_back(ec.gap / std::abs(ec.G));
    spent = 0;
  };
  auto shifted = [](const Ensemble& e, const std::vector<Vec3>& v, double h) {
    Ensemble out = e;
    for (std::size_t i = 0; i < e.size(); ++i) out.z[i] += h * v[i];
    return out;
  };
  // One RK4 step from (e, s0); on success fills e_next and s_next.
  auto step = [&](const Ensemble& e, const detail::StageEval& s0, double h, Ensemble& e_next,
                  detail::StageEval& s_next) {
    detail::StageEval s2, s3, s4;
    if (!eval(shifted(e, s0.v, 0.5 * h), s2)) return false;
    if (!eval(shifted(e, s2.v, 0.5 * h), s3)) return false;
    if (!eval(shifted(e, s3.v, h), s4)) return false;
    e_next = e;
    for (std::size_t i = 0; i < e.size(); ++i)
      e_next.z[i] += h / 6.0 * (s0.v[i] + 2.0 * s2.v[i] + 2.0 * s3.v[i] + s4.v[i]);
    if (min_pair_distance(e_next.z) < kCollisionTol) return false;
    return eval(e_next, s_next);
  };

  Ensemble e = e0;
  detail::StageEval cur;
  if (!eval(e, cur)) {
    rec.diagnostic = "initial dual solve failed: " + cur.c.report.message;
    return rec;
  }
  push(0.0, e, cur);
  double t = 0;
  long n = 0;
  const double eps = 1e-12 * cfg.tau;
  while (t < cfg.tau - eps) {
    double h = std::min(cfg.dt, cfg.tau - t);
    Ensemble nxt;
    detail::StageEval s;
    VecX saved = warm;
    bool ok = step(e, cur, h, nxt, s);
    if (!ok) {
      warm = saved;
      Ensemble mid;
      detail::StageEval sm;
      ok = step(e, cur, 0.5 * h, mid, sm) && step(mid, sm, 0.5 * h, nxt, s);
    }
    if (!ok) {
      std::ostringstream msg;
      double d = min_pair_distance(nxt.z.empty() ? e.z : nxt.z);
      if (!nxt.z.empty() && d < kCollisionTol)
        msg << "seed collision near t=" << t << " (min distance " << d << ")";
      else
        msg << "dual solve failed near t=" << t;
      rec.diagnostic = msg.str();
      return rec;
    }
    e = std::move(nxt);
    cur = std::move(s);
    t = (h == cfg.tau - t) ? cfg.tau : t + h;
    ++n;
    if (n % cfg.record_stride == 0 || t >= cfg.tau - eps) push(t, e, cur);
  }
  rec.complete = true;
  return rec;
}

struct ConservationReport {
  double energy_drift = 0;
  double position_bound_violation = 0;  // max of |z(t)| - |z(0)| - f R t
  double speed_bound_violation = 0;     // max of |z'(t)| - f(|z(0)| + R(f t + 1))
  double z3_drift = 0;
  double orthogonality = 0;

  bool a_priori_ok(double slack = 1e-9) const {
    return position_bound_violation <= slack && speed_bound_violation <= slack;
  }
};

inline ConservationReport conservation_report(const TrajectoryRecord& r) {
  if (r.t.empty()) throw std::invalid_argument("empty trajectory record");
  ConservationReport out;
  out.position_bound_violation = -std::numeric_limits<double>::infinity();
  out.speed_bound_violation = -std::numeric_limits<double>::infinity();
  double E0 = r.E.front();
  double f = r.f_cor, R = r.radius;
  for (std::size_t s = 0; s < r.size(); ++s) {
    out.energy_drift = std::max(out.energy_drift, std::abs(r.E[s] - E0) / std::abs(E0));
    out.orthogonality = std::max(out.orthogonality, std::abs(r.orthogonality[s]));
    double t = r.t[s];
    for (std::size_t i = 0; i < r.z[s].size(); ++i) {
      double z0 = r.z[0][i].norm();
      out.position_bound_violation = std::max(out.position_bound_violation, r.z[s][i].norm() - z0 - f * R * t);
      out.speed_bound_violation =
          std::max(out.speed_bound_violation, r.zdot[s][i].norm() - f * (z0 + R * (f * t + 1)));
      out.z3_drift = std::max(out.z3_drift, std::abs(r.z[s][i](2) - r.z[0][i](2)));
    }
  }
  return out;
}

}  // namespace csg
