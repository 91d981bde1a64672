#pragma once

// Cost-Laguerre tessellations of the fluid domain and the cell integrals the
// dual solver and the dynamics consume. Three 3D backends share one result
// type:
//   PolytopeBackend  exact cells in Phi-space (boxes enter as prisms)
//   ColumnBackend    boxes; exact along x3, Gauss in the horizontal
//   GridOracle       brute-force midpoint rule, the referee
// Transport2D covers the 2D cost with a uniform source density.

#include "csg/cost.hpp"
#include "csg/geometry.hpp"

#include <functional>
#include <numeric>
#include <thread>

namespace csg {

enum Needs : unsigned {
  kNeedBasic = 0,
  kNeedHessian = 1,
  kNeedMoments = 2,
  kNeedEnergy = 4,
  kNeedGradZ = 8,
  kNeedAll = 15,
};

// Per-cell integrals of the optimal density sigma = (f*)'(w_i - c(., z_i)).
struct CellIntegrals {
  VecX mass;       // int sigma
  VecX fstar;      // int f*(w_i - c)
  VecX fss;        // int (f*)''(w_i - c)
  VecX transport;  // int c sigma
  VecX internal;   // kappa int sigma^gamma
  std::vector<Vec3> moment;  // int x sigma
  std::vector<Vec3> grad_z;  // int grad_y c sigma
  MatX facet;      // shared-face integrals; zero where cells do not touch

  explicit CellIntegrals(std::size_t n = 0)
      : mass(VecX::Zero(n)),
        fstar(VecX::Zero(n)),
        fss(VecX::Zero(n)),
        transport(VecX::Zero(n)),
        internal(VecX::Zero(n)),
        moment(n, Vec3::Zero()),
        grad_z(n, Vec3::Zero()),
        facet(MatX::Zero(n, n)) {}
};

struct BackendOptions {
  int quadrature_degree = 4;
  int threads = 1;
  int column_panels = 0;
  int column_order = 4;
  double grid_h = 1.0 / 100;
};

namespace detail {

inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t T = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < T; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += T) fn(i);
    });
  for (auto& th : pool) th.join();
}

// Orders bisector clips nearest-first so later ones are mostly redundant.
inline std::vector<std::size_t> neighbours_by_distance(const PowerLift& lift, std::size_t i) {
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < lift.y_hat.size(); ++j)
    if (j != i) order.push_back(j);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return (lift.y_hat[a] - lift.y_hat[i]).squaredNorm() < (lift.y_hat[b] - lift.y_hat[i]).squaredNorm();
  });
  return order;
}

inline bool boxes_overlap(const Vec3& alo, const Vec3& ahi, const Vec3& blo, const Vec3& bhi) {
  for (int d = 0; d < 3; ++d)
    if (ahi(d) < blo(d) - 1e-12 || bhi(d) < alo(d) - 1e-12) return false;
  return true;
}

}  // namespace detail

// A convex piece of the Phi-space domain with labelled half-spaces.
struct DomainPiece {
  std::vector<Halfspace3> hs;
  std::vector<int> labels;
  Polytope poly;
  Vec3 lo, hi;
};

// Per-cell geometry for export: convex pieces in Phi-space.
struct CellGeometry {
  std::vector<Polytope> pieces;
  std::vector<int> neighbors;
  double volume = 0;  // physical
};

struct LaguerreDiagram {
  std::vector<CellGeometry> cells;
  VecX w;
  Ensemble ensemble;
  VecX mass;
  std::string backend;
};

// Upper bound on |x| over the domain. The physical image of a flat face
// bulges, so edges and faces are sampled rather than only vertices.
inline double bounding_radius_of(const std::vector<DomainPiece>& pieces, const Constants& k) {
  double r = 0;
  const int S = 16;
  for (const auto& pc : pieces)
    for (const auto& f : pc.poly.faces)
      for (std::size_t t = 1; t + 1 < f.ring.size(); ++t) {
        const Vec3& a = f.ring[0];
        Vec3 e1 = f.ring[t] - a, e2 = f.ring[t + 1] - a;
        for (int u = 0; u <= S; ++u)
          for (int v = 0; u + v <= S; ++v) r = std::max(r, phi(a + e1 * (double(u) / S) + e2 * (double(v) / S), k).norm());
      }
  return r;
}

inline double bounding_radius_of(const BoxDomain& b) {
  double r = 0;
  for (int m = 0; m < 8; ++m)
    r = std::max(r, Vec3(m & 1 ? b.hi(0) : b.lo(0), m & 2 ? b.hi(1) : b.lo(1), m & 4 ? b.hi(2) : b.lo(2)).norm());
  return r;
}

// Prism decomposition of a physical box's Phi-space image. Each horizontal
// square is split into two triangles; top and bottom paraboloids are replaced
// by their planar interpolants, which preserves the volume exactly.
inline std::vector<DomainPiece> box_prisms(const BoxDomain& b, const Constants& k) {
  int K = std::max(1, b.facets_per_side);
  double f2 = k.f_cor * k.f_cor;
  auto q = [&](double p1, double p2) { return 0.5 * (p1 * p1 + p2 * p2) / f2; };
  double lo3 = k.g * b.lo(2), hi3 = k.g * b.hi(2);
  std::vector<DomainPiece> out;
  // Labels: 0..3 horizontal sides, 4 bottom, 5 top.
  for (int a = 0; a < K; ++a)
    for (int c = 0; c < K; ++c) {
      double x0 = b.lo(0) + (b.hi(0) - b.lo(0)) * a / K, x1 = b.lo(0) + (b.hi(0) - b.lo(0)) * (a + 1) / K;
      double y0 = b.lo(1) + (b.hi(1) - b.lo(1)) * c / K, y1 = b.lo(1) + (b.hi(1) - b.lo(1)) * (c + 1) / K;
      Vec2 P00(f2 * x0, f2 * y0), P10(f2 * x1, f2 * y0), P11(f2 * x1, f2 * y1), P01(f2 * x0, f2 * y1);
      for (int tri = 0; tri < 2; ++tri) {
        std::array<Vec2, 3> v = tri == 0 ? std::array<Vec2, 3>{P00, P10, P11} : std::array<Vec2, 3>{P00, P11, P01};
        DomainPiece pc;
        for (int e = 0; e < 3; ++e) {
          Vec2 s = v[e], t = v[(e + 1) % 3];
          Vec2 n2(t(1) - s(1), -(t(0) - s(0)));
          n2.normalize();
          int label = kInternalLabel;
          if (tri == 0 && e == 0 && c == 0) label = domain_label(2);
          if (tri == 0 && e == 1 && a == K - 1) label = domain_label(1);
          if (tri == 1 && e == 1 && c == K - 1) label = domain_label(3);
          if (tri == 1 && e == 2 && a == 0) label = domain_label(0);
          pc.hs.push_back({Vec3(n2(0), n2(1), 0), n2.dot(s)});
          pc.labels.push_back(label);
        }
        // Plane p3 = alpha + beta.p_h through the paraboloid at the vertices.
        Mat3 A;
        Vec3 rhs;
        for (int e = 0; e < 3; ++e) {
          A.row(e) = Vec3(1, v[e](0), v[e](1)).transpose();
          rhs(e) = q(v[e](0), v[e](1));
        }
        Vec3 coef = A.fullPivLu().solve(rhs);
        Vec3 n(-coef(1), -coef(2), 1.0);
        double s = n.norm();
        // Bottom: p3 >= alpha + lo3 + beta.p_h ; top: p3 <= alpha + hi3 + beta.p_h.
        pc.hs.push_back({-n / s, -(coef(0) + lo3) / s});
        pc.labels.push_back(domain_label(4));
        pc.hs.push_back({n / s, (coef(0) + hi3) / s});
        pc.labels.push_back(domain_label(5));
        pc.poly = Polytope::from_halfspaces(pc.hs, pc.labels);
        pc.poly.bounds(pc.lo, pc.hi);
        out.push_back(std::move(pc));
      }
    }
  return out;
}

inline std::vector<DomainPiece> polytope_piece(const PhiPolytopeDomain& d) {
  DomainPiece pc;
  for (std::size_t k = 0; k < d.halfspaces.size(); ++k) {
    double s = d.halfspaces[k].n.norm();
    if (!(s > 0)) throw config_error("zero half-space normal");
    pc.hs.push_back({d.halfspaces[k].n / s, d.halfspaces[k].d / s});
    pc.labels.push_back(domain_label(static_cast<int>(k)));
  }
  pc.poly = Polytope::from_halfspaces(pc.hs, pc.labels);
  pc.poly.bounds(pc.lo, pc.hi);
  return {pc};
}

class PolytopeBackend {
 public:
  PolytopeBackend(const PhiPolytopeDomain& d, const Constants& k, BackendOptions opt = {})
      : k_(k), opt_(opt), pieces_(polytope_piece(d)) {
    finish();
  }

  PolytopeBackend(const BoxDomain& b, const Constants& k, BackendOptions opt = {})
      : k_(k), opt_(opt), pieces_(box_prisms(b, k)) {
    finish();
    radius_ = std::max(radius_, bounding_radius_of(b));
  }

  std::string name() const { return pieces_.size() == 1 ? "exact" : "exact-prism"; }
  const Constants& constants() const { return k_; }
  const std::vector<DomainPiece>& pieces() const { return pieces_; }
  double bounding_radius() const { return radius_; }
  double volume() const { return volume_; }  // physical
  Vec3 interior_point() const { return interior_; }
  void set_threads(int t) { opt_.threads = t; }

  VecX initial_weights(const Ensemble& e) const {
    VecX w(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) w(i) = cost_c(interior_, e.z[i], k_) + 1.0;
    return w;
  }

  bool contains_phi(const Vec3& p) const {
    return std::any_of(pieces_.begin(), pieces_.end(), [&](const DomainPiece& pc) { return pc.poly.contains(p, 0.0); });
  }

  // Start for the transport dual with no empty cell.
  VecX spread_weights(const Ensemble& e) const {
    std::vector<Vec3> a;
    std::vector<double> b;
    for (const auto& z : e.z) {
      auto f = affine_cost_form(z, k_);
      a.push_back(f.a);
      b.push_back(f.b);
    }
    return csg::spread_weights(a, b, center_phi_, extent_, [&](const Vec3& p) { return contains_phi(p); });
  }

  // Cells of the tessellation, before the positivity cut.
  std::vector<Polytope> cell_pieces(const PowerLift& lift, std::size_t i) const {
    return clip_to_domain(bisector_cell(lift, i));
  }

  CellIntegrals integrate(const VecX& w, const Ensemble& e, unsigned needs = kNeedBasic) const {
    std::size_t n = e.size();
    CellIntegrals out(n);
    PowerLift lift = power_lift(w, e, k_);
    Conjugate fs(k_);
    double det = k_.det_dphi();
    double f2 = k_.f_cor * k_.f_cor;
    detail::parallel_for(n, opt_.threads, [&](std::size_t i) {
      const Vec3& z = e.z[i];
      AffineCostForm form = affine_cost_form(z, k_);
      double an = form.a.norm();
      Polytope C = bisector_cell(lift, i);
      C = C.clipped({form.a / an, (w(i) - form.b) / an}, kPositivityLabel);
      if (C.empty()) return;
      double mass = 0, fst = 0, fss = 0, tc = 0, ie = 0;
      Vec3 mom = Vec3::Zero(), gz = Vec3::Zero();
      for (const Polytope& Q : clip_to_domain(C)) {
        for_each_volume_node(Q.tetrahedra(), opt_.quadrature_degree, [&](const Vec3& p, double wq) {
          double W = wq * det;
          double c = form(p);
          FStar v = fs(w(i) - c);
          mass += W * v.d1;
          fst += W * v.value;
          fss += W * v.d2;
          if (needs & (kNeedMoments | kNeedGradZ)) {
            Vec3 x = phi(p, k_);
            mom += W * v.d1 * x;
            if (needs & kNeedGradZ)
              gz += W * v.d1 * Vec3(f2 * (z(0) - x(0)) / z(2), f2 * (z(1) - x(1)) / z(2), -c / z(2));
          }
          if (needs & kNeedEnergy) {
            tc += W * c * v.d1;
            ie += W * internal_energy(v.d1, k_);
          }
        });
        if (needs & kNeedHessian) {
          for (const Face& fc : Q.faces) {
            if (fc.label < 0) continue;
            std::size_t j = static_cast<std::size_t>(fc.label);
            double s = 0;
            for_each_face_node(fc, opt_.quadrature_degree, [&](const Vec3& p, double wq) {
              s += wq * fs.d1(w(i) - form(p));
            });
            out.facet(i, j) += det / (2.0 * (lift.y_hat[i] - lift.y_hat[j]).norm()) * s;
          }
        }
      }
      out.mass(i) = mass;
      out.fstar(i) = fst;
      out.fss(i) = fss;
      out.transport(i) = tc;
      out.internal(i) = ie;
      out.moment[i] = mom;
      out.grad_z[i] = gz;
    });
    if (needs & kNeedHessian) out.facet = 0.5 * (out.facet + out.facet.transpose()).eval();
    return out;
  }

  // Uniform source density: masses are normalized volumes, the facet terms
  // carry a constant integrand, and `value` is the transport dual.
  struct TransportEval {
    VecX mass;
    MatX facet;
    double value = 0;
  };

  TransportEval integrate_transport(const VecX& w, const Ensemble& e) const {
    std::size_t n = e.size();
    TransportEval out{VecX::Zero(n), MatX::Zero(n, n), 0};
    PowerLift lift = power_lift(w, e, k_);
    double det = k_.det_dphi();
    double sigma = 1.0 / volume_;
    VecX part = VecX::Zero(n);
    detail::parallel_for(n, opt_.threads, [&](std::size_t i) {
      AffineCostForm form = affine_cost_form(e.z[i], k_);
      for (const Polytope& Q : cell_pieces(lift, i)) {
        double vol = Q.volume();
        out.mass(i) += sigma * det * vol;
        part(i) += sigma * det * vol * (form(Q.centroid()) - w(i));
        for (const Face& fc : Q.faces) {
          if (fc.label < 0) continue;
          std::size_t j = static_cast<std::size_t>(fc.label);
          out.facet(i, j) += sigma * det * face_area(fc) / (2.0 * (lift.y_hat[i] - lift.y_hat[j]).norm());
        }
      }
    });
    out.facet = 0.5 * (out.facet + out.facet.transpose()).eval();
    out.value = part.sum();
    return out;
  }

  LaguerreDiagram build_diagram(const VecX& w, const Ensemble& e) const {
    require_well_prepared(e, k_);
    LaguerreDiagram D;
    D.w = w;
    D.ensemble = e;
    D.backend = name();
    D.cells.resize(e.size());
    PowerLift lift = power_lift(w, e, k_);
    double det = k_.det_dphi();
    detail::parallel_for(e.size(), opt_.threads, [&](std::size_t i) {
      auto& cell = D.cells[i];
      cell.pieces = cell_pieces(lift, i);
      std::vector<int> nb;
      for (const auto& P : cell.pieces) {
        cell.volume += det * P.volume();
        for (const auto& f : P.faces)
          if (f.label >= 0 && face_area(f) > 1e-14) nb.push_back(f.label);
      }
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
      cell.neighbors = nb;
    });
    D.mass = integrate(w, e).mass;
    return D;
  }

 private:
  void finish() {
    if (pieces_.size() == 1) {
      bbox_ = pieces_[0].poly;
    } else {
      Vec3 lo = pieces_[0].lo, hi = pieces_[0].hi;
      for (const auto& pc : pieces_) {
        lo = lo.cwiseMin(pc.lo);
        hi = hi.cwiseMax(pc.hi);
      }
      Vec3 pad = Vec3::Constant(1e-6 * (1 + (hi - lo).maxCoeff()));
      bbox_ = Polytope::box(lo - pad, hi + pad);
    }
    volume_ = 0;
    Vec3 mom = Vec3::Zero();
    double pv = 0;
    for (const auto& pc : pieces_) {
      double v = pc.poly.volume();
      pv += v;
      mom += v * pc.poly.centroid();
    }
    volume_ = pv * k_.det_dphi();
    // Phi of the Phi-space centroid lies inside the domain, unlike the
    // physical centroid of a curved region.
    interior_ = phi(Vec3(mom / pv), k_);
    radius_ = bounding_radius_of(pieces_, k_);
    const DomainPiece* big = &pieces_[0];
    for (const auto& pc : pieces_)
      if (pc.poly.volume() > big->poly.volume()) big = &pc;
    center_phi_ = pieces_.size() == 1 ? Vec3(mom / pv) : big->poly.centroid();
    Vec3 blo, bhi;
    bbox_.bounds(blo, bhi);
    extent_ = 0.5 * (bhi - blo).maxCoeff();
  }

  Polytope bisector_cell(const PowerLift& lift, std::size_t i) const {
    Polytope C = bbox_;
    for (std::size_t j : detail::neighbours_by_distance(lift, i)) {
      C = C.clipped(power_bisector(lift, i, j), static_cast<int>(j));
      if (C.empty()) break;
    }
    return C;
  }

  std::vector<Polytope> clip_to_domain(const Polytope& C) const {
    std::vector<Polytope> out;
    if (C.empty()) return out;
    if (pieces_.size() == 1) {
      out.push_back(C);
      return out;
    }
    Vec3 lo, hi;
    C.bounds(lo, hi);
    for (const auto& pc : pieces_) {
      if (!detail::boxes_overlap(lo, hi, pc.lo, pc.hi)) continue;
      Polytope Q = C;
      for (std::size_t h = 0; h < pc.hs.size() && !Q.empty(); ++h) Q = Q.clipped(pc.hs[h], pc.labels[h]);
      if (!Q.empty()) out.push_back(std::move(Q));
    }
    return out;
  }

  Constants k_;
  BackendOptions opt_;
  std::vector<DomainPiece> pieces_;
  Polytope bbox_;
  double volume_ = 0;
  double radius_ = 0;
  Vec3 interior_ = Vec3::Zero();
  Vec3 center_phi_ = Vec3::Zero();
  double extent_ = 1;
};

// Box domains integrated column by column: along x3 every cell occupies one
// interval of the upper envelope of the affine functions w_i - c(., z_i), so
// all vertical integrals have closed forms; the horizontal directions use a
// tensor Gauss rule on panels.
class ColumnBackend {
 public:
  ColumnBackend(const BoxDomain& b, const Constants& k, BackendOptions opt = {}) : b_(b), k_(k), opt_(opt) {}

  std::string name() const { return "column"; }
  const Constants& constants() const { return k_; }
  double bounding_radius() const { return bounding_radius_of(b_); }
  double volume() const { return (b_.hi - b_.lo).prod(); }
  Vec3 interior_point() const { return 0.5 * (b_.lo + b_.hi); }
  void set_threads(int t) { opt_.threads = t; }

  VecX initial_weights(const Ensemble& e) const {
    VecX w(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) w(i) = cost_c(interior_point(), e.z[i], k_) + 1.0;
    return w;
  }

  int panels_for(std::size_t n) const {
    if (opt_.column_panels > 0) return opt_.column_panels;
    return n == 1 ? 1 : 24;
  }

  CellIntegrals integrate(const VecX& w, const Ensemble& e, unsigned needs = kNeedBasic) const {
    std::size_t n = e.size();
    int P = panels_for(n);
    Rule1D r = gauss_legendre01(opt_.column_order);
    std::size_t q = r.x.size();
    // Cells ordered by increasing height own increasing x3 ranges.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return e.z[a](2) < e.z[c](2); });
    std::vector<double> beta(n);
    for (std::size_t i = 0; i < n; ++i) beta[i] = k_.g / e.z[i](2);

    std::size_t columns = std::size_t(P) * P * q * q;
    int T = std::max(1, opt_.threads);
    std::vector<CellIntegrals> part(T, CellIntegrals(n));
    detail::parallel_for(T, T, [&](std::size_t t) {
      Conjugate fs(k_);
      std::vector<double> alpha(n);
      std::vector<std::size_t> hull;
      std::vector<double> from;
      CellIntegrals& acc = part[t];
      for (std::size_t col = t; col < columns; col += T) {
        std::size_t pq = col % (q * q), pan = col / (q * q);
        int pa = int(pan % P), pb = int(pan / P);
        double hx = (b_.hi(0) - b_.lo(0)) / P, hy = (b_.hi(1) - b_.lo(1)) / P;
        double x1 = b_.lo(0) + hx * (pa + r.x[pq % q]);
        double x2 = b_.lo(1) + hy * (pb + r.x[pq / q]);
        double A = hx * hy * r.w[pq % q] * r.w[pq / q];
        column(x1, x2, A, w, e, beta, order, needs, fs, alpha, hull, from, acc);
      }
    });
    CellIntegrals out(n);
    for (const auto& p : part) {
      out.mass += p.mass;
      out.fstar += p.fstar;
      out.fss += p.fss;
      out.transport += p.transport;
      out.internal += p.internal;
      out.facet += p.facet;
      for (std::size_t i = 0; i < n; ++i) {
        out.moment[i] += p.moment[i];
        out.grad_z[i] += p.grad_z[i];
      }
    }
    if (needs & kNeedHessian) out.facet = 0.5 * (out.facet + out.facet.transpose()).eval();
    return out;
  }

 private:
  void column(double x1, double x2, double A, const VecX& w, const Ensemble& e, const std::vector<double>& beta,
              const std::vector<std::size_t>& order, unsigned needs, const Conjugate& fs, std::vector<double>& alpha,
              std::vector<std::size_t>& hull, std::vector<double>& from, CellIntegrals& acc) const {
    std::size_t n = e.size();
    double f2 = k_.f_cor * k_.f_cor;
    for (std::size_t i = 0; i < n; ++i) {
      double dx = x1 - e.z[i](0), dy = x2 - e.z[i](1);
      alpha[i] = w(i) - 0.5 * f2 * (dx * dx + dy * dy) / e.z[i](2);
    }
    // Upper envelope of t_i(s) = alpha_i - beta_i s; slopes increase along
    // `order`, so a monotone stack suffices.
    auto cross = [&](std::size_t a, std::size_t c) { return (alpha[a] - alpha[c]) / (beta[a] - beta[c]); };
    hull.clear();
    from.clear();
    for (std::size_t idx : order) {
      while (!hull.empty()) {
        double s = cross(hull.back(), idx);
        if (s <= from.back()) {
          hull.pop_back();
          from.pop_back();
        } else {
          break;
        }
      }
      from.push_back(hull.empty() ? -std::numeric_limits<double>::infinity() : cross(hull.back(), idx));
      hull.push_back(idx);
    }
    double L = b_.lo(2), U = b_.hi(2);
    double gp = fs.gamma_prime();
    for (std::size_t h = 0; h < hull.size(); ++h) {
      double s = std::max(L, from[h]);
      double en = std::min(U, h + 1 < hull.size() ? from[h + 1] : std::numeric_limits<double>::infinity());
      if (!(en > s)) continue;
      std::size_t i = hull[h];
      double bi = beta[i];
      double ts = alpha[i] - bi * s, te = alpha[i] - bi * en;
      if (!(ts > 0)) continue;
      double P0 = fs.value(ts) - fs.value(te);
      double F2 = fs.antiderivative(ts) - fs.antiderivative(te);
      double mass = A * P0 / bi;
      acc.mass(i) += mass;
      acc.fstar(i) += A * F2 / bi;
      acc.fss(i) += A * (fs.d1(ts) - fs.d1(te)) / bi;
      double tsig = A * gp * F2 / bi;  // int t (f*)'(t)
      double cost = w(i) * mass - tsig;
      if (needs & (kNeedMoments | kNeedGradZ)) {
        double m3 = A * (alpha[i] * P0 - gp * F2) / (bi * bi);
        acc.moment[i] += Vec3(x1 * mass, x2 * mass, m3);
        if (needs & kNeedGradZ) {
          const Vec3& z = e.z[i];
          acc.grad_z[i] += Vec3(f2 * (z(0) - x1) / z(2) * mass, f2 * (z(1) - x2) / z(2) * mass, -cost / z(2));
        }
      }
      if (needs & kNeedEnergy) {
        acc.transport(i) += cost;
        acc.internal(i) += A * (gp - 1.0) * F2 / bi;
      }
      if ((needs & kNeedHessian) && h + 1 < hull.size() && from[h + 1] < U && from[h + 1] > L) {
        std::size_t j = hull[h + 1];
        double fp = fs.d1(te);
        if (fp > 0) {
          double v = A * fp / std::abs(bi - beta[j]);
          acc.facet(i, j) += v;
          acc.facet(j, i) += v;
        }
      }
    }
  }

  BoxDomain b_;
  Constants k_;
  BackendOptions opt_;
};

// Cell-centred midpoint rule over the physical bounding box, assigning every
// node by direct argmin of c - w. Provides no facet terms.
class GridOracle {
 public:
  GridOracle(const BoxDomain& b, const Constants& k, double h) : k_(k), lo_(b.lo), hi_(b.hi), h_(h) {}

  GridOracle(const PhiPolytopeDomain& d, const Constants& k, double h) : k_(k), h_(h) {
    auto pcs = polytope_piece(d);
    hs_ = pcs[0].hs;
    const Polytope& P = pcs[0].poly;
    Vec3 plo, phi_hi;
    P.bounds(plo, phi_hi);
    double f2 = k.f_cor * k.f_cor;
    lo_ = Vec3(plo(0) / f2, plo(1) / f2, 0);
    hi_ = Vec3(phi_hi(0) / f2, phi_hi(1) / f2, 0);
    // x3 = (p3 - q(p_h)) / g is concave in p, so its minimum sits at a vertex;
    // the maximum is bounded using the smallest q over the horizontal box.
    double x3min = std::numeric_limits<double>::infinity();
    for (const auto& f : P.faces)
      for (const auto& v : f.ring) x3min = std::min(x3min, phi(v, k)(2));
    double qx = (plo(0) > 0) ? plo(0) : (phi_hi(0) < 0 ? -phi_hi(0) : 0.0);
    double qy = (plo(1) > 0) ? plo(1) : (phi_hi(1) < 0 ? -phi_hi(1) : 0.0);
    double qmin = 0.5 * (qx * qx + qy * qy) / f2;
    lo_(2) = x3min;
    hi_(2) = (phi_hi(2) - qmin) / k.g;
  }

  std::string name() const { return "grid"; }
  const Constants& constants() const { return k_; }

  bool inside(const Vec3& x) const {
    if (hs_.empty()) return true;
    Vec3 p = phi_inverse(x, k_);
    for (const auto& h : hs_)
      if (h.n.dot(p) > h.d) return false;
    return true;
  }

  std::array<int, 3> counts() const {
    std::array<int, 3> c;
    for (int d = 0; d < 3; ++d) c[d] = std::max(1, int(std::lround((hi_(d) - lo_(d)) / h_)));
    return c;
  }

  template <class Fn>
  void for_each_node(Fn&& fn) const {
    auto c = counts();
    Vec3 dx((hi_(0) - lo_(0)) / c[0], (hi_(1) - lo_(1)) / c[1], (hi_(2) - lo_(2)) / c[2]);
    double dv = dx.prod();
    for (int a = 0; a < c[0]; ++a)
      for (int b = 0; b < c[1]; ++b)
        for (int d = 0; d < c[2]; ++d) {
          Vec3 x = lo_ + Vec3((a + 0.5) * dx(0), (b + 0.5) * dx(1), (d + 0.5) * dx(2));
          if (inside(x)) fn(x, dv);
        }
  }

  double volume() const {
    double v = 0;
    for_each_node([&](const Vec3&, double dv) { v += dv; });
    return v;
  }

  CellIntegrals integrate(const VecX& w, const Ensemble& e, unsigned needs = kNeedAll) const {
    std::size_t n = e.size();
    CellIntegrals out(n);
    Conjugate fs(k_);
    double f2 = k_.f_cor * k_.f_cor;
    std::vector<double> inv(n);
    for (std::size_t i = 0; i < n; ++i) inv[i] = 1.0 / e.z[i](2);
    for_each_node([&](const Vec3& x, double dv) {
      std::size_t best = 0;
      double bv = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        double dx = x(0) - e.z[i](0), dy = x(1) - e.z[i](1);
        double v = (0.5 * f2 * (dx * dx + dy * dy) + k_.g * x(2)) * inv[i] - w(i);
        if (v < bv) {
          bv = v;
          best = i;
        }
      }
      FStar s = fs(-bv);
      if (s.d1 <= 0 && s.d2 <= 0) return;
      out.mass(best) += dv * s.d1;
      out.fstar(best) += dv * s.value;
      out.fss(best) += dv * s.d2;
      if (needs & kNeedMoments) out.moment[best] += dv * s.d1 * x;
      double c = bv + w(best);
      if (needs & kNeedEnergy) {
        out.transport(best) += dv * c * s.d1;
        out.internal(best) += dv * internal_energy(s.d1, k_);
      }
      if (needs & kNeedGradZ) {
        const Vec3& z = e.z[best];
        out.grad_z[best] += dv * s.d1 * Vec3(f2 * (z(0) - x(0)) * inv[best], f2 * (z(1) - x(1)) * inv[best], -c * inv[best]);
      }
    });
    return out;
  }

 private:
  Constants k_;
  std::vector<Halfspace3> hs_;
  Vec3 lo_, hi_;
  double h_;
};

// Geostrophic velocity and potential temperature recovered from the
// transport map at x.
struct PhysicalVariables {
  Vec2 vg;
  double theta;
};

inline PhysicalVariables recover_physical_variables(const Vec3& x, const VecX& w, const Ensemble& e,
                                                    const Constants& k) {
  const Vec3& z = e.z[assign_point(x, w, e, k)];
  double f2 = k.f_cor * k.f_cor;
  return {Vec2(-f2 * (z(1) - x(1)), f2 * (z(0) - x(0))), z(2)};
}

// ---- 2D: uniform density on a physical rectangle or a Phi-space polygon ---

class Transport2D {
 public:
  Transport2D(const Box2DDomain& d, const Constants& k) : k_(k) {
    int K = std::max(1, d.segments);
    auto P = [&](double x1, double x2) { return phi2d_inverse(Vec2(x1, x2), k); };
    for (int s = 0; s < K; ++s) {
      double a = d.lo(0) + (d.hi(0) - d.lo(0)) * s / K;
      double b = d.lo(0) + (d.hi(0) - d.lo(0)) * (s + 1) / K;
      Polygon strip;
      strip.v = {P(a, d.lo(1)), P(b, d.lo(1)), P(b, d.hi(1)), P(a, d.hi(1))};
      strip.label = {domain_label(1), s == K - 1 ? domain_label(2) : kInternalLabel, domain_label(3),
                     s == 0 ? domain_label(0) : kInternalLabel};
      pieces_.push_back(strip);
    }
    finish();
  }

  Transport2D(const PhiPolygon2DDomain& d, const Constants& k) : k_(k) {
    // Start from a generous rectangle and clip.
    Vec2 lo(-1e3, -1e3), hi(1e3, 1e3);
    Polygon P = Polygon::rect(lo, hi);
    for (std::size_t h = 0; h < d.halfplanes.size(); ++h) {
      double s = d.halfplanes[h].n.norm();
      P = P.clipped({d.halfplanes[h].n / s, d.halfplanes[h].d / s}, domain_label(int(h)));
    }
    for (int lab : P.label)
      if (lab == kBoundsLabel) throw config_error("Phi-space polygon is unbounded");
    if (P.empty()) throw config_error("Phi-space polygon is empty");
    pieces_.push_back(P);
    finish();
  }

  const std::vector<Polygon>& pieces() const { return pieces_; }
  double area() const { return area_; }  // physical

  struct Eval {
    VecX mass;
    VecX area;  // physical
    MatX facet;
    double value = 0;
  };

  // Cell i as a list of convex pieces (Phi-space).
  std::vector<Polygon> cell(const PowerLift2D& lift, std::size_t i) const {
    Polygon C = bbox_;
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < lift.y_hat.size(); ++j)
      if (j != i) order.push_back(j);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return (lift.y_hat[a] - lift.y_hat[i]).squaredNorm() < (lift.y_hat[b] - lift.y_hat[i]).squaredNorm();
    });
    for (std::size_t j : order) {
      C = C.clipped(power_bisector2d(lift, i, j), int(j));
      if (C.empty()) return {};
    }
    std::vector<Polygon> out;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& v : C.v) {
      lo = std::min(lo, v(0));
      hi = std::max(hi, v(0));
    }
    for (std::size_t s = 0; s < pieces_.size(); ++s) {
      if (piece_hi_[s] < lo - 1e-12 || piece_lo_[s] > hi + 1e-12) continue;
      Polygon Q = C;
      const Polygon& S = pieces_[s];
      for (std::size_t e = 0; e < S.v.size() && !Q.empty(); ++e) {
        Vec2 a = S.v[e], b = S.v[(e + 1) % S.v.size()];
        Vec2 n(b(1) - a(1), -(b(0) - a(0)));
        double nn = n.norm();
        Q = Q.clipped({n / nn, n.dot(a) / nn}, S.label[e]);
      }
      if (!Q.empty()) out.push_back(std::move(Q));
    }
    return out;
  }

  bool contains(const Vec2& p) const {
    return std::any_of(pieces_.begin(), pieces_.end(), [&](const Polygon& q) { return q.contains(p, 0.0); });
  }

  // Start for the transport dual with no empty cell.
  VecX spread_weights(const std::vector<Vec2>& z) const {
    std::vector<Vec2> a;
    std::vector<double> b;
    for (const auto& zi : z) {
      auto f = affine_cost_form2d(zi, k_);
      a.push_back(f.a);
      b.push_back(f.b);
    }
    return csg::spread_weights(a, b, center_, extent_, [&](const Vec2& p) { return contains(p); });
  }

  Eval integrate(const VecX& w, const std::vector<Vec2>& z) const {
    std::size_t n = z.size();
    Eval out{VecX::Zero(n), VecX::Zero(n), MatX::Zero(n, n), 0};
    PowerLift2D lift = power_lift2d(w, z, k_);
    double det = det_dphi2d(k_);
    double sigma = 1.0 / area_;
    for (std::size_t i = 0; i < n; ++i) {
      AffineCostForm2D form = affine_cost_form2d(z[i], k_);
      for (const Polygon& Q : cell(lift, i)) {
        double a = Q.area();
        out.area(i) += det * a;
        out.value += sigma * det * a * (form(Q.centroid()) - w(i));
        for (std::size_t e = 0; e < Q.v.size(); ++e) {
          if (Q.label[e] < 0) continue;
          std::size_t j = std::size_t(Q.label[e]);
          out.facet(i, j) += sigma * det * Q.edge_length(e) / (2.0 * (lift.y_hat[i] - lift.y_hat[j]).norm());
        }
      }
    }
    out.mass = sigma * out.area;
    out.facet = 0.5 * (out.facet + out.facet.transpose()).eval();
    return out;
  }

 private:
  void finish() {
    double a = 0;
    Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const auto& p : pieces_) {
      a += p.area();
      double l = std::numeric_limits<double>::infinity(), h = -l;
      for (const auto& v : p.v) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
        l = std::min(l, v(0));
        h = std::max(h, v(0));
      }
      piece_lo_.push_back(l);
      piece_hi_.push_back(h);
    }
    area_ = a * det_dphi2d(k_);
    // Centre of the largest piece: inside the domain even when it is not convex.
    const Polygon* big = &pieces_[0];
    for (const auto& p : pieces_)
      if (p.area() > big->area()) big = &p;
    center_ = big->centroid();
    extent_ = 0.5 * (hi - lo).maxCoeff();
    Vec2 pad = Vec2::Constant(1e-6 * (1 + (hi - lo).maxCoeff()));
    bbox_ = Polygon::rect(lo - pad, hi + pad);
  }

  Constants k_;
  std::vector<Polygon> pieces_;
  std::vector<double> piece_lo_, piece_hi_;
  Polygon bbox_;
  double area_ = 0;
  Vec2 center_ = Vec2::Zero();
  double extent_ = 1;
};

}  // namespace csg
