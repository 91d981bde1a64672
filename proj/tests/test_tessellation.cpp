#include <catch_amalgamated.hpp>

#include "csg/tessellation.hpp"
#include "support.hpp"

using namespace csg;
using csg::testing::phi_box;
using csg::testing::random_ensemble;

namespace {

// Tensor midpoint rule in Phi-space with direct argmin; independent of the
// clipping code. Returns masses and first moments.
struct Reference {
  VecX mass;
  std::vector<Vec3> moment;
};

Reference p_midpoint(const Vec3& lo, const Vec3& hi, int M, const VecX& w, const Ensemble& e, const Constants& k) {
  Reference r{VecX::Zero(e.size()), std::vector<Vec3>(e.size(), Vec3::Zero())};
  Conjugate fs(k);
  Vec3 h = (hi - lo) / M;
  double dv = h.prod() * k.det_dphi();
  for (int a = 0; a < M; ++a)
    for (int b = 0; b < M; ++b)
      for (int c = 0; c < M; ++c) {
        Vec3 p = lo + Vec3((a + 0.5) * h(0), (b + 0.5) * h(1), (c + 0.5) * h(2));
        Vec3 x = phi(p, k);
        std::size_t i = assign_point(x, w, e, k);
        double s = fs.d1(w(i) - cost_c(x, e.z[i], k));
        r.mass(i) += dv * s;
        r.moment[i] += dv * s * x;
      }
  return r;
}

// Weights that keep every cell non-empty but leave some density gaps.
VecX spread_weights(const Ensemble& e, const Vec3& x, const Constants& k, double lift) {
  VecX w(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) w(i) = cost_c(x, e.z[i], k) + lift;
  return w;
}

}  // namespace

TEST_CASE("single cell on a Phi-box has the closed-form mass") {
  Constants k;
  PolytopeBackend B(phi_box(Vec3(0, 0, 1), Vec3(1, 1, 2)), k);
  Ensemble e{{Vec3(0.5, 0.5, 2)}, {1.0}};
  VecX w = VecX::Constant(1, 10.0);
  auto ci = B.integrate(w, e, kNeedAll);
  // sigma = w - a.p - b is affine in p; its mean is the value at the centre.
  CHECK(ci.mass(0) == Catch::Approx(9.375).epsilon(1e-13));
  CHECK(B.volume() == Catch::Approx(1.0));
  CHECK(ci.facet.norm() == 0.0);
  // Energy bookkeeping: int c sigma + int f(sigma) = w mass - int f*.
  CHECK(ci.transport(0) + ci.internal(0) == Catch::Approx(w(0) * ci.mass(0) - ci.fstar(0)).epsilon(1e-12));
}

TEST_CASE("exact cells agree with an independent midpoint rule") {
  for (double gamma : {2.0, 1.5}) {
    Constants k;
    k.gamma = gamma;
    k.kappa = 0.7;
    Vec3 lo(0, 0, 1), hi(1, 1, 2);
    PolytopeBackend B(phi_box(lo, hi), k);
    std::mt19937_64 rng(31);
    auto e = random_ensemble(5, rng);
    VecX w = spread_weights(e, phi(Vec3(0.5, 0.5, 1.5), k), k, 0.4);
    auto ci = B.integrate(w, e, kNeedMoments);
    auto ref = p_midpoint(lo, hi, 90, w, e, k);
    double scale = ref.mass.sum();
    for (std::size_t i = 0; i < e.size(); ++i) {
      CHECK(std::abs(ci.mass(i) - ref.mass(i)) < 3e-3 * scale);
      CHECK((ci.moment[i] - ref.moment[i]).norm() < 3e-3 * scale);
    }
  }
}

TEST_CASE("exact cells agree with the grid oracle on a Phi-box") {
  Constants k;
  auto dom = phi_box(Vec3(0, 0, 1), Vec3(1, 1, 2));
  PolytopeBackend B(dom, k);
  GridOracle G(dom, k, 1.0 / 60);
  std::mt19937_64 rng(5);
  auto e = random_ensemble(4, rng);
  VecX w = spread_weights(e, phi(Vec3(0.5, 0.5, 1.5), k), k, 0.6);
  auto a = B.integrate(w, e, kNeedAll);
  auto b = G.integrate(w, e, kNeedAll);
  CHECK(G.volume() == Catch::Approx(B.volume()).epsilon(2e-2));
  for (std::size_t i = 0; i < e.size(); ++i) {
    CHECK(a.mass(i) == Catch::Approx(b.mass(i)).margin(1.5e-2 * a.mass.sum()));
    CHECK((a.grad_z[i] - b.grad_z[i]).norm() < 2e-2 * a.mass.sum());
  }
}

TEST_CASE("facet terms are the derivatives of the masses") {
  for (double gamma : {2.0, 1.5}) {
    Constants k;
    k.gamma = gamma;
    k.f_cor = 1.2;
    k.g = 0.8;
    PolytopeBackend B(csg::testing::phi_simplex(Vec3(0, 0, 0.5), 1.5), k);
    std::mt19937_64 rng(41);
    auto e = random_ensemble(6, rng, Vec3(0, 0, 1), Vec3(1, 1, 3));
    VecX w = B.initial_weights(e);
    w.array() -= 0.5;
    auto ci = B.integrate(w, e, kNeedHessian);
    CHECK((ci.facet - ci.facet.transpose()).norm() < 1e-14 * (1 + ci.facet.norm()));
    double h = 1e-6;
    for (std::size_t j = 0; j < e.size(); ++j) {
      VecX wp = w, wm = w;
      wp(j) += h;
      wm(j) -= h;
      VecX dm = (B.integrate(wp, e).mass - B.integrate(wm, e).mass) / (2 * h);
      for (std::size_t i = 0; i < e.size(); ++i) {
        double expect = i == j ? ci.fss(i) + ci.facet.row(i).sum() : -ci.facet(i, j);
        CHECK(dm(i) == Catch::Approx(expect).margin(1e-6));
      }
    }
  }
}

TEST_CASE("permuting seeds permutes the cell integrals") {
  Constants k;
  PolytopeBackend B(phi_box(Vec3(0, 0, 1), Vec3(1, 1, 2)), k);
  std::mt19937_64 rng(3);
  auto e = random_ensemble(5, rng);
  VecX w = B.initial_weights(e);
  auto a = B.integrate(w, e, kNeedAll);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Ensemble e2;
  VecX w2(5);
  for (std::size_t i = 0; i < 5; ++i) {
    e2.z.push_back(e.z[perm[i]]);
    e2.m.push_back(e.m[perm[i]]);
    w2(i) = w(perm[i]);
  }
  auto b = B.integrate(w2, e2, kNeedAll);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(b.mass(i) == Catch::Approx(a.mass(perm[i])).epsilon(1e-12));
    CHECK((b.moment[i] - a.moment[perm[i]]).norm() < 1e-12);
    for (std::size_t j = 0; j < 5; ++j) CHECK(b.facet(i, j) == Catch::Approx(a.facet(perm[i], perm[j])).margin(1e-13));
  }
}

TEST_CASE("cells partition the domain and match pointwise assignment") {
  Constants k;
  k.f_cor = 0.9;
  auto dom = phi_box(Vec3(-0.5, 0, 1), Vec3(1, 1.2, 2));
  PolytopeBackend B(dom, k);
  std::mt19937_64 rng(12);
  auto e = random_ensemble(8, rng);
  VecX w = B.initial_weights(e);
  auto D = B.build_diagram(w, e);
  double vol = 0;
  for (const auto& c : D.cells) vol += c.volume;
  CHECK(vol == Catch::Approx(B.volume()).epsilon(1e-12));
  for (std::size_t i = 0; i < e.size(); ++i)
    for (int j : D.cells[i].neighbors) {
      auto& nj = D.cells[std::size_t(j)].neighbors;
      CHECK(std::find(nj.begin(), nj.end(), int(i)) != nj.end());
    }

  PowerLift lift = power_lift(w, e, k);
  std::uniform_real_distribution<double> U(0, 1);
  int checked = 0;
  for (int s = 0; s < 2000; ++s) {
    Vec3 p(-0.5 + 1.5 * U(rng), 1.2 * U(rng), 1 + U(rng));
    Vec3 x = phi(p, k);
    std::size_t a = assign_point(x, w, e, k);
    // Skip points within rounding of a bisector.
    bool near = false;
    for (std::size_t j = 0; j < e.size(); ++j)
      if (j != a) {
        auto hs = power_bisector(lift, a, j);
        near |= std::abs(hs.n.dot(p) - hs.d) < 1e-9;
      }
    if (near) continue;
    ++checked;
    int owner = -1;
    for (std::size_t i = 0; i < e.size() && owner < 0; ++i)
      for (const auto& P : D.cells[i].pieces)
        if (P.contains(p, 1e-12)) owner = int(i);
    CHECK(owner == int(a));
  }
  CHECK(checked > 1900);
}

TEST_CASE("prism and column integrators agree on a physical box") {
  Constants k;
  BoxDomain box{Vec3(0, 0, 1), Vec3(1, 1, 2), 24};
  PolytopeBackend P(box, k);
  BackendOptions co;
  co.column_panels = 32;
  ColumnBackend C(box, k, co);
  CHECK(P.volume() == Catch::Approx(1.0).epsilon(1e-12));

  Ensemble one{{Vec3(0.5, 0.5, 1.5)}, {1.0}};
  VecX w1 = VecX::Constant(1, 5.0);
  // sigma = w - c is positive on the whole box; closed form below.
  double exact = 5.0 - (1.0 / 1.5) * (1.0 / 12.0 + 1.5);
  CHECK(C.integrate(w1, one).mass(0) == Catch::Approx(exact).epsilon(1e-13));
  CHECK(P.integrate(w1, one).mass(0) == Catch::Approx(exact).epsilon(1e-3));

  Ensemble e{{Vec3(0.2, 0.3, 1.0), Vec3(0.8, 0.4, 1.6), Vec3(0.4, 0.9, 2.3)}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  VecX w = C.initial_weights(e);
  auto a = P.integrate(w, e, kNeedAll);
  auto b = C.integrate(w, e, kNeedAll);
  double scale = a.mass.sum();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(a.mass(i) - b.mass(i)) < 2e-3 * scale);
    CHECK((a.moment[i] - b.moment[i]).norm() < 4e-3 * scale);
    CHECK((a.grad_z[i] - b.grad_z[i]).norm() < 4e-3 * scale);
    CHECK(std::abs(a.transport(i) - b.transport(i)) < 4e-3 * scale);
  }
}

TEST_CASE("column integrator: facet terms are mass derivatives") {
  Constants k;
  k.gamma = 1.5;
  BoxDomain box{Vec3(0, 0, 1), Vec3(1, 1, 2)};
  BackendOptions co;
  co.column_panels = 8;
  ColumnBackend C(box, k, co);
  Ensemble e{{Vec3(0.2, 0.3, 1.0), Vec3(0.8, 0.4, 1.6), Vec3(0.4, 0.9, 2.3)}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  VecX w = C.initial_weights(e);
  auto ci = C.integrate(w, e, kNeedHessian);
  double h = 1e-6;
  for (std::size_t j = 0; j < 3; ++j) {
    VecX wp = w, wm = w;
    wp(j) += h;
    wm(j) -= h;
    VecX dm = (C.integrate(wp, e).mass - C.integrate(wm, e).mass) / (2 * h);
    for (std::size_t i = 0; i < 3; ++i) {
      double expect = i == j ? ci.fss(i) + ci.facet.row(i).sum() : -ci.facet(i, j);
      CHECK(dm(i) == Catch::Approx(expect).margin(1e-6));
    }
  }
}

TEST_CASE("physical variables from the transport map") {
  Constants k;
  Ensemble e{{Vec3(1, 2, 3)}, {1.0}};
  auto v = recover_physical_variables(Vec3(0, 0, 1), VecX::Zero(1), e, k);
  CHECK((v.vg - Vec2(-2, 1)).norm() < 1e-15);
  CHECK(v.theta == 3.0);

  k.f_cor = 2;
  Ensemble two{{Vec3(0, 0, 1), Vec3(1, 0, 2)}, {0.5, 0.5}};
  // Close to the second seed the map picks it.
  auto u = recover_physical_variables(Vec3(1, 0.5, 0), VecX::Zero(2), two, k);
  CHECK(u.theta == 2.0);
  CHECK((u.vg - Vec2(4 * 0.5, 0)).norm() < 1e-14);
}

TEST_CASE("uniform weight shifts leave the transport geometry unchanged") {
  Constants k;
  PolytopeBackend B(phi_box(Vec3(0, 0, 1), Vec3(1, 1, 2)), k);
  std::mt19937_64 rng(9);
  auto e = random_ensemble(5, rng);
  VecX w = VecX::Zero(5);
  auto a = B.integrate_transport(w, e);
  auto b = B.integrate_transport((w.array() + 2.5).matrix(), e);
  CHECK((a.mass - b.mass).norm() < 1e-12);
  CHECK(a.mass.sum() == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(b.value == Catch::Approx(a.value - 2.5).epsilon(1e-12));
}

TEST_CASE("2D strips: area, partition and facet derivatives") {
  Constants k;
  k.f_cor = 1.3;
  Box2DDomain d{Vec2(0, 0.1), Vec2(1, 1), 256};
  Transport2D T(d, k);
  CHECK(T.area() == Catch::Approx(0.9).epsilon(1e-12));
  std::vector<Vec2> z{{0.2, 0.3}, {0.7, 0.5}, {0.4, 0.9}, {0.9, 0.2}};
  VecX w = VecX::Zero(4);
  auto ev = T.integrate(w, z);
  CHECK(ev.mass.sum() == Catch::Approx(1.0).epsilon(1e-12));
  double h = 1e-6;
  for (std::size_t j = 0; j < 4; ++j) {
    VecX wp = w, wm = w;
    wp(j) += h;
    wm(j) -= h;
    VecX dm = (T.integrate(wp, z).mass - T.integrate(wm, z).mass) / (2 * h);
    for (std::size_t i = 0; i < 4; ++i) {
      double expect = i == j ? ev.facet.row(i).sum() - ev.facet(i, i) : -ev.facet(i, j);
      CHECK(dm(i) == Catch::Approx(expect).margin(1e-6));
    }
  }
  // Pointwise: a cell's strips contain exactly the points assigned to it.
  auto lift = power_lift2d(w, z, k);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0, 1);
  for (int s = 0; s < 500; ++s) {
    Vec2 x(U(rng), 0.1 + 0.9 * U(rng));
    std::size_t best = 0;
    for (std::size_t i = 1; i < 4; ++i)
      if (cost_c2d(x, z[i], k) - w(i) < cost_c2d(x, z[best], k) - w(best)) best = i;
    Vec2 p = phi2d_inverse(x, k);
    bool in = false;
    for (const auto& Q : T.cell(lift, best)) in |= Q.contains(p, 1e-9);
    // Points between a parabolic edge and its chord may fall outside.
    if (!in) {
      double gap = std::min(std::abs(x(1) - 0.1), std::abs(x(1) - 1.0));
      CHECK(gap < 1e-4);
    }
  }
}
