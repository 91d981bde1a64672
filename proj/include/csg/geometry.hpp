#pragma once

// Convex polytopes (3D) and polygons (2D) with labelled faces, clipped by
// half-spaces, plus volume, surface and weighted quadrature over them.

#include "csg/quadrature.hpp"

#include <map>

namespace csg {

// Face labels. Non-negative labels name the neighbouring seed of a bisector
// face; domain half-space k carries domain_label(k).
inline constexpr int kPositivityLabel = -1000000;
inline constexpr int kBoundsLabel = -2000000;
inline constexpr int kInternalLabel = -3000000;

inline constexpr int domain_label(int k) { return -1 - k; }

inline constexpr double kClipEps = 1e-11;
inline constexpr double kVertexMergeTol = 1e-10;

struct Face {
  int label;
  Vec3 n;
  double d;
  std::vector<Vec3> ring;  // counter-clockwise seen from outside
};

struct Tet {
  Vec3 a, b, c, d;
  double volume() const { return std::abs((b - a).cross(c - a).dot(d - a)) / 6.0; }
};

namespace detail {

inline void drop_repeats(std::vector<Vec3>& ring, double tol) {
  std::vector<Vec3> out;
  out.reserve(ring.size());
  for (const auto& v : ring)
    if (out.empty() || (v - out.back()).norm() > tol) out.push_back(v);
  while (out.size() > 1 && (out.front() - out.back()).norm() <= tol) out.pop_back();
  ring.swap(out);
}

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a(0) - o(0)) * (b(1) - o(1)) - (a(1) - o(1)) * (b(0) - o(0));
}

// Andrew's monotone chain, counter-clockwise, collinear points removed.
inline std::vector<int> hull2d(const std::vector<Vec2>& pts) {
  int n = static_cast<int>(pts.size());
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    return pts[a](0) < pts[b](0) || (pts[a](0) == pts[b](0) && pts[a](1) < pts[b](1));
  });
  if (n < 3) return idx;
  std::vector<int> h(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross2(pts[h[k - 2]], pts[h[k - 1]], pts[idx[i]]) <= 1e-14) --k;
    h[k++] = idx[i];
  }
  for (int i = n - 2, t = k + 1; i >= 0; --i) {
    while (k >= t && cross2(pts[h[k - 2]], pts[h[k - 1]], pts[idx[i]]) <= 1e-14) --k;
    h[k++] = idx[i];
  }
  h.resize(std::max(0, k - 1));
  return h;
}

inline void plane_basis(const Vec3& n, Vec3& u, Vec3& v) {
  Vec3 t = std::abs(n(0)) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  u = n.cross(t).normalized();
  v = n.cross(u);
}

// Closes the cap of a clip from the on-plane edges of the kept faces. Edges
// present in both directions are interior and cancel; the rest, reversed,
// form one loop. Returns false (caller falls back) if they do not.
inline bool chain_cap(const std::vector<std::pair<Vec3, Vec3>>& edges, std::vector<Vec3>& ring) {
  auto less = [](const Vec3& a, const Vec3& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  };
  std::map<Vec3, std::vector<Vec3>, decltype(less)> next(less);
  std::size_t count = 0;
  for (const auto& [a, b] : edges) {
    auto it = next.find(a);
    if (it != next.end()) {
      auto twin = std::find(it->second.begin(), it->second.end(), b);
      if (twin != it->second.end()) {
        it->second.erase(twin);
        --count;
        continue;
      }
    }
    {
      next[b].push_back(a);
      ++count;
    }
  }
  ring.clear();
  if (count < 3) return count == 0;
  auto start = std::find_if(next.begin(), next.end(), [](const auto& kv) { return !kv.second.empty(); });
  Vec3 cur = start->first;
  for (std::size_t k = 0; k < count; ++k) {
    auto it = next.find(cur);
    if (it == next.end() || it->second.size() != 1) return false;
    ring.push_back(cur);
    cur = it->second.front();
  }
  return cur == ring.front();
}

}  // namespace detail

class Polytope {
 public:
  std::vector<Face> faces;

  bool empty() const { return faces.size() < 4; }

  static Polytope box(const Vec3& lo, const Vec3& hi, int label = kBoundsLabel) {
    Polytope P;
    auto V = [&](int i, int j, int k) {
      return Vec3(i ? hi(0) : lo(0), j ? hi(1) : lo(1), k ? hi(2) : lo(2));
    };
    P.faces.push_back({label, Vec3(-1, 0, 0), -lo(0), {V(0, 0, 0), V(0, 0, 1), V(0, 1, 1), V(0, 1, 0)}});
    P.faces.push_back({label, Vec3(1, 0, 0), hi(0), {V(1, 0, 0), V(1, 1, 0), V(1, 1, 1), V(1, 0, 1)}});
    P.faces.push_back({label, Vec3(0, -1, 0), -lo(1), {V(0, 0, 0), V(1, 0, 0), V(1, 0, 1), V(0, 0, 1)}});
    P.faces.push_back({label, Vec3(0, 1, 0), hi(1), {V(0, 1, 0), V(0, 1, 1), V(1, 1, 1), V(1, 1, 0)}});
    P.faces.push_back({label, Vec3(0, 0, -1), -lo(2), {V(0, 0, 0), V(0, 1, 0), V(1, 1, 0), V(1, 0, 0)}});
    P.faces.push_back({label, Vec3(0, 0, 1), hi(2), {V(0, 0, 1), V(1, 0, 1), V(1, 1, 1), V(0, 1, 1)}});
    return P;
  }

  // Intersection of half-spaces, labelled domain_label(k) unless labels are
  // given. Throws if the set is unbounded or has empty interior.
  static Polytope from_halfspaces(const std::vector<Halfspace3>& hs, std::vector<int> labels = {}) {
    if (labels.empty())
      for (std::size_t k = 0; k < hs.size(); ++k) labels.push_back(domain_label(static_cast<int>(k)));
    // Bounding box from pairwise-triple vertex enumeration.
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    int found = 0;
    std::size_t H = hs.size();
    for (std::size_t a = 0; a < H; ++a)
      for (std::size_t b = a + 1; b < H; ++b)
        for (std::size_t c = b + 1; c < H; ++c) {
          Mat3 A;
          A.row(0) = hs[a].n.transpose();
          A.row(1) = hs[b].n.transpose();
          A.row(2) = hs[c].n.transpose();
          if (std::abs(A.determinant()) < 1e-12) continue;
          Vec3 x = A.fullPivLu().solve(Vec3(hs[a].d, hs[b].d, hs[c].d));
          bool ok = true;
          for (const auto& h : hs)
            if (h.n.dot(x) > h.d + 1e-9) ok = false;
          if (!ok) continue;
          lo = lo.cwiseMin(x);
          hi = hi.cwiseMax(x);
          ++found;
        }
    if (found < 4) throw config_error("Phi-space polytope is empty or unbounded");
    Vec3 pad = Vec3::Constant(1.0 + (hi - lo).maxCoeff());
    Polytope P = box(lo - pad, hi + pad);
    for (std::size_t k = 0; k < H; ++k) {
      double s = hs[k].n.norm();
      P = P.clipped({hs[k].n / s, hs[k].d / s}, labels[k]);
    }
    for (const auto& f : P.faces)
      if (f.label == kBoundsLabel) throw config_error("Phi-space polytope is unbounded");
    if (P.empty() || P.volume() <= 0) throw config_error("Phi-space polytope has empty interior");
    return P;
  }

  // Intersection with {n.p <= d}; the new face carries `label`.
  Polytope clipped(const Halfspace3& h, int label) const {
    double smax = -std::numeric_limits<double>::infinity();
    double smin = std::numeric_limits<double>::infinity();
    for (const auto& f : faces)
      for (const auto& v : f.ring) {
        double s = h.n.dot(v) - h.d;
        smax = std::max(smax, s);
        smin = std::min(smin, s);
      }
    if (faces.empty() || smin >= -kClipEps) return Polytope{};
    if (smax <= kClipEps) return *this;

    // Edge crossings are computed from the lexicographically smaller
    // endpoint so the two faces sharing an edge get bit-identical points.
    auto crossing = [&](const Vec3& a, double sa, const Vec3& b, double sb) -> Vec3 {
      if (std::lexicographical_compare(b.data(), b.data() + 3, a.data(), a.data() + 3)) {
        double t = sb / (sb - sa);
        return b + t * (a - b);
      }
      double t = sa / (sa - sb);
      return a + t * (b - a);
    };
    Polytope out;
    std::vector<Vec3> cut;
    // Directed ring edges lying on the cutting plane; the cap boundary is
    // what remains after cancelling edges shared by two kept faces.
    std::vector<std::pair<Vec3, Vec3>> on_edges;
    for (const auto& f : faces) {
      Face nf{f.label, f.n, f.d, {}};
      std::vector<char> on;
      std::size_t m = f.ring.size();
      for (std::size_t k = 0; k < m; ++k) {
        const Vec3& a = f.ring[k];
        const Vec3& b = f.ring[(k + 1) % m];
        double sa = h.n.dot(a) - h.d, sb = h.n.dot(b) - h.d;
        bool ia = sa <= kClipEps, ib = sb <= kClipEps;
        if (ia) {
          nf.ring.push_back(a);
          on.push_back(sa >= -kClipEps);
          if (on.back()) cut.push_back(a);
        }
        if (ia != ib && std::abs(sa) > kClipEps && std::abs(sb) > kClipEps) {
          nf.ring.push_back(crossing(a, sa, b, sb));
          on.push_back(1);
          cut.push_back(nf.ring.back());
        }
      }
      // Exact repeats only, so shared edges keep matching endpoints.
      std::vector<Vec3> ring;
      std::vector<char> flags;
      for (std::size_t k = 0; k < nf.ring.size(); ++k)
        if (ring.empty() || nf.ring[k] != ring.back()) {
          ring.push_back(nf.ring[k]);
          flags.push_back(on[k]);
        }
      while (ring.size() > 1 && ring.front() == ring.back()) {
        ring.pop_back();
        flags.pop_back();
      }
      if (ring.size() < 3) continue;
      for (std::size_t k = 0; k < ring.size(); ++k)
        if (flags[k] && flags[(k + 1) % ring.size()]) on_edges.emplace_back(ring[k], ring[(k + 1) % ring.size()]);
      nf.ring = std::move(ring);
      out.faces.push_back(std::move(nf));
    }
    Face cap{label, h.n, h.d, {}};
    if (!detail::chain_cap(on_edges, cap.ring)) {
      // Fallback: convex hull of the points on the plane.
      Vec3 u, v;
      detail::plane_basis(h.n, u, v);
      std::vector<Vec2> q;
      q.reserve(cut.size());
      for (const auto& x : cut) q.emplace_back(u.dot(x), v.dot(x));
      cap.ring.clear();
      for (int id : detail::hull2d(q)) cap.ring.push_back(cut[id]);
      detail::drop_repeats(cap.ring, 1e-13);
    }
    if (cap.ring.size() >= 3) out.faces.push_back(std::move(cap));
    if (out.faces.size() < 4) return Polytope{};
    return out;
  }

  Vec3 vertex_mean() const {
    Vec3 s = Vec3::Zero();
    int n = 0;
    for (const auto& f : faces)
      for (const auto& v : f.ring) {
        s += v;
        ++n;
      }
    return n ? Vec3(s / n) : Vec3::Zero();
  }

  // Fan decomposition from an interior point over fan-triangulated faces.
  std::vector<Tet> tetrahedra() const {
    std::vector<Tet> out;
    if (empty()) return out;
    Vec3 c = vertex_mean();
    for (const auto& f : faces)
      for (std::size_t k = 1; k + 1 < f.ring.size(); ++k)
        out.push_back({c, f.ring[0], f.ring[k], f.ring[k + 1]});
    return out;
  }

  double volume() const {
    double v = 0;
    for (const auto& t : tetrahedra()) v += t.volume();
    return v;
  }

  Vec3 centroid() const {
    double v = 0;
    Vec3 m = Vec3::Zero();
    for (const auto& t : tetrahedra()) {
      double tv = t.volume();
      v += tv;
      m += tv * (t.a + t.b + t.c + t.d) / 4.0;
    }
    return v > 0 ? Vec3(m / v) : Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
  }

  void bounds(Vec3& lo, Vec3& hi) const {
    lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    hi = -lo;
    for (const auto& f : faces)
      for (const auto& v : f.ring) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
      }
  }

  bool contains(const Vec3& p, double tol = 1e-9) const {
    if (empty()) return false;
    for (const auto& f : faces)
      if (f.n.dot(p) - f.d > tol) return false;
    return true;
  }

  // Deduplicated vertex list and facet index rings.
  void export_mesh(std::vector<Vec3>& verts, std::vector<std::vector<int>>& rings,
                   std::vector<int>* labels = nullptr) const {
    for (const auto& f : faces) {
      std::vector<int> ring;
      for (const auto& v : f.ring) {
        int id = -1;
        for (std::size_t k = 0; k < verts.size(); ++k)
          if ((verts[k] - v).norm() <= kVertexMergeTol) {
            id = static_cast<int>(k);
            break;
          }
        if (id < 0) {
          id = static_cast<int>(verts.size());
          verts.push_back(v);
        }
        if (ring.empty() || ring.back() != id) ring.push_back(id);
      }
      if (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();
      if (ring.size() >= 3) {
        rings.push_back(ring);
        if (labels) labels->push_back(f.label);
      }
    }
  }
};

// Calls fn(point, weight) at every node of a degree-exact rule; weights sum
// to the volume.
template <class Fn>
void for_each_volume_node(const std::vector<Tet>& tets, int degree, Fn&& fn) {
  const SimplexRule& r = tet_rule(degree);
  for (const auto& t : tets) {
    double vol = t.volume();
    if (vol <= 0) continue;
    Vec3 e1 = t.b - t.a, e2 = t.c - t.a, e3 = t.d - t.a;
    for (std::size_t q = 0; q < r.w.size(); ++q) {
      const auto& l = r.bary[q];
      fn(Vec3(t.a + l[0] * e1 + l[1] * e2 + l[2] * e3), r.w[q] * vol);
    }
  }
}

template <class Fn>
void for_each_face_node(const Face& f, int degree, Fn&& fn) {
  const SimplexRule& r = tri_rule(degree);
  for (std::size_t k = 1; k + 1 < f.ring.size(); ++k) {
    const Vec3& a = f.ring[0];
    Vec3 e1 = f.ring[k] - a, e2 = f.ring[k + 1] - a;
    double area = 0.5 * e1.cross(e2).norm();
    if (area <= 0) continue;
    for (std::size_t q = 0; q < r.w.size(); ++q) {
      const auto& l = r.bary[q];
      fn(Vec3(a + l[0] * e1 + l[1] * e2), r.w[q] * area);
    }
  }
}

template <class Fn>
auto integrate_volume(const Polytope& P, Fn&& fn, int degree) {
  using R = std::decay_t<decltype(fn(Vec3()))>;
  R acc = R();
  if constexpr (std::is_base_of_v<Eigen::MatrixBase<R>, R>) acc.setZero();
  for_each_volume_node(P.tetrahedra(), degree, [&](const Vec3& p, double w) { acc += w * fn(p); });
  return acc;
}

template <class Fn>
double integrate_facet(const Polytope& P, std::size_t face, Fn&& fn, int degree) {
  double acc = 0;
  if (face >= P.faces.size()) return 0;
  for_each_face_node(P.faces[face], degree, [&](const Vec3& p, double w) { acc += w * fn(p); });
  return acc;
}

inline double face_area(const Face& f) {
  double a = 0;
  for (std::size_t k = 1; k + 1 < f.ring.size(); ++k)
    a += 0.5 * (f.ring[k] - f.ring[0]).cross(f.ring[k + 1] - f.ring[0]).norm();
  return a;
}

// ---- 2D ---------------------------------------------------------------------

// Counter-clockwise polygon; edge k runs v[k] -> v[k+1] and carries label[k].
struct Polygon {
  std::vector<Vec2> v;
  std::vector<int> label;

  bool empty() const { return v.size() < 3; }

  static Polygon rect(const Vec2& lo, const Vec2& hi, int lab = kBoundsLabel) {
    return {{lo, Vec2(hi(0), lo(1)), hi, Vec2(lo(0), hi(1))}, {lab, lab, lab, lab}};
  }

  Polygon clipped(const Halfspace2& h, int lab) const {
    if (empty()) return {};
    std::size_t m = v.size();
    std::vector<double> s(m);
    double smin = std::numeric_limits<double>::infinity(), smax = -smin;
    for (std::size_t k = 0; k < m; ++k) {
      s[k] = h.n.dot(v[k]) - h.d;
      smin = std::min(smin, s[k]);
      smax = std::max(smax, s[k]);
    }
    if (smin >= -kClipEps) return {};
    if (smax <= kClipEps) return *this;
    Polygon out;
    for (std::size_t k = 0; k < m; ++k) {
      std::size_t k1 = (k + 1) % m;
      bool ia = s[k] <= kClipEps, ib = s[k1] <= kClipEps;
      bool crosses = ia != ib && std::abs(s[k]) > kClipEps && std::abs(s[k1]) > kClipEps;
      Vec2 x = crosses ? Vec2(v[k] + s[k] / (s[k] - s[k1]) * (v[k1] - v[k])) : Vec2::Zero();
      if (ia) {
        out.v.push_back(v[k]);
        out.label.push_back(ib || crosses ? label[k] : lab);
        if (crosses) {
          out.v.push_back(x);
          out.label.push_back(lab);
        }
      } else if (crosses) {
        out.v.push_back(x);
        out.label.push_back(label[k]);
      }
    }
    // Merge coincident vertices; the surviving edge keeps the later label.
    Polygon clean;
    for (std::size_t k = 0; k < out.v.size(); ++k) {
      if (!clean.v.empty() && (out.v[k] - clean.v.back()).norm() <= 1e-13) {
        clean.label.back() = out.label[k];
        continue;
      }
      clean.v.push_back(out.v[k]);
      clean.label.push_back(out.label[k]);
    }
    while (clean.v.size() > 1 && (clean.v.front() - clean.v.back()).norm() <= 1e-13) {
      clean.v.pop_back();
      clean.label.pop_back();
    }
    if (clean.v.size() < 3 || clean.area() <= 0) return {};
    return clean;
  }

  double area() const {
    double a = 0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const Vec2& p = v[k];
      const Vec2& q = v[(k + 1) % v.size()];
      a += p(0) * q(1) - p(1) * q(0);
    }
    return 0.5 * a;
  }

  Vec2 centroid() const {
    double a = 0;
    Vec2 c = Vec2::Zero();
    for (std::size_t k = 0; k < v.size(); ++k) {
      const Vec2& p = v[k];
      const Vec2& q = v[(k + 1) % v.size()];
      double cr = p(0) * q(1) - p(1) * q(0);
      a += cr;
      c += cr * (p + q);
    }
    return a != 0 ? Vec2(c / (3.0 * a)) : Vec2::Constant(std::numeric_limits<double>::quiet_NaN());
  }

  double edge_length(std::size_t k) const { return (v[(k + 1) % v.size()] - v[k]).norm(); }

  bool contains(const Vec2& p, double tol = 1e-9) const {
    if (empty()) return false;
    for (std::size_t k = 0; k < v.size(); ++k)
      if (detail::cross2(v[k], v[(k + 1) % v.size()], p) < -tol * edge_length(k)) return false;
    return true;
  }

  template <class Fn>
  void for_each_area_node(int degree, Fn&& fn) const {
    const SimplexRule& r = tri_rule(degree);
    for (std::size_t k = 1; k + 1 < v.size(); ++k) {
      Vec2 e1 = v[k] - v[0], e2 = v[k + 1] - v[0];
      double area = 0.5 * std::abs(e1(0) * e2(1) - e1(1) * e2(0));
      if (area <= 0) continue;
      for (std::size_t q = 0; q < r.w.size(); ++q)
        fn(Vec2(v[0] + r.bary[q][0] * e1 + r.bary[q][1] * e2), r.w[q] * area);
    }
  }
};

}  // namespace csg
