#pragma once

// Discrete measures: quantization of densities and sample sets into
// well-prepared ensembles, and exact W1 distances between ensembles.

#include "csg/model.hpp"
#include "csg/quadrature.hpp"

#include <functional>
#include <numeric>

namespace csg {

inline constexpr double kDefaultJitter = 1e-7;  // relative to the vertical extent
inline constexpr std::size_t kMaxW1Size = 512;

namespace detail {

// Dyadic cell grid: halve the longest cell edge (lowest axis on ties) until
// there are at least N cells. Degenerate axes are never split.
inline std::array<int, 3> cell_counts(const Vec3& lo, const Vec3& hi, std::size_t N) {
  std::array<int, 3> n{1, 1, 1};
  Vec3 L = hi - lo;
  if (!(L.maxCoeff() > 0)) return n;
  while (std::size_t(n[0]) * n[1] * n[2] < N) {
    int best = 0;
    for (int a = 1; a < 3; ++a)
      if (L(a) / n[a] > L(best) / n[best]) best = a;
    n[best] *= 2;
  }
  return n;
}

// Distinct multiples of eta on z3 so no two seeds share a horizontal plane.
inline void jitter_heights(Ensemble& e, double eta) {
  for (std::size_t i = 0; i < e.size(); ++i) e.z[i](2) += double(i) * eta;
}

}  // namespace detail

struct QuantizeOptions {
  double jitter = kDefaultJitter;  // times the vertical extent of K
  int order = 3;                   // Gauss points per axis and cell
};

// Density on the box K = [lo, hi] in seed space.
inline Ensemble quantize(const std::function<double(const Vec3&)>& density, const Vec3& lo, const Vec3& hi,
                         std::size_t N, QuantizeOptions opt = {}) {
  if (N == 0) throw config_error("quantize needs N >= 1");
  if (!((hi - lo).minCoeff() > 0)) throw config_error("quantize needs a box with positive extent");
  auto n = detail::cell_counts(lo, hi, N);
  Vec3 h((hi(0) - lo(0)) / n[0], (hi(1) - lo(1)) / n[1], (hi(2) - lo(2)) / n[2]);
  Rule1D r = gauss_legendre01(opt.order);
  Ensemble e;
  for (int c = 0; c < n[2]; ++c)
    for (int b = 0; b < n[1]; ++b)
      for (int a = 0; a < n[0]; ++a) {
        double m = 0;
        Vec3 mom = Vec3::Zero();
        Vec3 base = lo + Vec3(a * h(0), b * h(1), c * h(2));
        for (std::size_t i = 0; i < r.x.size(); ++i)
          for (std::size_t j = 0; j < r.x.size(); ++j)
            for (std::size_t l = 0; l < r.x.size(); ++l) {
              Vec3 x = base + Vec3(r.x[i] * h(0), r.x[j] * h(1), r.x[l] * h(2));
              double v = density(x) * r.w[i] * r.w[j] * r.w[l] * h.prod();
              if (v < 0) throw config_error("density must be nonnegative");
              m += v;
              mom += v * x;
            }
        if (m > 0) {
          e.z.push_back(mom / m);
          e.m.push_back(m);
        }
      }
  double total = std::accumulate(e.m.begin(), e.m.end(), 0.0);
  if (!(total > 0)) throw config_error("density has zero total mass");
  for (double& m : e.m) m /= total;
  detail::jitter_heights(e, opt.jitter * (hi(2) - lo(2)));
  return e;
}

// Weighted sample set; the cell grid spans the samples' bounding box.
inline Ensemble quantize(const std::vector<Vec3>& samples, const std::vector<double>& weights, std::size_t N,
                         QuantizeOptions opt = {}) {
  if (N == 0) throw config_error("quantize needs N >= 1");
  if (samples.empty() || samples.size() != weights.size()) throw config_error("samples and weights must match");
  Vec3 lo = samples[0], hi = samples[0];
  for (const auto& s : samples) {
    lo = lo.cwiseMin(s);
    hi = hi.cwiseMax(s);
  }
  auto n = detail::cell_counts(lo, hi, N);
  auto index = [&](const Vec3& x) {
    std::array<int, 3> id{};
    for (int a = 0; a < 3; ++a) {
      double L = hi(a) - lo(a);
      id[a] = L > 0 ? std::min(n[a] - 1, int((x(a) - lo(a)) / L * n[a])) : 0;
    }
    return (std::size_t(id[2]) * n[1] + id[1]) * n[0] + id[0];
  };
  std::size_t cells = std::size_t(n[0]) * n[1] * n[2];
  std::vector<double> m(cells, 0.0);
  std::vector<Vec3> mom(cells, Vec3::Zero());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (weights[s] < 0) throw config_error("sample weights must be nonnegative");
    std::size_t c = index(samples[s]);
    m[c] += weights[s];
    mom[c] += weights[s] * samples[s];
  }
  Ensemble e;
  for (std::size_t c = 0; c < cells; ++c)
    if (m[c] > 0) {
      e.z.push_back(mom[c] / m[c]);
      e.m.push_back(m[c]);
    }
  double total = std::accumulate(e.m.begin(), e.m.end(), 0.0);
  if (!(total > 0)) throw config_error("sample set has zero total mass");
  for (double& v : e.m) v /= total;
  if (e.size() > 1) detail::jitter_heights(e, opt.jitter * (hi(2) - lo(2)));
  return e;
}

struct CouplingEntry {
  std::size_t i, j;
  double mass;
};

struct TransportCoupling {
  std::vector<CouplingEntry> entries;
  double value = 0;
};

// Exact discrete W1 by successive shortest paths on the complete bipartite
// graph (Dijkstra with potentials, dense since every pair is an edge).
inline TransportCoupling w1_distance(const Ensemble& mu, const Ensemble& nu) {
  std::size_t n = mu.size(), m = nu.size();
  if (n == 0 || m == 0) throw config_error("W1 needs non-empty measures");
  if (n > kMaxW1Size || m > kMaxW1Size) throw config_error("W1 is limited to 512 atoms per side");
  double smu = std::accumulate(mu.m.begin(), mu.m.end(), 0.0);
  double snu = std::accumulate(nu.m.begin(), nu.m.end(), 0.0);
  if (std::abs(smu - 1) > kMassSumTol || std::abs(snu - 1) > kMassSumTol)
    throw config_error("W1 needs total mass 1 on both sides");

  MatX cost(n, m), flow = MatX::Zero(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) cost(i, j) = (mu.z[i] - nu.z[j]).norm();
  std::vector<double> supply(mu.m), demand(nu.m);
  // Node ids: sources 0..n-1, sinks n..n+m-1.
  std::size_t V = n + m;
  std::vector<double> pot(V, 0.0), dist(V);
  std::vector<long> prev(V);
  std::vector<char> done(V);
  const double inf = std::numeric_limits<double>::infinity();
  const double tiny = 1e-15;
  auto open = [&](const std::vector<double>& v) {
    return std::any_of(v.begin(), v.end(), [&](double x) { return x > tiny; });
  };
  // Each augmentation exhausts a supply, a demand or a reverse edge.
  for (std::size_t guard = 0; open(supply) && open(demand) && guard < 4 * (V + n * m); ++guard) {
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(prev.begin(), prev.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    for (std::size_t i = 0; i < n; ++i)
      if (supply[i] > tiny) dist[i] = 0;
    long target = -1;
    for (;;) {
      long u = -1;
      for (std::size_t v = 0; v < V; ++v)
        if (!done[v] && dist[v] < inf && (u < 0 || dist[v] < dist[std::size_t(u)])) u = long(v);
      if (u < 0) break;
      std::size_t uu = std::size_t(u);
      done[uu] = 1;
      if (uu >= n && demand[uu - n] > tiny) {
        target = u;
        break;
      }
      if (uu < n) {
        for (std::size_t j = 0; j < m; ++j) {
          if (done[n + j]) continue;
          double nd = dist[uu] + cost(uu, j) + pot[uu] - pot[n + j];
          if (nd < dist[n + j]) {
            dist[n + j] = nd;
            prev[n + j] = u;
          }
        }
      } else {
        std::size_t j = uu - n;
        for (std::size_t i = 0; i < n; ++i)
          if (!done[i] && flow(i, j) > tiny) {
            double nd = dist[uu] - cost(i, j) + pot[uu] - pot[i];
            if (nd < dist[i]) {
              dist[i] = nd;
              prev[i] = u;
            }
          }
      }
    }
    if (target < 0) throw std::runtime_error("W1 flow: no augmenting path");
    double dt = dist[std::size_t(target)];
    for (std::size_t v = 0; v < V; ++v) pot[v] += std::min(dist[v], dt);
    // Bottleneck along the path.
    double amt = demand[std::size_t(target) - n];
    long v = target;
    while (prev[std::size_t(v)] >= 0) {
      long u = prev[std::size_t(v)];
      if (std::size_t(u) >= n) amt = std::min(amt, flow(std::size_t(v), std::size_t(u) - n));
      v = u;
    }
    amt = std::min(amt, supply[std::size_t(v)]);
    supply[std::size_t(v)] -= amt;
    demand[std::size_t(target) - n] -= amt;
    v = target;
    while (prev[std::size_t(v)] >= 0) {
      long u = prev[std::size_t(v)];
      if (std::size_t(u) < n)
        flow(std::size_t(u), std::size_t(v) - n) += amt;
      else
        flow(std::size_t(v), std::size_t(u) - n) -= amt;
      v = u;
    }
  }
  TransportCoupling out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (flow(i, j) > tiny) {
        out.entries.push_back({i, j, flow(i, j)});
        out.value += flow(i, j) * cost(i, j);
      }
  return out;
}

}  // namespace csg
