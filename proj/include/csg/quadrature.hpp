#pragma once

// Gauss rules on intervals and collapsed-coordinate (conical product) rules
// on triangles and tetrahedra. All weights are positive.

#include "csg/model.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <map>
#include <mutex>

namespace csg {

struct Rule1D {
  std::vector<double> x;  // nodes on [0, 1]
  std::vector<double> w;
};

// Gauss-Jacobi rule on [0,1] for the weight (1 - u)^alpha, via Golub-Welsch.
inline Rule1D gauss_jacobi01(int n, double alpha) {
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n, n);
  const double a = alpha, b = 0.0;
  for (int k = 0; k < n; ++k) {
    double s = 2.0 * k + a + b;
    T(k, k) = (k == 0 && a + b == 0) ? (b - a) / (a + b + 2.0) : (b * b - a * a) / (s * (s + 2.0));
    if (k + 1 < n) {
      double kk = k + 1.0;
      double s1 = 2.0 * kk + a + b;
      double num = 4.0 * kk * (kk + a) * (kk + b) * (kk + a + b);
      double den = s1 * s1 * (s1 + 1.0) * (s1 - 1.0);
      T(k, k + 1) = T(k + 1, k) = std::sqrt(num / den);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
  // Integral of (1 - x)^alpha over [-1, 1].
  double mu0 = std::pow(2.0, a + 1.0) / (a + 1.0);
  Rule1D r;
  for (int k = 0; k < n; ++k) {
    double xk = es.eigenvalues()(k);
    double v0 = es.eigenvectors()(0, k);
    r.x.push_back(0.5 * (xk + 1.0));
    r.w.push_back(mu0 * v0 * v0 / std::pow(2.0, a + 1.0));
  }
  return r;
}

inline Rule1D gauss_legendre01(int n) { return gauss_jacobi01(n, 0); }

// Barycentric nodes (weights of vertices 1..dim; vertex 0 takes the rest)
// with weights summing to 1.
struct SimplexRule {
  int degree = 0;
  std::vector<std::array<double, 3>> bary;
  std::vector<double> w;
};

inline SimplexRule make_tet_rule(int degree) {
  int n = std::max(1, (degree + 2) / 2);
  Rule1D ru = gauss_jacobi01(n, 2), rv = gauss_jacobi01(n, 1), rs = gauss_legendre01(n);
  SimplexRule r;
  r.degree = degree;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < n; ++l) {
        double u = ru.x[i], v = rv.x[j], s = rs.x[l];
        double l1 = u, l2 = v * (1 - u), l3 = s * (1 - u) * (1 - v);
        r.bary.push_back({l1, l2, l3});
        r.w.push_back(6.0 * ru.w[i] * rv.w[j] * rs.w[l]);
      }
  return r;
}

inline SimplexRule make_tri_rule(int degree) {
  int n = std::max(1, (degree + 2) / 2);
  Rule1D ru = gauss_jacobi01(n, 1), rv = gauss_legendre01(n);
  SimplexRule r;
  r.degree = degree;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double u = ru.x[i], v = rv.x[j];
      r.bary.push_back({u, v * (1 - u), 0.0});
      r.w.push_back(2.0 * ru.w[i] * rv.w[j]);
    }
  return r;
}

// Rules are cached per degree; construction is cheap but called per cell.
inline const SimplexRule& tet_rule(int degree) {
  static std::mutex mu;
  static std::map<int, SimplexRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(degree);
  if (it == cache.end()) it = cache.emplace(degree, make_tet_rule(degree)).first;
  return it->second;
}

inline const SimplexRule& tri_rule(int degree) {
  static std::mutex mu;
  static std::map<int, SimplexRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(degree);
  if (it == cache.end()) it = cache.emplace(degree, make_tri_rule(degree)).first;
  return it->second;
}

}  // namespace csg
