#pragma once

// JSON run configuration: constants, domain, initial ensemble and simulation
// settings, plus ensemble (de)serialization.

#include "csg/analytic.hpp"
#include "csg/measures.hpp"
#include "csg/tessellation.hpp"
#include "csg/model.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <random>

namespace csg {

using json = nlohmann::json;

namespace detail {

inline Vec3 vec3_of(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw config_error(std::string(what) + " must be a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline Vec2 vec2_of(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 2) throw config_error(std::string(what) + " must be a 2-vector");
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline Constants parse_constants(const json& j) {
  Constants k;
  if (j.is_object()) {
    detail::read_if(j, "f_cor", k.f_cor);
    detail::read_if(j, "g", k.g);
    detail::read_if(j, "gamma", k.gamma);
    detail::read_if(j, "kappa", k.kappa);
    detail::read_if(j, "delta", k.delta);
  }
  k.validate();
  return k;
}

inline Domain parse_domain(const json& j) {
  if (!j.is_object() || !j.contains("type")) throw config_error("domain needs a type");
  std::string t = j.at("type").get<std::string>();
  if (t == "box") {
    BoxDomain b{detail::vec3_of(j.at("lo"), "domain.lo"), detail::vec3_of(j.at("hi"), "domain.hi")};
    detail::read_if(j, "facets_per_side", b.facets_per_side);
    if (!((b.hi - b.lo).minCoeff() > 0)) throw config_error("box domain must have positive extent");
    if (b.facets_per_side < 1) throw config_error("facets_per_side must be positive");
    return b;
  }
  if (t == "phi_polytope") {
    PhiPolytopeDomain d;
    for (const auto& h : j.at("halfspaces")) d.halfspaces.push_back({detail::vec3_of(h.at("n"), "n"), h.at("d").get<double>()});
    if (d.halfspaces.size() < 4) throw config_error("phi_polytope needs at least four half-spaces");
    return d;
  }
  if (t == "phi_polygon2d") {
    PhiPolygon2DDomain d;
    for (const auto& h : j.at("halfplanes")) d.halfplanes.push_back({detail::vec2_of(h.at("n"), "n"), h.at("d").get<double>()});
    if (d.halfplanes.size() < 3) throw config_error("phi_polygon2d needs at least three half-planes");
    return d;
  }
  if (t == "box2d") {
    Box2DDomain b{detail::vec2_of(j.at("lo"), "domain.lo"), detail::vec2_of(j.at("hi"), "domain.hi")};
    detail::read_if(j, "segments", b.segments);
    if (!((b.hi - b.lo).minCoeff() > 0)) throw config_error("box2d domain must have positive extent");
    if (b.segments < 1) throw config_error("segments must be positive");
    return b;
  }
  throw config_error("unknown domain type '" + t + "'");
}

inline SimConfig parse_sim(const json& j) {
  SimConfig s;
  if (j.is_object()) {
    detail::read_if(j, "tau", s.tau);
    detail::read_if(j, "dt", s.dt);
    detail::read_if(j, "newton_tol", s.newton_tol);
    detail::read_if(j, "newton_max_iter", s.newton_max_iter);
    detail::read_if(j, "quadrature_degree", s.quadrature_degree);
    detail::read_if(j, "grid_resolution", s.grid_resolution);
    detail::read_if(j, "record_stride", s.record_stride);
    detail::read_if(j, "box_integrator", s.box_integrator);
    detail::read_if(j, "column_panels", s.column_panels);
    detail::read_if(j, "column_order", s.column_order);
  }
  s.validate();
  return s;
}

inline json ensemble_to_json(const Ensemble& e) {
  json seeds = json::array(), masses = json::array();
  for (std::size_t i = 0; i < e.size(); ++i) {
    seeds.push_back({e.z[i](0), e.z[i](1), e.z[i](2)});
    masses.push_back(e.m[i]);
  }
  return {{"seeds", seeds}, {"masses", masses}};
}

// Seeds as [z1, z2, z3] (or [z1, z2] for 2D runs); masses default to uniform.
inline Ensemble ensemble_from_json(const json& j) {
  Ensemble e;
  for (const auto& s : j.at("seeds")) {
    if (!s.is_array() || (s.size() != 3 && s.size() != 2)) throw config_error("seeds must be 2- or 3-vectors");
    e.z.emplace_back(s[0].get<double>(), s[1].get<double>(), s.size() == 3 ? s[2].get<double>() : 0.0);
  }
  if (e.z.empty()) throw config_error("ensemble is empty");
  if (j.contains("masses")) {
    e.m = j.at("masses").get<std::vector<double>>();
    if (e.m.size() != e.z.size()) throw config_error("masses and seeds differ in length");
    for (double m : e.m)
      if (!(m > 0)) throw config_error("masses must be positive");
  } else {
    e.m.assign(e.z.size(), 1.0 / e.z.size());
  }
  return e;
}

// Named densities for quantization: "uniform", "steady" (the stratified
// steady state of the constants on the given box) or "gaussian" with
// "center" and "width".
inline std::function<double(const Vec3&)> parse_density(const json& j, const Vec3& lo, const Vec3& hi,
                                                        const Constants& k) {
  std::string kind = j.value("density", "uniform");
  if (kind == "uniform") return [](const Vec3&) { return 1.0; };
  if (kind == "steady") {
    auto s = steady_state(BoxDomain{lo, hi}, k);
    return [s](const Vec3& x) { return s(x); };
  }
  if (kind == "gaussian") {
    Vec3 c = j.contains("center") ? detail::vec3_of(j.at("center"), "center") : Vec3(0.5 * (lo + hi));
    double w = j.value("width", 0.25);
    if (!(w > 0)) throw config_error("gaussian width must be positive");
    return [c, w](const Vec3& x) { return std::exp(-0.5 * (x - c).squaredNorm() / (w * w)); };
  }
  throw config_error("unknown density '" + kind + "'");
}

inline Ensemble quantize_from_json(const json& q, const Constants& k) {
  Vec3 lo = detail::vec3_of(q.at("lo"), "quantize.lo"), hi = detail::vec3_of(q.at("hi"), "quantize.hi");
  std::size_t N = q.at("N").get<std::size_t>();
  QuantizeOptions opt;
  opt.jitter = q.value("jitter", kDefaultJitter);
  return quantize(parse_density(q, lo, hi, k), lo, hi, N, opt);
}

// Uniform random seeds in a box with stratified heights, from the run seed.
inline Ensemble random_from_json(const json& r, std::uint64_t seed) {
  Vec3 lo = detail::vec3_of(r.at("lo"), "random.lo"), hi = detail::vec3_of(r.at("hi"), "random.hi");
  std::size_t N = r.at("N").get<std::size_t>();
  if (N == 0) throw config_error("random.N must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0, 1);
  Ensemble e;
  for (std::size_t i = 0; i < N; ++i) {
    double h = lo(2) + (hi(2) - lo(2)) * (i + 0.1 + 0.8 * U(rng)) / N;
    e.z.emplace_back(lo(0) + (hi(0) - lo(0)) * U(rng), lo(1) + (hi(1) - lo(1)) * U(rng), h);
    e.m.push_back(1.0 / N);
  }
  return e;
}

// Uniform random 2D seeds in [lo, hi]; heights below 1e-3 are redrawn since
// the 2D cost needs z2 > 0. The third coordinate is unused and zero.
inline Ensemble random2d_seeds(std::size_t N, const Vec2& lo, const Vec2& hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0, 1);
  Ensemble e;
  while (e.size() < N) {
    Vec2 z(lo(0) + (hi(0) - lo(0)) * U(rng), lo(1) + (hi(1) - lo(1)) * U(rng));
    if (z(1) < 1e-3) continue;
    e.z.emplace_back(z(0), z(1), 0.0);
    e.m.push_back(1.0 / N);
  }
  return e;
}

// Cells of a solved 2D transport diagram: Phi-space vertices, sampled
// physical outlines and areas against the targets m_i |X|.
inline json diagram2d_json(const Transport2D& T, const Ensemble& e, const VecX& w, const Constants& k) {
  std::vector<Vec2> z;
  for (const auto& s : e.z) z.emplace_back(s(0), s(1));
  auto ev = T.integrate(w, z);
  auto lift = power_lift2d(w, z, k);
  json cells = json::array();
  double worst = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    json pieces = json::array();
    for (const auto& Q : T.cell(lift, i)) {
      json pv = json::array(), xv = json::array();
      for (std::size_t v = 0; v < Q.v.size(); ++v) {
        pv.push_back({Q.v[v](0), Q.v[v](1)});
        // Straight Phi-space edges are parabolic arcs physically; sample them.
        const Vec2 &a = Q.v[v], &b = Q.v[(v + 1) % Q.v.size()];
        for (int s = 0; s < 8; ++s) {
          Vec2 x = phi2d(a + (b - a) * (s / 8.0), k);
          xv.push_back({x(0), x(1)});
        }
      }
      pieces.push_back({{"phi_vertices", pv}, {"physical_outline", xv}});
    }
    worst = std::max(worst, std::abs(ev.area(i) - e.m[i] * T.area()));
    cells.push_back({{"index", i}, {"seed", {z[i](0), z[i](1)}}, {"area", ev.area(i)}, {"pieces", pieces}});
  }
  return {{"N", e.size()}, {"domain_area", T.area()}, {"w", std::vector<double>(w.data(), w.data() + w.size())},
          {"max_area_error", worst}, {"cells", cells}};
}

struct RunConfig {
  Constants constants;
  std::optional<Domain> domain;
  std::optional<Ensemble> ensemble;
  SimConfig sim;
  json raw;
};

inline RunConfig parse_run_config(const json& j, std::uint64_t seed) {
  if (!j.is_object()) throw config_error("config must be a JSON object");
  RunConfig rc;
  rc.raw = j;
  try {
    rc.constants = parse_constants(j.value("constants", json::object()));
    if (j.contains("domain")) rc.domain = parse_domain(j.at("domain"));
    if (j.contains("ensemble"))
      rc.ensemble = ensemble_from_json(j.at("ensemble"));
    else if (j.contains("quantize"))
      rc.ensemble = quantize_from_json(j.at("quantize"), rc.constants);
    else if (j.contains("random"))
      rc.ensemble = random_from_json(j.at("random"), seed);
    rc.sim = parse_sim(j.value("sim", json::object()));
  } catch (const json::exception& ex) {
    throw config_error(std::string("config: ") + ex.what());
  }
  return rc;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& ex) {
    throw config_error(path + ": " + ex.what());
  }
}

}  // namespace csg
