// csg: command-line driver for the semi-geostrophic particle model.
//
// Exit codes: 0 success, 1 configuration or validation error, 2 solver
// non-convergence. Output files are written to a temporary name and renamed.

#include "csg/analytic.hpp"
#include "csg/config.hpp"
#include "csg/dynamics.hpp"
#include "csg/measures.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace csg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitSolver = 2;

struct solver_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;
  int threads = 1;
  std::string backend = "exact";
  std::vector<std::string> inputs;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream o(tmp, std::ios::binary);
    if (!o) throw config_error("cannot write " + tmp.string());
    o << text;
    if (!o) throw config_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

json vec_json(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
json vec_json(const Vec3& v) { return {v(0), v(1), v(2)}; }

using Backend3D = std::variant<PolytopeBackend, ColumnBackend>;

Backend3D make_backend(const Domain& d, const Constants& k, const SimConfig& s, int threads) {
  BackendOptions bo;
  bo.quadrature_degree = s.quadrature_degree;
  bo.threads = threads;
  bo.column_panels = s.column_panels;
  bo.column_order = s.column_order;
  if (auto* b = std::get_if<BoxDomain>(&d)) {
    if (s.box_integrator == "column") return ColumnBackend(*b, k, bo);
    return PolytopeBackend(*b, k, bo);
  }
  if (auto* p = std::get_if<PhiPolytopeDomain>(&d)) return PolytopeBackend(*p, k, bo);
  throw config_error("this command needs a 3D domain (box or phi_polytope)");
}

const Domain& need_domain(const RunConfig& rc) {
  if (!rc.domain) throw config_error("config has no domain");
  return *rc.domain;
}

const Ensemble& need_ensemble(const RunConfig& rc) {
  if (!rc.ensemble) throw config_error("config has no ensemble, quantize or random section");
  return *rc.ensemble;
}

RunConfig load(const Options& o) {
  if (o.config.empty()) throw config_error("--config is required");
  return parse_run_config(read_json_file(o.config), o.seed);
}

// ---- simulate ---------------------------------------------------------------

std::string trajectory_csv(const TrajectoryRecord& r) {
  std::string s = "t,i,z1,z2,z3,C1,C2,C3,E,newton_iters\n";
  for (std::size_t k = 0; k < r.size(); ++k)
    for (std::size_t i = 0; i < r.z[k].size(); ++i) {
      const Vec3 &z = r.z[k][i], &c = r.C[k][i];
      s += num(r.t[k]) + "," + std::to_string(i) + "," + num(z(0)) + "," + num(z(1)) + "," + num(z(2)) + "," +
           num(c(0)) + "," + num(c(1)) + "," + num(c(2)) + "," + num(r.E[k]) + "," + std::to_string(r.iters[k]) +
           "\n";
    }
  return s;
}

int cmd_simulate(const Options& o) {
  RunConfig rc = load(o);
  if (o.backend == "grid") throw config_error("simulate needs the exact backend (the grid oracle has no Hessian)");
  const Ensemble& e = need_ensemble(rc);
  Backend3D B = make_backend(need_domain(rc), rc.constants, rc.sim, o.threads);
  TrajectoryRecord rec = std::visit([&](const auto& b) { return simulate(b, e, rc.sim); }, B);
  fs::path out(o.out);
  json rep = {{"complete", rec.complete}, {"diagnostic", rec.diagnostic}, {"records", rec.size()},
              {"backend", std::visit([](const auto& b) { return b.name(); }, B)}, {"radius", rec.radius}};
  if (rec.size() > 0) {
    auto c = conservation_report(rec);
    rep["energy_drift"] = c.energy_drift;
    rep["position_bound_violation"] = c.position_bound_violation;
    rep["speed_bound_violation"] = c.speed_bound_violation;
    rep["z3_drift"] = c.z3_drift;
    rep["orthogonality"] = c.orthogonality;
  }
  if (!rec.complete) {
    write_atomic(out / "trajectory.csv.partial", trajectory_csv(rec));
    write_atomic(out / "report.json", rep.dump(2) + "\n");
    throw solver_failure(rec.diagnostic);
  }
  write_atomic(out / "trajectory.csv", trajectory_csv(rec));
  write_atomic(out / "report.json", rep.dump(2) + "\n");
  std::cout << "simulated " << e.size() << " seeds to t=" << rec.t.back() << ", energy drift "
            << rep["energy_drift"].get<double>() << "\n";
  return kExitOk;
}

// ---- solve-dual -------------------------------------------------------------

int cmd_solve_dual(const Options& o) {
  RunConfig rc = load(o);
  const Ensemble& e = need_ensemble(rc);
  const Domain& d = need_domain(rc);
  Backend3D B = make_backend(d, rc.constants, rc.sim, o.threads);
  SolverOptions opt;
  opt.tol = rc.sim.tolerance_for(rc.constants);
  opt.max_iter = rc.sim.newton_max_iter;
  DualReport r = std::visit([&](const auto& b) { return solve_with_gap(b, e, nullptr, opt); }, B);
  json j = {{"w", vec_json(r.w)},           {"G", r.G},        {"residual", vec_json(r.residual)},
            {"iters", r.iterations},        {"gap", r.gap},    {"converged", r.converged},
            {"backend", r.backend},         {"message", r.message}};
  if (o.backend == "grid" && r.converged) {
    // The grid oracle re-integrates at the exact optimum; it is a referee,
    // not a solver.
    double h = 1.0 / rc.sim.grid_resolution;
    auto* box = std::get_if<BoxDomain>(&d);
    GridOracle G = box ? GridOracle(*box, rc.constants, h) : GridOracle(std::get<PhiPolytopeDomain>(d), rc.constants, h);
    CellIntegrals g = G.integrate(r.w, e);
    json cent = json::array();
    for (std::size_t i = 0; i < e.size(); ++i) cent.push_back(vec_json(Vec3(g.moment[i] / g.mass(i))));
    j["grid"] = {{"h", h}, {"mass", vec_json(g.mass)}, {"centroid", cent}};
  }
  write_atomic(fs::path(o.out) / "dual.json", j.dump(2) + "\n");
  if (!r.converged) throw solver_failure("dual solve did not converge: " + r.message);
  std::cout << "converged in " << r.iterations << " iterations, max residual " << r.max_residual() << "\n";
  return kExitOk;
}

// ---- tessellate -------------------------------------------------------------

json polytope_json(const Polytope& P, const Constants& k) {
  std::vector<Vec3> verts;
  std::vector<std::vector<int>> rings;
  std::vector<int> labels;
  P.export_mesh(verts, rings, &labels);
  json pv = json::array(), xv = json::array();
  for (const auto& v : verts) {
    pv.push_back(vec_json(v));
    xv.push_back(vec_json(phi(v, k)));
  }
  return {{"phi_vertices", pv}, {"physical_vertices", xv}, {"faces", rings}, {"face_labels", labels}};
}

int cmd_tessellate(const Options& o) {
  RunConfig rc = load(o);
  const Ensemble& e = need_ensemble(rc);
  const Domain& d = need_domain(rc);
  BackendOptions bo;
  bo.quadrature_degree = rc.sim.quadrature_degree;
  bo.threads = o.threads;
  std::optional<PolytopeBackend> B;
  if (auto* b = std::get_if<BoxDomain>(&d)) B.emplace(*b, rc.constants, bo);
  else if (auto* p = std::get_if<PhiPolytopeDomain>(&d)) B.emplace(*p, rc.constants, bo);
  else throw config_error("tessellate needs a 3D domain; use tessellate-2d");
  SolverOptions opt;
  opt.tol = rc.sim.tolerance_for(rc.constants);
  opt.max_iter = rc.sim.newton_max_iter;
  DualReport r = solve_w_star(*B, e, nullptr, opt);
  if (!r.converged) throw solver_failure("dual solve did not converge: " + r.message);
  LaguerreDiagram D = B->build_diagram(r.w, e);
  json cells = json::array();
  for (std::size_t i = 0; i < e.size(); ++i) {
    json pieces = json::array();
    for (const auto& P : D.cells[i].pieces) pieces.push_back(polytope_json(P, rc.constants));
    cells.push_back({{"index", i},
                     {"seed", vec_json(e.z[i])},
                     {"mass", D.mass(i)},
                     {"volume", D.cells[i].volume},
                     {"neighbors", D.cells[i].neighbors},
                     {"pieces", pieces}});
  }
  json j = {{"backend", D.backend}, {"w", vec_json(r.w)}, {"cells", cells},
            {"note", "pieces are convex polytopes in Phi-coordinates; the positivity cut is not applied"}};
  write_atomic(fs::path(o.out) / "diagram.json", j.dump(1) + "\n");
  std::cout << "tessellated " << e.size() << " cells\n";
  return kExitOk;
}

// ---- tessellate-2d ----------------------------------------------------------

// 2D seeds: explicit "ensemble" (2-vectors) or "random2d": {N, lo, hi}; random
// heights below 1e-3 are redrawn since the 2D cost needs z2 > 0.
Ensemble seeds_2d(const RunConfig& rc, std::uint64_t seed) {
  const json& j = rc.raw;
  if (j.contains("random2d")) {
    const json& r = j.at("random2d");
    std::size_t N = r.at("N").get<std::size_t>();
    if (N == 0) throw config_error("random2d.N must be positive");
    Vec2 lo(0, 0), hi(1, 1);
    if (auto* b = std::get_if<Box2DDomain>(&*rc.domain)) lo = b->lo, hi = b->hi;
    if (r.contains("lo")) lo = detail::vec2_of(r.at("lo"), "random2d.lo");
    if (r.contains("hi")) hi = detail::vec2_of(r.at("hi"), "random2d.hi");
    return random2d_seeds(N, lo, hi, seed);
  }
  if (!rc.ensemble) throw config_error("tessellate-2d needs an ensemble or a random2d section");
  for (const auto& z : rc.ensemble->z)
    if (!(z(1) > 0)) throw config_error("2D seeds need a positive second coordinate");
  return *rc.ensemble;
}

int cmd_tessellate_2d(const Options& o) {
  RunConfig rc = load(o);
  const Domain& d = need_domain(rc);
  std::optional<Transport2D> T;
  if (auto* b = std::get_if<Box2DDomain>(&d)) T.emplace(*b, rc.constants);
  else if (auto* p = std::get_if<PhiPolygon2DDomain>(&d)) T.emplace(*p, rc.constants);
  else throw config_error("tessellate-2d needs a 2D domain (box2d or phi_polygon2d)");
  Ensemble e = seeds_2d(rc, o.seed);
  normalize_masses(e);
  SolverOptions opt;
  opt.tol = rc.sim.newton_tol > 0 ? rc.sim.newton_tol : 1e-12;
  opt.max_iter = rc.sim.newton_max_iter;
  Transport2DAdapter A(*T, rc.constants);
  DualReport r = solve_transport_weights(A, e, opt);
  if (!r.converged) throw solver_failure("transport weights did not converge: " + r.message);

  json j = diagram2d_json(*T, e, r.w, rc.constants);
  double worst = j["max_area_error"].get<double>();
  write_atomic(fs::path(o.out) / "diagram2d.json", j.dump(1) + "\n");
  std::cout << "N=" << e.size() << " max |area - m_i |X|| = " << worst << "\n";
  return kExitOk;
}

// ---- quantize / w1 ----------------------------------------------------------

int cmd_quantize(const Options& o) {
  RunConfig rc = load(o);
  if (!rc.raw.contains("quantize")) throw config_error("config has no quantize section");
  const Ensemble& e = need_ensemble(rc);
  auto rep = validate_ensemble(e, rc.constants);
  json j = ensemble_to_json(e);
  j["well_prepared"] = rep.well_prepared;
  write_atomic(fs::path(o.out) / "ensemble.json", j.dump(2) + "\n");
  std::cout << "quantized into " << e.size() << " seeds\n";
  return kExitOk;
}

int cmd_w1(const Options& o) {
  if (o.inputs.size() != 2) throw config_error("w1 needs two ensemble files");
  Ensemble a = ensemble_from_json(read_json_file(o.inputs[0]));
  Ensemble b = ensemble_from_json(read_json_file(o.inputs[1]));
  auto c = w1_distance(a, b);
  json j = {{"distance", c.value}, {"coupling_nnz", c.entries.size()}};
  write_atomic(fs::path(o.out) / "w1.json", j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return kExitOk;
}

// ---- validation tables ------------------------------------------------------

struct Row {
  std::string check;
  double value, threshold;
  bool pass;
};

bool print_table(const std::vector<Row>& rows) {
  bool ok = true;
  std::printf("%-34s %14s %14s  %s\n", "check", "value", "threshold", "result");
  for (const auto& r : rows) {
    std::printf("%-34s %14.6e %14.6e  %s\n", r.check.c_str(), r.value, r.threshold, r.pass ? "PASS" : "FAIL");
    ok = ok && r.pass;
  }
  return ok;
}

int cmd_validate_ellipse(const Options& o) {
  RunConfig rc = load(o);
  const json& el = rc.raw.value("ellipse", json::object());
  double a = el.value("a", 1.0), b = el.value("b", 1.0), h = el.value("h", 1.0);
  Vec3 zb = el.contains("z_bar") ? detail::vec3_of(el.at("z_bar"), "ellipse.z_bar") : Vec3(0.1, 0, 10);
  auto ref = ellipse_reference(a, b, h, zb, rc.constants);
  const auto& p = ref.params();
  std::vector<Row> rows{{"height margin", p.height_margin, 0.0, p.height_ok},
                        {"oscillation margin", p.oscillation_margin, 0.0, p.oscillation_ok}};
  if (!p.valid()) {
    print_table(rows);
    throw config_error("ellipse preconditions fail");
  }
  SimConfig sim = rc.sim;
  if (!rc.raw.contains("sim") || !rc.raw["sim"].contains("dt")) sim.dt = 1e-3;
  sim.tau = el.value("periods", 1.0) * p.period();
  sim.box_integrator = "column";
  BackendOptions bo;
  bo.threads = o.threads;
  bo.column_order = sim.column_order;
  ColumnBackend C(BoxDomain{Vec3(-a, -b, 0), Vec3(a, b, h)}, rc.constants, bo);
  auto rec = simulate(C, Ensemble{{zb}, {1.0}}, sim);
  std::string csv = "t,z1_ref,z2_ref,z1_sim,z2_sim,error\n";
  double err = 0;
  for (std::size_t s = 0; s < rec.size(); ++s) {
    Vec3 zr = ref.z(rec.t[s]);
    double e = (rec.z[s][0] - zr).norm();
    err = std::max(err, e);
    csv += num(rec.t[s]) + "," + num(zr(0)) + "," + num(zr(1)) + "," + num(rec.z[s][0](0)) + "," +
           num(rec.z[s][0](1)) + "," + num(e) + "\n";
  }
  write_atomic(fs::path(o.out) / "ellipse.csv", csv);
  if (!rec.complete) throw solver_failure(rec.diagnostic);
  auto c = conservation_report(rec);
  rows.push_back({"max trajectory error", err, 1e-6, err <= 1e-6});
  rows.push_back({"z3 drift", c.z3_drift, 1e-12, c.z3_drift <= 1e-12});
  rows.push_back({"relative energy drift", c.energy_drift, 1e-9, c.energy_drift <= 1e-9});
  return print_table(rows) ? kExitOk : kExitConfig;
}

int cmd_validate_steady(const Options& o) {
  RunConfig rc = load(o);
  auto* box = rc.domain ? std::get_if<BoxDomain>(&*rc.domain) : nullptr;
  if (!box) throw config_error("validate-steady needs a box domain");
  auto s = steady_state(*box, rc.constants);
  double minsig = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 64; ++i) minsig = std::min(minsig, s(Vec3(0, 0, box->lo(2) + (box->hi(2) - box->lo(2)) * i / 64.0)));
  std::vector<Row> rows{{"ell*", s.ell_star(), 0.0, true},
                        {"|mass - 1|", std::abs(s.mass() - 1), 1e-10, std::abs(s.mass() - 1) <= 1e-10},
                        {"min density", minsig, 0.0, minsig >= 0}};
  std::string csv = "N,seeds,sup_w1\n";
  const json& st = rc.raw.value("steady", json::object());
  if (st.contains("N")) {
    double prev = std::numeric_limits<double>::infinity();
    BackendOptions bo;
    bo.threads = o.threads;
    bo.quadrature_degree = rc.sim.quadrature_degree;
    PolytopeBackend B(*box, rc.constants, bo);
    for (std::size_t N : st.at("N").get<std::vector<std::size_t>>()) {
      Ensemble e = quantize([&](const Vec3& x) { return s(x); }, box->lo, box->hi, N);
      auto rec = simulate(B, e, rc.sim);
      if (!rec.complete) throw solver_failure(rec.diagnostic);
      Ensemble a0 = e, at = e;
      double sup = 0;
      for (std::size_t k = 0; k < rec.size(); ++k) {
        at.z = rec.z[k];
        sup = std::max(sup, w1_distance(a0, at).value);
      }
      csv += std::to_string(N) + "," + std::to_string(e.size()) + "," + num(sup) + "\n";
      rows.push_back({"sup_t W1, N=" + std::to_string(N), sup, prev, sup < prev});
      prev = sup;
    }
  }
  write_atomic(fs::path(o.out) / "steady.csv", csv);
  return print_table(rows) ? kExitOk : kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Semi-geostrophic particle model.\n"
      "Outputs: trajectory.csv (t,i,z1,z2,z3,C1,C2,C3,E,newton_iters), report.json,\n"
      "dual.json {w,G,residual,iters,gap}, diagram.json, diagram2d.json, ensemble.json,\n"
      "w1.json {distance,coupling_nnz}, ellipse.csv, steady.csv."};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* c, bool needs_config = true) {
    if (needs_config) c->add_option("--config", o.config, "JSON configuration file")->required();
    c->add_option("--out", o.out, "output directory");
    c->add_option("--seed", o.seed, "seed for randomized inputs");
    c->add_option("--threads", o.threads, "worker threads for cell integrals")->check(CLI::PositiveNumber);
    c->add_option("--backend", o.backend, "exact or grid")->check(CLI::IsMember({"exact", "grid"}));
  };
  std::map<std::string, std::function<int(const Options&)>> commands{
      {"simulate", cmd_simulate},         {"solve-dual", cmd_solve_dual},
      {"tessellate", cmd_tessellate},     {"tessellate-2d", cmd_tessellate_2d},
      {"quantize", cmd_quantize},         {"w1", cmd_w1},
      {"validate-ellipse", cmd_validate_ellipse}, {"validate-steady", cmd_validate_steady}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, fn] : commands) {
    auto* c = app.add_subcommand(name);
    common(c, name != "w1");
    if (name == "w1") c->add_option("inputs", o.inputs, "two ensemble JSON files")->expected(2)->required();
    subs[name] = c;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  try {
    for (const auto& [name, c] : subs)
      if (c->parsed()) return commands[name](o);
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const solver_failure& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
