#include <catch_amalgamated.hpp>

#include "csg/measures.hpp"

#include <random>

using namespace csg;

namespace {

Ensemble random_measure(std::size_t n, std::mt19937_64& rng, bool equal) {
  std::uniform_real_distribution<double> U(0, 1);
  Ensemble e;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    e.z.emplace_back(U(rng), U(rng), 1 + U(rng));
    e.m.push_back(equal ? 1.0 : 0.1 + U(rng));
    s += e.m.back();
  }
  for (double& m : e.m) m /= s;
  return e;
}

double brute_force(const Ensemble& a, const Ensemble& b) {
  std::vector<std::size_t> p(a.size());
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0;
    for (std::size_t i = 0; i < p.size(); ++i) c += a.m[i] * (a.z[i] - b.z[p[i]]).norm();
    best = std::min(best, c);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

void check_marginals(const TransportCoupling& c, const Ensemble& a, const Ensemble& b) {
  std::vector<double> row(a.size(), 0), col(b.size(), 0);
  double value = 0;
  for (const auto& en : c.entries) {
    CHECK(en.mass > 0);
    row[en.i] += en.mass;
    col[en.j] += en.mass;
    value += en.mass * (a.z[en.i] - b.z[en.j]).norm();
  }
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(row[i] - a.m[i]) < 1e-12);
  for (std::size_t j = 0; j < b.size(); ++j) CHECK(std::abs(col[j] - b.m[j]) < 1e-12);
  CHECK(value == Catch::Approx(c.value).epsilon(1e-14));
}

}  // namespace

TEST_CASE("W1 examples") {
  Ensemble a{{Vec3(0, 0, 1), Vec3(1, 0, 1)}, {0.5, 0.5}};
  CHECK(w1_distance(a, a).value == 0.0);
  Ensemble p{{Vec3(0, 0, 1)}, {1.0}}, q{{Vec3(3, 4, 1)}, {1.0}};
  CHECK(w1_distance(p, q).value == Catch::Approx(5.0));
  Ensemble bad{{Vec3(0, 0, 1)}, {0.9}};
  CHECK_THROWS_AS(w1_distance(p, bad), config_error);
}

TEST_CASE("W1 equals the permutation minimum for equal masses") {
  std::mt19937_64 rng(3);
  for (std::size_t n = 1; n <= 4; ++n)
    for (int t = 0; t < 50; ++t) {
      auto a = random_measure(n, rng, true), b = random_measure(n, rng, true);
      auto c = w1_distance(a, b);
      CHECK(std::abs(c.value - brute_force(a, b)) <= 1e-12);
      check_marginals(c, a, b);
    }
}

TEST_CASE("W1 on a line equals the integral of the CDF gap") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(0, 1);
  for (int t = 0; t < 50; ++t) {
    Ensemble a, b;
    Vec3 dir = Vec3(U(rng) - 0.5, U(rng) - 0.5, U(rng) - 0.5).normalized();
    std::vector<std::pair<double, double>> events;  // (position, signed mass)
    for (int s = 0; s < 7; ++s) {
      double x = U(rng);
      a.z.push_back(Vec3(0, 0, 1) + x * dir);
      a.m.push_back(1.0 / 7);
    }
    double tot = 0;
    for (int s = 0; s < 5; ++s) {
      b.m.push_back(0.2 + U(rng));
      tot += b.m.back();
    }
    for (int s = 0; s < 5; ++s) {
      b.m[s] /= tot;
      double x = U(rng);
      b.z.push_back(Vec3(0, 0, 1) + x * dir);
    }
    for (std::size_t s = 0; s < a.size(); ++s) events.push_back({(a.z[s] - Vec3(0, 0, 1)).dot(dir), a.m[s]});
    for (std::size_t s = 0; s < b.size(); ++s) events.push_back({(b.z[s] - Vec3(0, 0, 1)).dot(dir), -b.m[s]});
    std::sort(events.begin(), events.end());
    double F = 0, sum = 0;
    for (std::size_t s = 0; s + 1 < events.size(); ++s) {
      F += events[s].second;
      sum += std::abs(F) * (events[s + 1].first - events[s].first);
    }
    auto c = w1_distance(a, b);
    CHECK(std::abs(c.value - sum) <= 1e-12);
    check_marginals(c, a, b);
  }
}

TEST_CASE("W1 is symmetric and satisfies the triangle inequality") {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    auto a = random_measure(12, rng, false), b = random_measure(9, rng, false), c = random_measure(15, rng, false);
    double ab = w1_distance(a, b).value, ba = w1_distance(b, a).value;
    CHECK(std::abs(ab - ba) < 1e-12);
    CHECK(ab <= w1_distance(a, c).value + w1_distance(c, b).value + 1e-12);
    CHECK(ab > 0);
  }
}

TEST_CASE("W1 rejects oversized inputs") {
  std::mt19937_64 rng(1);
  auto big = random_measure(513, rng, true), small = random_measure(3, rng, true);
  CHECK_THROWS_AS(w1_distance(big, small), config_error);
}

TEST_CASE("quantize: uniform box on a 2x2x2 grid") {
  QuantizeOptions opt;
  opt.jitter = 0;
  auto e = quantize([](const Vec3&) { return 1.0; }, Vec3(0, 0, 1), Vec3(1, 1, 2), 8, opt);
  REQUIRE(e.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(e.m[i] == Catch::Approx(0.125).epsilon(1e-14));
    for (int a = 0; a < 3; ++a) {
      double frac = e.z[i](a) - (a == 2 ? 1.0 : 0.0);
      CHECK((std::abs(frac - 0.25) < 1e-14 || std::abs(frac - 0.75) < 1e-14));
    }
  }
  Constants k;
  auto jittered = quantize([](const Vec3&) { return 1.0; }, Vec3(0, 0, 1), Vec3(1, 1, 2), 8);
  CHECK(validate_ensemble(jittered, k).well_prepared);
}

TEST_CASE("quantize: a single sample is a single Dirac") {
  auto e = quantize(std::vector<Vec3>{Vec3(0.3, 0.4, 2)}, {1.0}, 10);
  REQUIRE(e.size() == 1);
  CHECK(e.m[0] == 1.0);
  CHECK((e.z[0] - Vec3(0.3, 0.4, 2)).norm() == 0.0);
}

TEST_CASE("quantize: zero mass and empty cells") {
  CHECK_THROWS_AS(quantize([](const Vec3&) { return 0.0; }, Vec3(0, 0, 1), Vec3(1, 1, 2), 8), config_error);
  // Density supported on half the box: empty cells are dropped.
  auto e = quantize([](const Vec3& x) { return x(0) < 0.5 ? 1.0 : 0.0; }, Vec3(0, 0, 1), Vec3(1, 1, 2), 8);
  CHECK(e.size() == 4);
  Constants k;
  CHECK(validate_ensemble(e, k).well_prepared);
}

TEST_CASE("quantize: W1 to a fine sample decreases with N") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> U(0, 1);
  Ensemble fine;
  for (int s = 0; s < 500; ++s) {
    fine.z.emplace_back(U(rng), U(rng), 1 + U(rng));
    fine.m.push_back(1.0 / 500);
  }
  double prev = std::numeric_limits<double>::infinity();
  Constants k;
  for (std::size_t N : {16, 64, 256}) {
    auto q = quantize([](const Vec3&) { return 1.0; }, Vec3(0, 0, 1), Vec3(1, 1, 2), N);
    CHECK(validate_ensemble(q, k).well_prepared);
    double d = w1_distance(q, fine).value;
    CHECK(d < prev);
    prev = d;
  }
}
