#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "shellopt/errors.hpp"
#include "shellopt/leader.hpp"
#include "shellopt/roof.hpp"

using namespace shellopt;

namespace {

struct Problem {
  ShellMesh mesh;
  ReferenceQuantities ref;
  ElasticComponents comp;
  ForceModel model;
  std::vector<char> chi;
  Eigen::VectorXd weights;
};

Problem roof_problem(int subdivisions = 6, ElasticParams params = {}) {
  RoofShape shape;
  shape.subdivisions = subdivisions;
  Problem p;
  p.mesh = select_dirichlet(build_topology(make_roof_mesh(shape)), GroundPlaneDirichlet{0.0});
  p.ref = reference_quantities(p.mesh);
  p.comp = assemble_components(p.mesh, p.ref, params);
  p.model = build_force_basis(p.mesh, vertex_normals(p.mesh), 0.0015, 0.003, 1e-4);
  p.chi = tracking_indicator(p.mesh, FullTracking{});
  p.weights = tracking_weights(p.comp, p.chi);
  return p;
}

// Mean of N(1, s^2) truncated to [a, b] by composite Simpson quadrature.
std::pair<double, double> truncated_normal_moments(double s, double a, double b) {
  const int n = 20000;
  const double h = (b - a) / n;
  double m0 = 0, m1 = 0, m2 = 0;
  for (int i = 0; i <= n; ++i) {
    const double x = a + i * h;
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    const double d = std::exp(-0.5 * (x - 1) * (x - 1) / (s * s));
    m0 += w * d;
    m1 += w * d * x;
    m2 += w * d * x * x;
  }
  const double mean = m1 / m0;
  return {mean, m2 / m0 - mean * mean};
}

}  // namespace

TEST_CASE("sample_perturbation") {
  const std::vector<char> frozen{0, 1, 0, 0, 1, 0};
  NoiseModel noise;
  noise.seed = 42;

  SUBCASE("sigma zero is the identity") {
    noise.sigma = 0.0;
    CHECK(sample_perturbation(noise, 3, 7, frozen) == Eigen::VectorXd::Ones(6));
  }
  SUBCASE("frozen faces are unperturbed, draws are deterministic and distinct per counter") {
    const Eigen::VectorXd a = sample_perturbation(noise, 0, 0, frozen);
    CHECK(a[1] == 1.0);
    CHECK(a[4] == 1.0);
    CHECK(a == sample_perturbation(noise, 0, 0, frozen));
    CHECK(a != sample_perturbation(noise, 0, 1, frozen));
    CHECK(a != sample_perturbation(noise, 1, 0, frozen));
    NoiseModel other = noise;
    other.seed = 43;
    CHECK(a != sample_perturbation(other, 0, 0, frozen));
  }
  SUBCASE("truncation") {
    noise.sigma = 2.0;
    for (int k = 0; k < 100000; ++k) {
      const double x = truncated_normal_draw(noise, 0, k, 0);
      REQUIRE(x >= noise.lower);
      REQUIRE(x <= noise.upper);
    }
  }
}

TEST_CASE("truncated normal moments match quadrature") {
  for (double sigma : {0.1, 0.5}) {
    NoiseModel noise;
    noise.sigma = sigma;
    noise.seed = 7;
    const int n = 200000;
    double s1 = 0, s2 = 0;
    for (int k = 0; k < n; ++k) {
      const double x = truncated_normal_draw(noise, 0, k, 0);
      s1 += x;
      s2 += x * x;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    const auto [tm, tv] = truncated_normal_moments(sigma, noise.lower, noise.upper);
    CHECK(std::abs(mean - tm) < 4.0 * std::sqrt(tv / n));
    CHECK(std::abs(var - tv) < 0.02 * tv);
  }
}

TEST_CASE("tracking_indicator") {
  const Problem p = roof_problem();
  const auto full = tracking_indicator(p.mesh, FullTracking{});
  for (int v = 0; v < p.mesh.num_vertices(); ++v) CHECK(full[v] == !p.mesh.is_dirichlet[v]);

  const auto plateau = tracking_indicator(p.mesh, PlateauTracking{0.5});
  int count = 0;
  for (int v = 0; v < p.mesh.num_vertices(); ++v) {
    const auto& x = p.mesh.vertices[v];
    const bool inside = std::max(std::abs(x.x()), std::abs(x.y())) <= 5.0 + 1e-12;
    CHECK(plateau[v] == inside);
    count += plateau[v];
  }
  CHECK(count == 9);

  const auto single = tracking_indicator(p.mesh, ExplicitTracking{{24}});
  CHECK(std::count(single.begin(), single.end(), 1) == 1);
  CHECK_THROWS_AS(tracking_indicator(p.mesh, ExplicitTracking{{p.mesh.dirichlet.front()}}), InputError);
  CHECK_THROWS_AS(tracking_indicator(p.mesh, ExplicitTracking{{-1}}), InputError);
}

TEST_CASE("tracking_cost") {
  const Problem p = roof_problem();
  std::mt19937_64 rng(11);
  const Eigen::VectorXd u = testing::random_vector(p.mesh.num_faces(), rng, 0.05, 0.15);
  CHECK(tracking_cost(p.comp, u, Eigen::VectorXd::Zero(3 * p.mesh.num_vertices()), p.chi) == 0.0);

  const Eigen::VectorXd f = p.model.basis * Eigen::Vector3d(0.001, 0.0005, 0.002);
  const StiffnessFactorization H(assemble_H(p.comp, u));
  const Eigen::VectorXd y = p.comp.extend_to_full(solve_state(H, p.comp.mass_reduced, p.comp.restrict_to_free(f)));
  CHECK(tracking_cost(p.comp, u, f, p.chi) ==
        doctest::Approx(y.dot(p.comp.mass_full.cwiseProduct(y))).epsilon(1e-12));

  const int v = 24;
  const auto one = tracking_indicator(p.mesh, ExplicitTracking{{v}});
  CHECK(tracking_cost(p.comp, u, f, one) ==
        doctest::Approx(p.ref.vertex_areas[v] * y.segment<3>(3 * v).squaredNorm()).epsilon(1e-12));
}

TEST_CASE("hypergradient matches frozen-sample finite differences") {
  const Problem p = roof_problem(6);
  REQUIRE(p.mesh.num_faces() <= 100);
  std::mt19937_64 rng(2024);
  NoiseModel noise;
  noise.sigma = 0.1;
  noise.seed = 5;
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd u = testing::random_vector(p.mesh.num_faces(), rng, 0.05, 0.15);
    const Eigen::VectorXd v = sample_perturbation(noise, 0, trial, p.comp.frozen_face);
    // The oracle has to resolve F* far below the perturbation of u.
    SampleOptions opts;
    opts.newton.grad_tol = 1e-13;
    const SampleResult base = evaluate_sample(p.comp, u, v, p.model, p.weights, default_seeds(p.model), opts);
    REQUIRE(base.follower.converged);
    CHECK_FALSE(base.degenerate_follower);

    SampleOptions cost_only = opts;
    cost_only.with_gradient = false;
    const std::vector<Eigen::VectorXd> warm{base.follower.F};
    for (int t = 0; t < p.mesh.num_faces(); ++t) {
      if (p.comp.frozen_face[t]) {
        CHECK(base.gradient[t] == 0.0);
        continue;
      }
      const double h = 1e-6 * u[t];
      Eigen::VectorXd up = u, um = u;
      up[t] += h;
      um[t] -= h;
      const double fd = (evaluate_sample(p.comp, up, v, p.model, p.weights, warm, cost_only).cost -
                         evaluate_sample(p.comp, um, v, p.model, p.weights, warm, cost_only).cost) /
                        (2 * h);
      if (std::abs(base.gradient[t]) > 1e-8) {
        const double rel = std::abs(fd - base.gradient[t]) / std::abs(base.gradient[t]);
        worst = std::max(worst, rel);
        INFO("trial " << trial << " face " << t << " grad " << base.gradient[t] << " fd " << fd);
        CHECK(rel < 1e-3);
      }
    }
  }
  MESSAGE("worst relative hypergradient error: " << worst);
}

TEST_CASE("frozen-force hypergradient matches differences at fixed F") {
  const Problem p = roof_problem(6);
  std::mt19937_64 rng(9);
  const Eigen::VectorXd u = testing::random_vector(p.mesh.num_faces(), rng, 0.05, 0.15);
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(p.mesh.num_faces());
  SampleOptions opts;
  opts.mode = HypergradientMode::kFrozen;
  const SampleResult base = evaluate_sample(p.comp, u, v, p.model, p.weights, default_seeds(p.model), opts);
  const Eigen::VectorXd f = p.model.basis * base.follower.F;
  for (int t = 0; t < p.mesh.num_faces(); t += 5) {
    if (p.comp.frozen_face[t]) continue;
    const double h = 1e-4 * u[t];
    Eigen::VectorXd up = u, um = u;
    up[t] += h;
    um[t] -= h;
    const double fd = (tracking_cost(p.comp, up, f, p.chi) - tracking_cost(p.comp, um, f, p.chi)) / (2 * h);
    CHECK(fd == doctest::Approx(base.gradient[t]).epsilon(1e-5));
  }
}

TEST_CASE("hypergradient is mirror-equivariant on a symmetric membrane problem") {
  // Dome over [0,1]^2 with alternating diagonals: symmetric under x -> 1 - x.
  const int n = 4;
  ShellMesh m = testing::grid_mesh(n, 1.0, [](double x, double y) {
    return 0.6 - (x - 0.5) * (x - 0.5) - (y - 0.5) * (y - 0.5);
  });
  std::vector<int> boundary;
  for (int v = 0; v < m.num_vertices(); ++v) {
    const Vec3& x = m.vertices[v];
    if (x.x() == 0.0 || x.y() == 0.0 || x.x() == 1.0 || x.y() == 1.0) boundary.push_back(v);
  }
  m = select_dirichlet(std::move(m), ExplicitDirichlet{boundary});
  ElasticParams params;
  params.gamma = 0.0;
  const auto ref = reference_quantities(m);
  const auto comp = assemble_components(m, ref, params);
  // Vertical load only: the mirror maps the force set to itself.
  ForceModel model = build_force_basis(m, vertex_normals(m), 0.5, 1.0, 1e-4);
  model.basis.col(0).setZero();
  model.basis.col(1).setZero();
  const auto weights = tracking_weights(comp, tracking_indicator(m, FullTracking{}));
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(m.num_faces(), 0.1);
  const SampleResult r =
      evaluate_sample(comp, u, Eigen::VectorXd::Ones(m.num_faces()), model, weights, default_seeds(model));

  auto centroid = [&](int t) {
    Vec3 c = Vec3::Zero();
    for (int v : m.faces[t]) c += m.vertices[v];
    return Vec3(c / 3.0);
  };
  int matched = 0;
  for (int s = 0; s < m.num_faces(); ++s) {
    const Vec3 cs = centroid(s);
    for (int t = 0; t < m.num_faces(); ++t) {
      const Vec3 ct = centroid(t);
      if ((Vec3(1.0 - cs.x(), cs.y(), cs.z()) - ct).norm() < 1e-12) {
        CHECK(r.gradient[s] == doctest::Approx(r.gradient[t]).epsilon(1e-8));
        ++matched;
      }
    }
  }
  CHECK(matched == m.num_faces());
}

TEST_CASE("leader_barrier") {
  LeaderConfig cfg;
  cfg.volume_max = 10.0;
  const std::vector<double> areas{1.0, 2.0, 0.5, 1.5};
  const std::vector<char> frozen{0, 0, 1, 0};
  const Eigen::VectorXd u{{0.105, 0.05, 0.5, 0.15}};

  const BarrierValue b = leader_barrier(u, areas, frozen, cfg);
  // Box midpoint: only the volume term remains.
  const double slack = cfg.volume_max - volume(u, areas);
  CHECK(b.gradient[0] == doctest::Approx(cfg.alpha_volume * areas[0] / slack).epsilon(1e-14));
  CHECK(b.gradient[2] == doctest::Approx(cfg.alpha_volume * areas[2] / slack).epsilon(1e-14));

  for (int t = 0; t < 4; ++t) {
    const double h = 1e-7;
    Eigen::VectorXd up = u, um = u;
    up[t] += h;
    um[t] -= h;
    const double fd = (leader_barrier(up, areas, frozen, cfg).value - leader_barrier(um, areas, frozen, cfg).value) / (2 * h);
    CHECK(std::abs(fd - b.gradient[t]) <= 1e-8 * std::max(1.0, std::abs(b.gradient[t])));
  }

  double prev = -1e300;
  for (double x : {0.15, 0.19, 0.199, 0.1999, 0.19999}) {
    Eigen::VectorXd w = u;
    w[1] = x;
    const double val = leader_barrier(w, areas, frozen, cfg).value;
    CHECK(val > prev);
    prev = val;
  }

  Eigen::VectorXd bad = u;
  bad[3] = cfg.u_max;
  CHECK_THROWS_AS(leader_barrier(bad, areas, frozen, cfg), DomainError);
  bad = u;
  bad[2] = 25.0;  // frozen, but the volume is exceeded
  CHECK_THROWS_AS(leader_barrier(bad, areas, frozen, cfg), DomainError);
}

TEST_CASE("default_initial_thickness") {
  LeaderConfig cfg;
  CHECK(default_initial_thickness({100.0, 100.0}, cfg)[0] == doctest::Approx(0.105));
  CHECK(default_initial_thickness({400.0, 400.0}, cfg)[0] == doctest::Approx(0.9 * 60.0 / 800.0));
}

TEST_CASE("empirical_risk") {
  const Problem p = roof_problem(4);
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(p.mesh.num_faces(), 0.1);
  NoiseModel noise;
  noise.sigma = 0.0;
  const double one = empirical_risk(p.comp, u, p.model, noise, p.weights, 1).value;
  CHECK(empirical_risk(p.comp, u, p.model, noise, p.weights, 8).value == one);
  CHECK(empirical_risk(p.comp, u, p.model, noise, p.weights, 128).value == one);

  noise.sigma = 0.1;
  noise.seed = 3;
  const RiskEstimate a = empirical_risk(p.comp, u, p.model, noise, p.weights, 16, 0, 1);
  const RiskEstimate b = empirical_risk(p.comp, u, p.model, noise, p.weights, 16, 0, 3);
  CHECK(a.value == b.value);
  CHECK(a.samples == b.samples);
  CHECK(a.standard_error > 0.0);
  CHECK(std::isfinite(a.value));
}

TEST_CASE("sgd") {
  const Problem p = roof_problem(4);
  LeaderConfig cfg;
  cfg.samples = 4;
  NoiseModel noise;
  noise.sigma = 0.1;
  noise.seed = 17;
  const Eigen::VectorXd u0 = default_initial_thickness(p.comp.face_areas, cfg);

  SUBCASE("zero budget returns the initial design") {
    cfg.iterations = 0;
    const SgdResult r = sgd(p.comp, p.model, noise, p.weights, cfg, u0);
    CHECK(r.u == u0);
    CHECK(r.history.size() == 1);
    CHECK(r.history[0].relative_cost == 1.0);
  }
  SUBCASE("iterates stay feasible and runs are reproducible across worker counts") {
    cfg.iterations = 10;
    std::vector<Eigen::VectorXd> iterates;
    SgdCallbacks cb;
    cb.on_iterate = [&](int, const Eigen::VectorXd& u) { iterates.push_back(u); };
    const SgdResult a = sgd(p.comp, p.model, noise, p.weights, cfg, u0, 1, {}, cb);
    const SgdResult b = sgd(p.comp, p.model, noise, p.weights, cfg, u0, 3);
    REQUIRE_FALSE(a.aborted);
    CHECK(a.history.size() == 11);
    CHECK(a.u == b.u);
    CHECK(a.tau0 == b.tau0);
    for (size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].empirical_risk == b.history[i].empirical_risk);
    for (const auto& u : iterates) CHECK(strictly_feasible(u, p.comp.face_areas, p.comp.frozen_face, cfg));
    for (int t = 0; t < u0.size(); ++t) {
      if (p.comp.frozen_face[t]) CHECK(a.u[t] == u0[t]);
    }
  }
}

TEST_CASE("sgd: deterministic descent on a sanity problem") {
  // Clamped dome under a vertical load only: the follower has a single
  // maximizer and the volume bound is slack.
  ShellMesh m = testing::grid_mesh(4, 1.0, [](double x, double y) {
    return 0.6 - (x - 0.5) * (x - 0.5) - (y - 0.5) * (y - 0.5);
  });
  std::vector<int> boundary;
  for (int v = 0; v < m.num_vertices(); ++v) {
    const Vec3& x = m.vertices[v];
    if (x.x() == 0.0 || x.y() == 0.0 || x.x() == 1.0 || x.y() == 1.0) boundary.push_back(v);
  }
  m = select_dirichlet(std::move(m), ExplicitDirichlet{boundary});
  const auto ref = reference_quantities(m);
  const auto comp = assemble_components(m, ref, {});
  ForceModel model = build_force_basis(m, vertex_normals(m), 0.5, 1.0, 1e-4);
  model.basis.col(0).setZero();
  model.basis.col(1).setZero();
  const auto weights = tracking_weights(comp, tracking_indicator(m, FullTracking{}));

  LeaderConfig cfg;
  cfg.samples = 1;
  cfg.iterations = 500;
  cfg.volume_max = 10.0;
  NoiseModel noise;
  noise.sigma = 0.0;
  Eigen::VectorXd u0 = Eigen::VectorXd::Constant(m.num_faces(), 0.1);
  // A step well inside the stability limit of the barrier curvature.
  const double u_barrier_curvature = cfg.alpha_u * comp.face_areas[0] * 2.0 / (0.09 * 0.09);
  cfg.tau0 = 0.2 / u_barrier_curvature;
  cfg.tau_half = 1e9;

  const SgdResult r = sgd(comp, model, noise, weights, cfg, u0);
  REQUIRE_FALSE(r.aborted);
  REQUIRE(r.history.size() == 501);
  for (size_t i = 1; i < r.history.size(); ++i) {
    const double prev = r.history[i - 1].empirical_risk + r.history[i - 1].barrier;
    const double cur = r.history[i].empirical_risk + r.history[i].barrier;
    CHECK(cur <= prev + 1e-13 * std::abs(prev));
  }
  MESSAGE("gradient norm " << r.history.front().gradient_norm << " -> " << r.history.back().gradient_norm);
  CHECK(r.history.back().gradient_norm < 1e-3 * r.history.front().gradient_norm);
}

TEST_CASE("parallel_for") {
  std::vector<int> hit(100, 0);
  parallel_for(100, 4, [&](int i) { hit[i] += 1; });
  CHECK(std::count(hit.begin(), hit.end(), 1) == 100);
  CHECK_THROWS_WITH(parallel_for(10, 3, [](int i) {
                      if (i == 4 || i == 7) throw SolverError("boom " + std::to_string(i));
                    }),
                    "boom 4");
}
