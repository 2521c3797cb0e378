#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "shellopt/errors.hpp"
#include "shellopt/risk.hpp"

using namespace shellopt;
using namespace shellopt::risk;

namespace {

using Sample = std::vector<double>;

Sample random_sample(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> d(0.0, 2.0);
  Sample y(n);
  for (auto& v : y) v = d(rng);
  return y;
}

// min over t of t + mean((Y - t)^+) / (1 - beta); the objective is piecewise
// linear with kinks at the samples, so the minimum is attained at one of them.
double cvar_oracle(const Sample& y, double beta) {
  double best = INFINITY;
  for (double t : y) {
    double excess = 0.0;
    for (double v : y) excess += std::max(v - t, 0.0);
    best = std::min(best, t + excess / y.size() / (1.0 - beta));
  }
  return best;
}

Sample shifted(Sample y, double m) {
  for (auto& v : y) v += m;
  return y;
}

}  // namespace

TEST_CASE("expectation") {
  CHECK(expectation(Sample{4.2, 4.2, 4.2}) == 4.2);
  CHECK(expectation(Sample{0.0, 2.0}) == 1.0);
  CHECK(expectation(Sample{1.0, 2.0, 6.0}) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK_THROWS_AS(expectation(Sample{}), InputError);
}

TEST_CASE("cvar") {
  CHECK(cvar(Sample{1, 2, 3, 4}, 0.75) == 4.0);
  CHECK(cvar(Sample{1, 2, 3, 4}, 0.5) == 3.5);
  CHECK(cvar(Sample{3.3, 3.3, 3.3}, 0.9) == doctest::Approx(3.3).epsilon(1e-15));
  CHECK(cvar(Sample{5, 1, 3}, 0.99) == doctest::Approx(5.0));
  CHECK_THROWS_AS(cvar(Sample{1, 2}, 1.0), InputError);
  CHECK_THROWS_AS(cvar(Sample{1, 2}, -0.1), InputError);

  std::mt19937_64 rng(1);
  for (int k = 0; k < 100; ++k) {
    const Sample y = random_sample(rng, 1 + k % 37);
    CHECK(cvar(y, 0.0) == expectation(y));
    for (double beta : {0.1, 0.5, 0.8, 0.95}) {
      CHECK(cvar(y, beta) == doctest::Approx(cvar_oracle(y, beta)).epsilon(1e-12));
      CHECK(cvar(y, beta) >= expectation(y) - 1e-12);
    }
  }
}

TEST_CASE("expected_excess") {
  CHECK(expected_excess(Sample{0.1, 0.5, 1.0}, 1.0, 1.0) == 0.0);
  CHECK(expected_excess(Sample{3.0}, 2.0, 2.0) == 1.0);
  CHECK(expected_excess(Sample{0.0, 4.0}, 1.0, 1.0) == 1.5);
  CHECK_THROWS_AS(expected_excess(Sample{1.0}, 0.0, 0.5), InputError);
}

TEST_CASE("mean_upper_semideviation") {
  CHECK(mean_upper_semideviation(Sample{2.5, 2.5}, 2.0) == 2.5);
  CHECK(mean_upper_semideviation(Sample{0.0, 2.0}, 1.0) == 1.5);
  std::mt19937_64 rng(2);
  for (int k = 0; k < 20; ++k) {
    const Sample y = random_sample(rng, 10);
    CHECK(mean_upper_semideviation(y, 2.0) >= expectation(y));
  }
}

TEST_CASE("risk axioms on random samples") {
  using Measure = std::function<double(const Sample&)>;
  const std::vector<std::pair<const char*, Measure>> measures{
      {"expectation", [](const Sample& y) { return expectation(y); }},
      {"cvar 0.5", [](const Sample& y) { return cvar(y, 0.5); }},
      {"cvar 0.9", [](const Sample& y) { return cvar(y, 0.9); }},
      {"excess 1", [](const Sample& y) { return expected_excess(y, 0.5, 1.0); }},
      {"excess 2", [](const Sample& y) { return expected_excess(y, 0.5, 2.0); }},
      {"semideviation 1", [](const Sample& y) { return mean_upper_semideviation(y, 1.0); }},
      {"semideviation 2", [](const Sample& y) { return mean_upper_semideviation(y, 2.0); }},
  };
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& [name, rho] : measures) {
    INFO(name);
    for (int k = 0; k < 100; ++k) {
      const int n = 16;
      const Sample y1 = random_sample(rng, n);
      Sample y2 = y1;
      for (auto& v : y2) v += 3.0 * unit(rng);
      const double tol = 1e-12 * (1.0 + std::abs(rho(y2)));

      // Monotonicity.
      CHECK(rho(y1) <= rho(y2) + tol);

      // Convexity.
      const Sample z = random_sample(rng, n);
      for (double lambda : {0.25, 0.5, 0.75}) {
        Sample mix(n);
        for (int i = 0; i < n; ++i) mix[i] = lambda * y1[i] + (1 - lambda) * z[i];
        CHECK(rho(mix) <= lambda * rho(y1) + (1 - lambda) * rho(z) + 1e-12 * (1 + std::abs(rho(mix))));
      }

      // Law invariance.
      Sample perm = y1;
      std::shuffle(perm.begin(), perm.end(), rng);
      CHECK(rho(perm) == doctest::Approx(rho(y1)).epsilon(1e-13));
    }
  }

  // Translation equivariance for expectation and CVaR.
  for (int k = 0; k < 100; ++k) {
    const Sample y = random_sample(rng, 12);
    const double m = 10.0 * (unit(rng) - 0.5);
    CHECK(expectation(shifted(y, m)) == doctest::Approx(expectation(y) + m).epsilon(1e-13));
    CHECK(expectation(shifted(y, 3.7)) == doctest::Approx(expectation(y) + 3.7).epsilon(1e-13));
    for (double beta : {0.3, 0.75}) {
      CHECK(cvar(shifted(y, m), beta) == doctest::Approx(cvar(y, beta) + m).epsilon(1e-13));
    }
  }
}
