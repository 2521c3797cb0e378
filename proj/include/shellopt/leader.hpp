#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "shellopt/elastic.hpp"
#include "shellopt/follower.hpp"
#include "shellopt/mesh.hpp"

namespace shellopt {

// ---------------------------------------------------------------------------
// Manufacturing noise: upsilon_t ~ N(1, sigma^2) truncated to [lower, upper].

struct NoiseModel {
  double sigma = 0.1;
  double lower = 1e-2;
  double upper = 2.0;
  std::uint64_t seed = 0;
};

/// One truncated-normal draw for the counter (seed, stream, sample, face).
/// Rejection from the parent normal; sigma == 0 returns 1.
double truncated_normal_draw(const NoiseModel& noise, std::uint64_t stream, std::uint64_t sample,
                             std::uint64_t face);

/// Per-face multiplicative perturbation; frozen faces get 1.
Eigen::VectorXd sample_perturbation(const NoiseModel& noise, std::uint64_t stream, int sample,
                                    const std::vector<char>& frozen_face);

// ---------------------------------------------------------------------------
// Tracking region.

struct FullTracking {};

/// Vertices whose horizontal max-norm distance from the footprint center is at
/// most `fraction` times the footprint half-width.
struct PlateauTracking {
  double fraction = 0.5;
};

struct ExplicitTracking {
  std::vector<int> vertices;
};

using TrackingSelector = std::variant<FullTracking, PlateauTracking, ExplicitTracking>;

/// chi_v in {0, 1}. Dirichlet vertices are never tracked (their displacement
/// is zero). Throws InputError on an empty or out-of-range selection.
std::vector<char> tracking_indicator(const ShellMesh& mesh, const TrackingSelector& selector);

/// chi_v a_v on the reduced DOFs.
Eigen::VectorXd tracking_weights(const ElasticComponents& c, const std::vector<char>& chi);

/// J = sum_v chi_v a_v |y_v|^2 with y = H[u]^{-1} M f; f is a full force vector.
double tracking_cost(const ElasticComponents& c, const Eigen::VectorXd& u, const Eigen::VectorXd& f,
                     const std::vector<char>& chi);

// ---------------------------------------------------------------------------
// Per-sample evaluation.

enum class HypergradientMode {
  kFull,    // differentiate through the follower optimum
  kFrozen,  // treat F* as fixed
};

struct SampleResult {
  double cost = 0.0;
  Eigen::VectorXd gradient;  // dJ/du, empty unless requested
  FollowerResult follower;
  bool degenerate_follower = false;  // full mode fell back to the frozen gradient
};

/// Gradient of u -> J[u . v, B F*(u . v)] at a solved sample. `state` and
/// `follower` belong to the perturbed thickness u . v.
Eigen::VectorXd hypergradient(const ElasticComponents& c, const Eigen::VectorXd& perturbed_u,
                              const Eigen::VectorXd& upsilon, const ComplianceState& state,
                              const ForceModel& model, const FollowerResult& follower,
                              const Eigen::VectorXd& chi_weights, HypergradientMode mode,
                              bool* degenerate = nullptr);

struct SampleOptions {
  NewtonOptions newton;
  HypergradientMode mode = HypergradientMode::kFull;
  bool with_gradient = true;
};

/// Solves the follower at u . upsilon from `seeds` and evaluates the tracking
/// cost (and optionally its hypergradient). Throws SolverError if no seed
/// converges.
SampleResult evaluate_sample(const ElasticComponents& c, const Eigen::VectorXd& u,
                             const Eigen::VectorXd& upsilon, const ForceModel& model,
                             const Eigen::VectorXd& chi_weights,
                             const std::vector<Eigen::VectorXd>& seeds, const SampleOptions& options = {});

// ---------------------------------------------------------------------------
// Empirical risk.

struct RiskEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::vector<double> samples;
  std::vector<Eigen::VectorXd> forces;  // F* per sample
};

/// Mean tracking cost over K samples drawn from stream `stream`.
RiskEstimate empirical_risk(const ElasticComponents& c, const Eigen::VectorXd& u,
                            const ForceModel& model, const NoiseModel& noise,
                            const Eigen::VectorXd& chi_weights, int samples, std::uint64_t stream = 0,
                            int workers = 1, const NewtonOptions& newton = {});

// ---------------------------------------------------------------------------
// Leader problem.

struct LeaderConfig {
  double alpha_u = 1.0;
  double alpha_volume = 1e-5;
  double u_min = 0.01;
  double u_max = 0.2;
  double volume_max = 60.0;
  int samples = 128;
  int iterations = 200;
  double tau0 = 0.0;  // <= 0: choose by the first-iteration probe
  double tau_half = 100.0;
  int probe_levels = 12;
  int max_backtracks = 60;
  HypergradientMode mode = HypergradientMode::kFull;
  bool allow_sample_failure = false;
};

/// Box barrier on the non-frozen faces plus the volume barrier over all faces.
struct BarrierValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

double volume(const Eigen::VectorXd& u, const std::vector<double>& face_areas);

/// Strict feasibility: u_min < u_t < u_max on free faces and volume < V+.
bool strictly_feasible(const Eigen::VectorXd& u, const std::vector<double>& face_areas,
                       const std::vector<char>& frozen_face, const LeaderConfig& config);

/// Throws DomainError if u is not strictly feasible.
BarrierValue leader_barrier(const Eigen::VectorXd& u, const std::vector<double>& face_areas,
                            const std::vector<char>& frozen_face, const LeaderConfig& config);

/// Area-weighted variance of u over the non-frozen faces.
double spatial_variance(const Eigen::VectorXd& u, const std::vector<double>& face_areas,
                        const std::vector<char>& frozen_face);

/// u0_t = min(0.9 V+ / sum a_t, (u_min + u_max) / 2).
Eigen::VectorXd default_initial_thickness(const std::vector<double>& face_areas, const LeaderConfig& config);

struct IterationLog {
  int iteration = 0;
  double empirical_risk = 0.0;
  double relative_cost = 0.0;
  double barrier = 0.0;
  double volume = 0.0;
  double step_size = 0.0;
  double gradient_norm = 0.0;  // inf-norm of the masked total gradient
  double wall_ms = 0.0;
  int degenerate_samples = 0;
  int failed_samples = 0;
};

struct SgdResult {
  Eigen::VectorXd u;
  std::vector<IterationLog> history;
  double tau0 = 0.0;
  bool aborted = false;
  std::string message;
};

struct SgdCallbacks {
  std::function<void(const IterationLog&)> on_iteration;
  std::function<void(int iteration, const Eigen::VectorXd& u)> on_iterate;
};

/// Stochastic gradient descent on E[J] plus the barriers. Iteration i draws K
/// fresh samples from stream i; the step size is tau0 / (1 + i / tau_half).
/// history[i] describes u^i; with a zero budget only u0 is evaluated.
SgdResult sgd(const ElasticComponents& c, const ForceModel& model, const NoiseModel& noise,
              const Eigen::VectorXd& chi_weights, const LeaderConfig& config, const Eigen::VectorXd& u0,
              int workers = 1, const NewtonOptions& newton = {}, const SgdCallbacks& callbacks = {});

/// Runs body(i) for i in [0, n) on up to `workers` threads. Exceptions are
/// rethrown on the caller (lowest index first).
void parallel_for(int n, int workers, const std::function<void(int)>& body);

}  // namespace shellopt
