#include "shellopt/leader.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numbers>
#include <thread>

#include <Eigen/Cholesky>

#include "shellopt/errors.hpp"

namespace shellopt {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in (0, 1) from a hashed counter.
double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t sample, std::uint64_t face,
                       std::uint64_t counter) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ sample);
  h = splitmix64(h ^ face);
  h = splitmix64(h ^ counter);
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

constexpr int kMaxRejections = 10000;

// x_0 + mean(x_k - x_0): exact when all samples coincide.
double shifted_mean(const std::vector<double>& x) {
  double sum = 0.0;
  for (double v : x) sum += v - x.front();
  return x.front() + sum / static_cast<double>(x.size());
}

}  // namespace

double truncated_normal_draw(const NoiseModel& noise, std::uint64_t stream, std::uint64_t sample,
                             std::uint64_t face) {
  if (noise.sigma <= 0.0) return 1.0;
  for (int k = 0; k < kMaxRejections; ++k) {
    const double u1 = counter_uniform(noise.seed, stream, sample, face, 2 * k);
    const double u2 = counter_uniform(noise.seed, stream, sample, face, 2 * k + 1);
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    const double x = 1.0 + noise.sigma * z;
    if (x >= noise.lower && x <= noise.upper) return x;
  }
  throw SolverError("truncated normal: acceptance region has negligible mass");
}

Eigen::VectorXd sample_perturbation(const NoiseModel& noise, std::uint64_t stream, int sample,
                                    const std::vector<char>& frozen_face) {
  const int n = static_cast<int>(frozen_face.size());
  Eigen::VectorXd v(n);
  for (int t = 0; t < n; ++t) {
    v[t] = frozen_face[t] ? 1.0 : truncated_normal_draw(noise, stream, static_cast<std::uint64_t>(sample), t);
  }
  return v;
}

std::vector<char> tracking_indicator(const ShellMesh& mesh, const TrackingSelector& selector) {
  const int nv = mesh.num_vertices();
  std::vector<char> chi(nv, 0);
  auto free_vertex = [&](int v) { return mesh.is_dirichlet.empty() || !mesh.is_dirichlet[v]; };

  if (std::holds_alternative<FullTracking>(selector)) {
    for (int v = 0; v < nv; ++v) chi[v] = free_vertex(v);
  } else if (const auto* p = std::get_if<PlateauTracking>(&selector)) {
    if (!(p->fraction > 0.0)) throw InputError("plateau tracking fraction must be positive");
    Eigen::Vector2d lo = mesh.vertices.front().head<2>(), hi = lo;
    for (const auto& x : mesh.vertices) {
      lo = lo.cwiseMin(x.head<2>());
      hi = hi.cwiseMax(x.head<2>());
    }
    const Eigen::Vector2d center = 0.5 * (lo + hi);
    const double half = 0.5 * (hi - lo).maxCoeff();
    for (int v = 0; v < nv; ++v) {
      const double d = (mesh.vertices[v].head<2>() - center).cwiseAbs().maxCoeff();
      chi[v] = free_vertex(v) && d <= p->fraction * half;
    }
  } else {
    for (int v : std::get<ExplicitTracking>(selector).vertices) {
      if (v < 0 || v >= nv) throw InputError("tracking vertex " + std::to_string(v) + " out of range");
      chi[v] = free_vertex(v);
    }
  }
  if (std::none_of(chi.begin(), chi.end(), [](char x) { return x != 0; })) {
    throw InputError("tracking set is empty");
  }
  return chi;
}

Eigen::VectorXd tracking_weights(const ElasticComponents& c, const std::vector<char>& chi) {
  Eigen::VectorXd full = c.mass_full;
  for (int v = 0; v < c.num_vertices; ++v) {
    if (!chi[v]) full.segment<3>(3 * v).setZero();
  }
  return c.restrict_to_free(full);
}

double tracking_cost(const ElasticComponents& c, const Eigen::VectorXd& u, const Eigen::VectorXd& f,
                     const std::vector<char>& chi) {
  const StiffnessFactorization H(assemble_H(c, u));
  const Eigen::VectorXd y = solve_state(H, c.mass_reduced, c.restrict_to_free(f));
  return y.dot(tracking_weights(c, chi).cwiseProduct(y));
}

Eigen::VectorXd hypergradient(const ElasticComponents& c, const Eigen::VectorXd& perturbed_u,
                              const Eigen::VectorXd& upsilon, const ComplianceState& state,
                              const ForceModel& model, const FollowerResult& follower,
                              const Eigen::VectorXd& chi_weights, HypergradientMode mode,
                              bool* degenerate) {
  if (degenerate) *degenerate = false;
  const Eigen::VectorXd y = state.response * follower.F;
  Eigen::VectorXd z = state.factorization->solve(Eigen::VectorXd(2.0 * chi_weights.cwiseProduct(y)));

  if (mode == HypergradientMode::kFull) {
    // Sensitivity of F* through the stationarity of the smoothed follower.
    const SmoothedValue obj = smoothed_objective(follower.F, state.S, model);
    const Eigen::LLT<Eigen::MatrixXd> neg(-obj.hessian);
    if (neg.info() == Eigen::Success) {
      const Eigen::VectorXd rhs = state.basis_reduced.transpose() * c.mass_reduced.cwiseProduct(z);
      const Eigen::VectorXd r = -neg.solve(rhs);
      z -= 2.0 * state.response * r;
    } else if (degenerate) {
      *degenerate = true;
    }
  }
  Eigen::VectorXd g = -contract_dH_du(c, perturbed_u, z, y);
  return g.cwiseProduct(upsilon);
}

SampleResult evaluate_sample(const ElasticComponents& c, const Eigen::VectorXd& u,
                             const Eigen::VectorXd& upsilon, const ForceModel& model,
                             const Eigen::VectorXd& chi_weights,
                             const std::vector<Eigen::VectorXd>& seeds, const SampleOptions& options) {
  const Eigen::VectorXd pu = u.cwiseProduct(upsilon);
  const ComplianceState state = prepare_compliance(c, pu, model);
  SampleResult out;
  out.follower = solve_follower(state, model, seeds, options.newton);
  if (!out.follower.converged) {
    const auto fallback = default_seeds(model);
    FollowerResult retry = solve_follower(state, model, fallback, options.newton);
    if (!retry.converged) throw SolverError("follower did not converge");
    out.follower = std::move(retry);
  }
  const Eigen::VectorXd y = state.response * out.follower.F;
  out.cost = y.dot(chi_weights.cwiseProduct(y));
  if (options.with_gradient) {
    out.gradient = hypergradient(c, pu, upsilon, state, model, out.follower, chi_weights, options.mode,
                                 &out.degenerate_follower);
  }
  return out;
}

void parallel_for(int n, int workers, const std::function<void(int)>& body) {
  workers = std::max(1, std::min(workers, n));
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int i = next++; i < n; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

RiskEstimate empirical_risk(const ElasticComponents& c, const Eigen::VectorXd& u,
                            const ForceModel& model, const NoiseModel& noise,
                            const Eigen::VectorXd& chi_weights, int samples, std::uint64_t stream,
                            int workers, const NewtonOptions& newton) {
  if (samples < 1) throw ConfigError("empirical_risk: need at least one sample");
  RiskEstimate r;
  r.samples.resize(samples);
  r.forces.resize(samples);
  const auto seeds = default_seeds(model);
  SampleOptions opts;
  opts.newton = newton;
  opts.with_gradient = false;
  parallel_for(samples, workers, [&](int k) {
    const Eigen::VectorXd v = sample_perturbation(noise, stream, k, c.frozen_face);
    try {
      SampleResult s = evaluate_sample(c, u, v, model, chi_weights, seeds, opts);
      r.samples[k] = s.cost;
      r.forces[k] = s.follower.F;
    } catch (const SolverError& e) {
      throw SolverError("sample " + std::to_string(k) + ": " + e.what());
    }
  });
  r.value = shifted_mean(r.samples);
  if (samples > 1) {
    double ss = 0.0;
    for (double s : r.samples) ss += (s - r.value) * (s - r.value);
    r.standard_error = std::sqrt(ss / (samples - 1) / samples);
  }
  return r;
}

double volume(const Eigen::VectorXd& u, const std::vector<double>& face_areas) {
  double v = 0.0;
  for (int t = 0; t < u.size(); ++t) v += face_areas[t] * u[t];
  return v;
}

bool strictly_feasible(const Eigen::VectorXd& u, const std::vector<double>& face_areas,
                       const std::vector<char>& frozen_face, const LeaderConfig& config) {
  for (int t = 0; t < u.size(); ++t) {
    if (!std::isfinite(u[t])) return false;
    if (frozen_face[t]) continue;
    if (!(u[t] > config.u_min && u[t] < config.u_max)) return false;
  }
  return volume(u, face_areas) < config.volume_max;
}

BarrierValue leader_barrier(const Eigen::VectorXd& u, const std::vector<double>& face_areas,
                            const std::vector<char>& frozen_face, const LeaderConfig& config) {
  if (!strictly_feasible(u, face_areas, frozen_face, config)) {
    throw DomainError("thickness outside the admissible set");
  }
  BarrierValue b;
  b.gradient = Eigen::VectorXd::Zero(u.size());
  for (int t = 0; t < u.size(); ++t) {
    if (frozen_face[t]) continue;
    const double lo = u[t] - config.u_min;
    const double hi = config.u_max - u[t];
    b.value -= config.alpha_u * face_areas[t] * (std::log(lo) + std::log(hi));
    b.gradient[t] = -config.alpha_u * face_areas[t] * (1.0 / lo - 1.0 / hi);
  }
  const double slack = config.volume_max - volume(u, face_areas);
  b.value -= config.alpha_volume * std::log(slack);
  for (int t = 0; t < u.size(); ++t) b.gradient[t] += config.alpha_volume * face_areas[t] / slack;
  return b;
}

double spatial_variance(const Eigen::VectorXd& u, const std::vector<double>& face_areas,
                        const std::vector<char>& frozen_face) {
  double area = 0.0;
  double mean = 0.0;
  for (int t = 0; t < u.size(); ++t) {
    if (frozen_face[t]) continue;
    area += face_areas[t];
    mean += face_areas[t] * u[t];
  }
  if (area <= 0.0) return 0.0;
  mean /= area;
  double var = 0.0;
  for (int t = 0; t < u.size(); ++t) {
    if (!frozen_face[t]) var += face_areas[t] * (u[t] - mean) * (u[t] - mean);
  }
  return var / area;
}

Eigen::VectorXd default_initial_thickness(const std::vector<double>& face_areas, const LeaderConfig& config) {
  double area = 0.0;
  for (double a : face_areas) area += a;
  const double value = std::min(0.9 * config.volume_max / area, 0.5 * (config.u_min + config.u_max));
  return Eigen::VectorXd::Constant(static_cast<int>(face_areas.size()), value);
}

namespace {

struct Batch {
  double mean = 0.0;
  Eigen::VectorXd gradient;
  int degenerate = 0;
  int failed = 0;
};

class BatchEvaluator {
 public:
  BatchEvaluator(const ElasticComponents& c, const ForceModel& model, const NoiseModel& noise,
                 const Eigen::VectorXd& chi, const LeaderConfig& config, int workers, const NewtonOptions& newton)
      : c_(c), model_(model), noise_(noise), chi_(chi), config_(config), workers_(workers),
        warm_(config.samples), seeds_(default_seeds(model)) {
    options_.newton = newton;
    options_.mode = config.mode;
  }

  // Mean cost (and gradient) over the K samples of `stream`. Warm starts are
  // only updated when `commit` is set.
  Batch run(const Eigen::VectorXd& u, std::uint64_t stream, bool with_gradient, bool commit) {
    const int K = config_.samples;
    std::vector<SampleResult> results(K);
    std::vector<char> failed(K, 0);
    std::vector<std::string> messages(K);
    SampleOptions opts = options_;
    opts.with_gradient = with_gradient;
    parallel_for(K, workers_, [&](int k) {
      const Eigen::VectorXd v = sample_perturbation(noise_, stream, k, c_.frozen_face);
      const std::vector<Eigen::VectorXd> start =
          warm_[k].size() > 0 ? std::vector<Eigen::VectorXd>{warm_[k]} : seeds_;
      try {
        results[k] = evaluate_sample(c_, u, v, model_, chi_, start, opts);
      } catch (const std::exception& e) {
        failed[k] = 1;
        messages[k] = e.what();
      }
    });

    Batch b;
    b.gradient = Eigen::VectorXd::Zero(u.size());
    int used = 0;
    std::vector<double> costs;
    for (int k = 0; k < K; ++k) {
      if (failed[k]) {
        if (!config_.allow_sample_failure) {
          throw SolverError("sample " + std::to_string(k) + " (stream " + std::to_string(stream) + "): " + messages[k]);
        }
        ++b.failed;
        continue;
      }
      costs.push_back(results[k].cost);
      if (with_gradient) b.gradient += results[k].gradient;
      b.degenerate += results[k].degenerate_follower;
      ++used;
      if (commit) warm_[k] = results[k].follower.F;
    }
    if (used == 0) throw SolverError("every sample failed in stream " + std::to_string(stream));
    b.mean = shifted_mean(costs);
    b.gradient /= used;
    return b;
  }

 private:
  const ElasticComponents& c_;
  const ForceModel& model_;
  const NoiseModel& noise_;
  const Eigen::VectorXd& chi_;
  const LeaderConfig& config_;
  int workers_;
  std::vector<Eigen::VectorXd> warm_;
  std::vector<Eigen::VectorXd> seeds_;
  SampleOptions options_;
};

Eigen::VectorXd masked(Eigen::VectorXd g, const std::vector<char>& frozen) {
  for (int t = 0; t < g.size(); ++t) {
    if (frozen[t]) g[t] = 0.0;
  }
  return g;
}

}  // namespace

SgdResult sgd(const ElasticComponents& c, const ForceModel& model, const NoiseModel& noise,
              const Eigen::VectorXd& chi_weights, const LeaderConfig& config, const Eigen::VectorXd& u0,
              int workers, const NewtonOptions& newton, const SgdCallbacks& callbacks) {
  using clock = std::chrono::steady_clock;
  if (config.samples < 1) throw ConfigError("leader.samples must be at least 1");
  if (!strictly_feasible(u0, c.face_areas, c.frozen_face, config)) {
    throw DomainError("initial thickness is not strictly feasible");
  }

  SgdResult out;
  out.u = u0;
  BatchEvaluator eval(c, model, noise, chi_weights, config, workers, newton);

  auto start = clock::now();
  Batch batch;
  double reference = 0.0;
  Eigen::VectorXd g;

  auto record = [&](int i, double step) {
    const BarrierValue bar = leader_barrier(out.u, c.face_areas, c.frozen_face, config);
    g = masked(batch.gradient + bar.gradient, c.frozen_face);
    IterationLog log;
    log.iteration = i;
    log.empirical_risk = batch.mean;
    log.relative_cost = reference > 0.0 ? batch.mean / reference : 1.0;
    log.barrier = bar.value;
    log.volume = volume(out.u, c.face_areas);
    log.step_size = step;
    log.gradient_norm = g.cwiseAbs().maxCoeff();
    log.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    log.degenerate_samples = batch.degenerate;
    log.failed_samples = batch.failed;
    out.history.push_back(log);
    if (callbacks.on_iteration) callbacks.on_iteration(log);
    if (callbacks.on_iterate) callbacks.on_iterate(i, out.u);
  };

  try {
    batch = eval.run(out.u, 0, true, true);
    reference = batch.mean;
    record(0, 0.0);
  } catch (const SolverError& e) {
    out.aborted = true;
    out.message = std::string("initial evaluation failed: ") + e.what();
    return out;
  }
  if (config.iterations <= 0) return out;

  auto feasible_step = [&](double tau, Eigen::VectorXd& next) {
    for (int k = 0; k <= config.max_backtracks; ++k, tau *= 0.5) {
      next = out.u - tau * g;
      if (strictly_feasible(next, c.face_areas, c.frozen_face, config)) return tau;
    }
    return 0.0;
  };

  out.tau0 = config.tau0;
  if (out.tau0 <= 0.0) {
    // Largest power-of-two fraction of a 10% box move that lowers the first batch's cost.
    const double gmax = g.cwiseAbs().maxCoeff();
    if (!(gmax > 0.0)) {
      out.message = "zero gradient at the initial design";
      return out;
    }
    const double base = 0.1 * (config.u_max - config.u_min) / gmax;
    out.tau0 = base * std::ldexp(1.0, -(config.probe_levels - 1));
    for (int level = 0; level < config.probe_levels; ++level) {
      const double tau = base * std::ldexp(1.0, -level);
      Eigen::VectorXd next;
      if (feasible_step(tau, next) != tau) continue;
      try {
        if (eval.run(next, 0, false, false).mean < reference) {
          out.tau0 = tau;
          break;
        }
      } catch (const SolverError&) {
      }
    }
  }

  for (int i = 0; i < config.iterations; ++i) {
    const double tau_i = out.tau0 / (1.0 + i / config.tau_half);
    Eigen::VectorXd next;
    const double tau = feasible_step(tau_i, next);
    if (tau == 0.0) {
      out.aborted = true;
      out.message = "feasibility backtracking exhausted at iteration " + std::to_string(i) +
                    " (|g|_inf = " + std::to_string(g.cwiseAbs().maxCoeff()) + ")";
      return out;
    }
    out.u = next;
    try {
      batch = eval.run(out.u, static_cast<std::uint64_t>(i + 1), true, true);
    } catch (const SolverError& e) {
      out.aborted = true;
      out.message = "iteration " + std::to_string(i + 1) + ": " + e.what();
      return out;
    }
    record(i + 1, tau);
  }
  return out;
}

}  // namespace shellopt
