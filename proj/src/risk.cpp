#include "shellopt/risk.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "shellopt/errors.hpp"

namespace shellopt::risk {

namespace {

void require_nonempty(std::span<const double> samples) {
  if (samples.empty()) throw InputError("risk measure of an empty sample");
}

void require_order(double order) {
  if (!(order >= 1.0)) throw InputError("risk measure order must be at least 1");
}

}  // namespace

double expectation(std::span<const double> samples) {
  require_nonempty(samples);
  // Shifted by the first sample so that constant samples are reproduced exactly.
  double sum = 0.0;
  for (double s : samples) sum += s - samples.front();
  return samples.front() + sum / static_cast<double>(samples.size());
}

double cvar(std::span<const double> samples, double beta) {
  require_nonempty(samples);
  if (!(beta >= 0.0 && beta < 1.0)) throw InputError("CVaR level must lie in [0, 1)");
  if (beta == 0.0) return expectation(samples);

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double n = static_cast<double>(sorted.size());
  const double tail = (1.0 - beta) * n;  // number of samples in the tail, fractional
  double sum = 0.0;
  double taken = 0.0;
  for (double s : sorted) {
    const double w = std::min(1.0, tail - taken);
    if (w <= 0.0) break;
    sum += w * s;
    taken += w;
  }
  return sum / tail;
}

double expected_excess(std::span<const double> samples, double target, double order) {
  require_nonempty(samples);
  require_order(order);
  double sum = 0.0;
  for (double s : samples) sum += std::pow(std::max(s - target, 0.0), order);
  return sum / static_cast<double>(samples.size());
}

double mean_upper_semideviation(std::span<const double> samples, double order) {
  const double mean = expectation(samples);
  require_order(order);
  return mean + std::pow(expected_excess(samples, mean, order), 1.0 / order);
}

}  // namespace shellopt::risk
