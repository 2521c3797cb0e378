#pragma once

#include <span>

namespace shellopt::risk {

/// Arithmetic mean. Throws InputError on an empty sample.
double expectation(std::span<const double> samples);

/// Empirical conditional value-at-risk at level beta in [0, 1): the mean of
/// the worst (1 - beta) fraction of the samples, splitting the boundary
/// sample fractionally. Equals min_t t + mean((Y - t)^+) / (1 - beta).
double cvar(std::span<const double> samples, double beta);

/// mean(((Y - target)^+)^order), order >= 1.
double expected_excess(std::span<const double> samples, double target, double order);

/// E[Y] + (E[((Y - E[Y])^+)^order])^(1 / order), order >= 1.
double mean_upper_semideviation(std::span<const double> samples, double order);

}  // namespace shellopt::risk
