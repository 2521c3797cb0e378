#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include "shellopt/config.hpp"

namespace shellopt {

/// Exit codes of the command-line tool.
inline constexpr int kExitSuccess = 0;
inline constexpr int kExitSolverAbort = 2;
inline constexpr int kExitConfigError = 64;
inline constexpr int kExitInputError = 65;

/// Stream of the sampling counter used by `simulate`, disjoint from the
/// per-iteration streams of the descent.
inline constexpr std::uint64_t kSimulateStream = std::uint64_t{1} << 40;

struct CommandOptions {
  int workers = 1;
  std::optional<std::uint64_t> seed;            // overrides noise.seed
  std::optional<std::filesystem::path> thickness;  // design file
  std::ostream* log = nullptr;                  // progress lines
};

/// Each command writes its artifacts under config.output_directory and
/// returns an exit code. Configuration problems throw ConfigError, bad input
/// files InputError and numerical failures SolverError.
int run_solve(RunConfig config, const CommandOptions& options);
int run_follower(RunConfig config, const CommandOptions& options);
int run_simulate(RunConfig config, const CommandOptions& options);
int run_toy(RunConfig config, const CommandOptions& options);

/// Maps an exception from a command to an exit code and a message.
int exit_code_for(const std::exception& e);

}  // namespace shellopt
