#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "shellopt/commands.hpp"
#include "shellopt/config.hpp"

using namespace shellopt;

int main(int argc, char** argv) {
  CLI::App app{"Pessimistic bilevel thickness optimization of discrete shells"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output;
  std::string thickness;
  CommandOptions options;
  options.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::uint64_t seed = 0;
  bool quiet = false;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config,-c", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    if (needs_config) opt->required();
    sub->add_option("--output,-o", output, "Output directory (overrides output.directory)");
    sub->add_flag("--quiet,-q", quiet, "Suppress progress output");
  };
  auto add_sampling = [&](CLI::App* sub) {
    sub->add_option("--workers,-j", options.workers, "Worker threads for per-sample evaluation")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed,-s", seed, "Noise seed (overrides noise.seed)");
  };
  auto add_thickness = [&](CLI::App* sub, const char* help) {
    sub->add_option("--thickness,-t", thickness, help)->check(CLI::ExistingFile);
  };

  auto* solve = app.add_subcommand("solve", "Stochastic gradient descent on the leader problem");
  add_common(solve, true);
  add_sampling(solve);
  add_thickness(solve, "Initial design (face_index,thickness CSV)");

  auto* follower = app.add_subcommand("follower", "Worst-case force for a fixed design");
  add_common(follower, true);
  add_thickness(follower, "Design (face_index,thickness CSV)");
  follower->add_option("--seed,-s", seed, "Accepted for symmetry; the follower uses no sampling");

  auto* simulate = app.add_subcommand("simulate", "Risk evaluation of a fixed design under noise");
  add_common(simulate, true);
  add_sampling(simulate);
  add_thickness(simulate, "Design (face_index,thickness CSV)");

  auto* toy = app.add_subcommand("toy", "Scalar example with a discontinuous pessimistic value");
  add_common(toy, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfigError;
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (!output.empty()) config.output_directory = output;
    if (!thickness.empty()) options.thickness = thickness;
    for (auto* sub : {solve, simulate}) {
      if (app.got_subcommand(sub) && sub->count("--seed") > 0) options.seed = seed;
    }
    if (!quiet) options.log = &std::cerr;

    if (app.got_subcommand(solve)) return run_solve(std::move(config), options);
    if (app.got_subcommand(follower)) return run_follower(std::move(config), options);
    if (app.got_subcommand(simulate)) return run_simulate(std::move(config), options);
    return run_toy(std::move(config), options);
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    std::cerr << "error: " << e.what() << '\n';
    return code;
  }
}
