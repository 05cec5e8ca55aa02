// sae estimate|simulate|diagnose --config <file>
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
// failure. SAE_LOG_LEVEL (trace, debug, info, warn, error, off) sets verbosity.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "sae/error.hpp"
#include "sae/pipeline.hpp"

int main(int argc, char** argv) {
  if (const char* level = std::getenv("SAE_LOG_LEVEL")) {
    spdlog::set_level(spdlog::level::from_str(level));
  } else {
    spdlog::set_level(spdlog::level::warn);
  }

  CLI::App app{"Smoothed model-assisted small area estimation"};
  app.require_subcommand(1);
  std::string config_path;
  auto* estimate = app.add_subcommand("estimate", "Direct, model-assisted, and smoothed area estimates");
  auto* simulate = app.add_subcommand("simulate", "Design-based simulation study");
  auto* diagnose = app.add_subcommand("diagnose", "Input checks and model summaries");
  for (auto* sub : {estimate, simulate, diagnose}) {
    sub->add_option("--config", config_path, "Flat key = value configuration file")->required();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (estimate->parsed()) {
      sae::run_estimate(sae::load_run_config(config_path, sae::Subcommand::estimate));
    } else if (simulate->parsed()) {
      sae::run_simulate(sae::load_run_config(config_path, sae::Subcommand::simulate));
    } else {
      sae::run_diagnose(sae::load_run_config(config_path, sae::Subcommand::diagnose));
    }
  } catch (const sae::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const sae::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
