// stmchain command-line entry point.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "app.hpp"
#include "stmchain/parallel.hpp"

namespace fs = std::filesystem;
using namespace stmchain;

namespace {

struct RunArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  int threads = 0;
  int seed = 0;
};

int run_command(const std::string& protocol, const RunArgs& a, const std::vector<std::string>& argv) {
  ExperimentConfig config;
  fs::path out_dir;
  try {
    auto overrides = a.overrides;
    overrides.push_back("run.threads=" + std::to_string(a.threads > 0 ? a.threads : default_threads()));
    config = app::resolve_config(protocol, a.config, overrides);
    out_dir = app::resolve_output_dir(config, a.out);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return app::kConfigError;
  }
  const auto outcome = app::run_protocol(config, out_dir, argv);
  std::cout << outcome.results.dump(2) << "\n";
  std::cerr << "manifest: " << outcome.manifest.string() << "\n";
  if (outcome.exit_code != app::kOk) std::cerr << "run failed with exit code " << outcome.exit_code << "\n";
  return outcome.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Spin-chain transfer experiments with an STM tip"};
  cli.require_subcommand(1);
  cli.set_version_flag("--version", app::kVersion);
  const std::vector<std::string> argv_vec(argv, argv + argc);

  std::vector<std::pair<std::string, CLI::App*>> runs;
  RunArgs args;
  for (const auto& p : app::protocols()) {
    auto* sub = cli.add_subcommand(p, "Run the " + p + " protocol");
    sub->add_option("-c,--config", args.config, "YAML config file (defaults when omitted)");
    sub->add_option("--set", args.overrides, "Override as dotted.key=value")->allow_extra_args(false);
    sub->add_option("-o,--out", args.out, "Output directory (overrides run.output_dir)");
    sub->add_option("-j,--threads", args.threads, "Worker threads (default: hardware threads)")->check(CLI::PositiveNumber);
    sub->add_option("--seed", args.seed, "Reserved; no stochastic components");
    runs.emplace_back(p, sub);
  }

  std::string manifest;
  std::string rerun_out;
  auto* rerun = cli.add_subcommand("rerun", "Run again from a manifest's config snapshot");
  rerun->add_option("manifest", manifest, "manifest.json or its directory")->required();
  rerun->add_option("-o,--out", rerun_out, "Output directory")->required();

  std::string dir_a;
  std::string dir_b;
  int digits = 12;
  auto* compare = cli.add_subcommand("compare", "Compare the result files of two runs");
  compare->add_option("first", dir_a)->required()->check(CLI::ExistingDirectory);
  compare->add_option("second", dir_b)->required()->check(CLI::ExistingDirectory);
  compare->add_option("--digits", digits, "Significant digits")->capture_default_str();

  std::string figure;
  std::vector<std::string> result_dirs;
  std::string plot_out;
  auto* plot = cli.add_subcommand("plotdata", "Export figure data from run directories");
  plot->add_option("figure", figure, "fig2 .. fig8")
      ->required()
      ->check(CLI::IsMember({"fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8"}));
  plot->add_option("results", result_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  plot->add_option("-o,--out", plot_out, "Output CSV")->required();

  auto* defaults = cli.add_subcommand("defaults", "Print the default config of a protocol as YAML");
  std::string default_protocol;
  defaults->add_option("protocol", default_protocol)->required()->check(CLI::IsMember(app::protocols()));

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : app::kConfigError;
  }

  try {
    for (const auto& [p, sub] : runs) {
      if (sub->parsed()) return run_command(p, args, argv_vec);
    }
    if (rerun->parsed()) {
      const auto outcome = app::rerun_manifest(manifest, rerun_out);
      std::cerr << "manifest: " << outcome.manifest.string() << "\n";
      return outcome.exit_code;
    }
    if (compare->parsed()) {
      const auto rep = app::compare_runs(dir_a, dir_b, digits);
      for (const auto& d : rep.differences) std::cout << d << "\n";
      std::cout << (rep.identical ? "identical" : "different") << " to " << digits << " significant digits\n";
      return rep.identical ? 0 : app::kFailure;
    }
    if (plot->parsed()) {
      app::plot_data(figure, {result_dirs.begin(), result_dirs.end()}, plot_out);
      std::cout << plot_out << "\n";
      return 0;
    }
    if (defaults->parsed()) {
      std::cout << config_to_yaml(default_config(default_protocol));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return app::kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::kFailure;
  }
  return app::kFailure;
}
