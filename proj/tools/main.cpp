#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace bilevel::cli;

int main(int argc, char** argv) {
  CLI::App app{"Bilevel learning of linear operators with primal-dual piggyback hypergradients"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  DenoiseArgs dargs;
  std::string filters, image, clean;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory (overrides 'out')");
    sub->add_option("--seed", seed, "overrides 'seed'");
  };
  CLI::App* train = app.add_subcommand("train", "run MAID and write history, budget and filters");
  CLI::App* check = app.add_subcommand("check-grad", "compare hypergradient bounds with finite differences");
  CLI::App* denoise = app.add_subcommand("denoise", "reconstruct an image with given filters");
  CLI::App* bench = app.add_subcommand("budget-bench", "adaptive MAID against the fixed-parameter baseline");
  for (CLI::App* s : {train, check, denoise, bench}) common(s);
  denoise->add_option("--filters", filters, "F64T filters file")->required();
  denoise->add_option("--image", image, "noisy PGM input");
  denoise->add_option("--clean", clean, "clean PGM reference");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  return guarded(
      [&] {
        RunConfig cfg = load_config(config_path);
        if (!out_dir.empty()) cfg.out = out_dir;
        if (seed) cfg.seed = *seed;
        if (*train) return cmd_train(cfg, std::cout);
        if (*check) return cmd_check_grad(cfg, std::cout);
        if (*bench) return cmd_budget_bench(cfg, std::cout);
        dargs.filters = filters;
        dargs.image = image;
        dargs.clean = clean;
        return cmd_denoise(cfg, dargs, std::cout);
      },
      std::cerr);
}
