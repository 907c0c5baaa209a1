#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "food/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"FOOD out-of-distribution detection pipeline"};
  app.require_subcommand(1, 1);

  food::cli::CommandOptions opt;
  std::string config, out;
  std::uint64_t seed = 0;
  const char* commands[][2] = {{"train", "train the base classifier"},
                               {"finetune", "install the Gaussian head and fine-tune"},
                               {"craft", "craft artificial OOD samples from the validation split"},
                               {"fit-detector", "fit layer statistics, MD* and the detector neuron"},
                               {"eval", "score the test sets and write metrics"},
                               {"bench", "measure per-sample latency"}};
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c[0], c[1]);
    sub->add_option("--config", config, "JSON run config")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "artifacts directory (overrides the config)");
    sub->add_option("--seed", seed, "seed (overrides the config)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    // usage errors share the config exit code
    return rc == 0 ? 0 : food::cli::kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  opt.config = config;
  if (sub->count("--out")) opt.out = out;
  if (sub->count("--seed")) opt.seed = seed;
  return food::cli::run_command(sub->get_name(), opt, std::cerr, std::cerr);
}
