#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "food/error.hpp"
#include "food/pipeline.hpp"

namespace food::cli {

// 0 success, 1 anything unclassified.
enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitMissingArtifact = 3,
  kExitFormat = 4,
  kExitNumeric = 5,
  kExitMismatch = 6,
};

int exit_code(ErrorKind kind);

struct CommandOptions {
  std::filesystem::path config;
  // replaces the artifacts directory named in the config
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
};

// Loads the config and applies --out and --seed.
pipeline::RunConfig resolve(const CommandOptions& o);

// Each command reads its inputs from and writes its outputs to the artifacts
// directory. Inputs whose lineage does not match the config raise kMismatch.
void cmd_train(const pipeline::RunConfig& cfg, std::ostream& log);
void cmd_finetune(const pipeline::RunConfig& cfg, std::ostream& log);
void cmd_craft(const pipeline::RunConfig& cfg, std::ostream& log);
void cmd_fit_detector(const pipeline::RunConfig& cfg, std::ostream& log);
void cmd_eval(const pipeline::RunConfig& cfg, std::ostream& log);
void cmd_bench(const pipeline::RunConfig& cfg, std::ostream& log);

// Runs `name` ("train", ..., "bench"); returns the exit code and reports any
// error on `err`.
int run_command(const std::string& name, const CommandOptions& o, std::ostream& log, std::ostream& err);

}  // namespace food::cli
