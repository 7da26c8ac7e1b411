#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "advx/cli/run_config.hpp"

namespace advx::cli {

struct CommandContext {
  RunConfig config;
  std::filesystem::path out;
  std::ostream* log = nullptr;
  std::string command_line;  // recorded in manifests
};

// Each command returns the process exit code (0 iff all requested work
// succeeded) and throws on configuration or data errors.
int cmd_preprocess(const CommandContext& ctx);
int cmd_train(const CommandContext& ctx);
int cmd_attack(const CommandContext& ctx);
int cmd_eval(const CommandContext& ctx);
int cmd_grid(const CommandContext& ctx);
int cmd_export_embeddings(const CommandContext& ctx);

/// Directory name of one grid combination, e.g. "gender=400_age=0".
std::string combination_dir(const adv::LambdaConfig& lambdas,
                            const std::vector<std::string>& order);

/// Shortest decimal text that parses back to the same double.
std::string format_number(double value);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace advx::cli
