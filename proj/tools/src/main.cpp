#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>

#include "advx/cli/commands.hpp"
#include "advx/errors.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::int64_t> seed;
  std::optional<std::int64_t> workers;
  std::vector<std::string> lambdas;
  std::vector<std::string> sets;
};

std::pair<std::string, std::string> split_assignment(const std::string& text, const char* flag) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw advx::ConfigError(std::string(flag) + " expects KEY=VALUE, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

advx::cli::CommandContext make_context(const Options& o, const std::string& command_line) {
  advx::cli::CommandContext ctx;
  if (!o.config.empty()) ctx.config.merge_file(o.config);
  for (const auto& s : o.sets) {
    auto [k, v] = split_assignment(s, "--set");
    ctx.config.set(k, v, "--set");
  }
  for (const auto& l : o.lambdas) {
    auto [attr, v] = split_assignment(l, "--lambda");
    ctx.config.set(advx::cli::kLambdaPrefix + attr, v, "--lambda");
  }
  if (o.seed) {
    for (const char* key : {"seed.model", "seed.data", "seed.adversary"}) {
      ctx.config.set(key, std::to_string(*o.seed), "--seed");
    }
  }
  if (o.workers) ctx.config.set("run.workers", std::to_string(*o.workers), "--workers");
  ctx.config.validate();
  ctx.out = o.out;
  ctx.log = &std::cout;
  ctx.command_line = command_line;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial multi-attribute unlearning for MultVAE recommenders"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(advx::cli::kVersion));

  Options options;
  using Command = std::function<int(const advx::cli::CommandContext&)>;
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"preprocess", "Load, filter and cache a dataset; write stats.tsv", advx::cli::cmd_preprocess},
      {"train", "Adversarial training phase per fold", advx::cli::cmd_train},
      {"attack", "Train attackers on the frozen encoders", advx::cli::cmd_attack},
      {"eval", "Ranking and attacker metrics per fold", advx::cli::cmd_eval},
      {"grid", "Lambda grid search over all folds", advx::cli::cmd_grid},
      {"export-embeddings", "Write test-user latents and attacker predictions",
       advx::cli::cmd_export_embeddings},
  };
  std::map<CLI::App*, Command> handlers;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", options.config, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", options.out, "Output directory")->required();
    sub->add_option("--seed", options.seed, "Sets seed.model, seed.data and seed.adversary");
    sub->add_option("--workers", options.workers, "Concurrent grid runs");
    sub->add_option("--lambda", options.lambdas, "ATTR=VALUE gradient reversal factor (repeatable)");
    sub->add_option("--set", options.sets, "KEY=VALUE configuration override (repeatable)");
    handlers[sub] = fn;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  std::string command_line;
  for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);
  try {
    for (const auto& [sub, fn] : handlers) {
      if (sub->parsed()) return fn(make_context(options, command_line));
    }
  } catch (const advx::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
