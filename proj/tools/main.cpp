#include "commands.hpp"
#include "config.hpp"

#include "affjord/errors.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <functional>
#include <iostream>

namespace {

using namespace affjord::cli;
using Command = std::function<int(const RunConfig&, std::ostream&)>;

struct Invocation {
  std::string config_path;
  std::string threads;
};

CLI::App* add_command(CLI::App& parent, const std::string& name, const std::string& help,
                      Invocation& inv) {
  CLI::App* sub = parent.add_subcommand(name, help);
  sub->add_option("-c,--config", inv.config_path, "key = value config file");
  sub->add_option("--threads", inv.threads, "worker threads (same as --threads in the file)");
  sub->allow_extras();
  sub->footer("Any config key can be given as --section.key value; see 'affjord keys'.");
  return sub;
}

RunConfig build_config(const Invocation& inv, const std::vector<std::string>& extras) {
  RawConfig raw = inv.config_path.empty() ? RawConfig{} : RawConfig::load(inv.config_path);
  if (const char* env = std::getenv("AFFJORD_OUTPUT_DIR"); env != nullptr && *env != '\0') {
    raw.set("output.dir", env);
  }
  if (!inv.threads.empty()) raw.set("threads", inv.threads);
  for (const auto& [key, value] : parse_flag_overrides(extras)) raw.set(key, value);
  return resolve(raw);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous normalizing flows with augmented (AFFJORD) dynamics"};
  app.require_subcommand(1);
  Invocation inv;

  std::vector<std::pair<CLI::App*, Command>> commands = {
      {add_command(app, "train", "train a model; writes checkpoint.txt and train_log.csv", inv), run_train},
      {add_command(app, "eval", "score fresh data under a model; writes eval.csv", inv), run_eval},
      {add_command(app, "sample", "draw samples; writes samples.csv", inv), run_sample},
      {add_command(app, "density", "log-density lattice; writes density.csv and density.pgm", inv),
       run_density},
      {add_command(app, "verify", "run the identity suite; writes verify.csv", inv), run_verify},
      {add_command(app, "benchmark", "FFJORD vs AFFJORD under equal budgets", inv), run_benchmark},
  };
  CLI::App* data = app.add_subcommand("data", "dataset utilities");
  data->require_subcommand(1);
  commands.emplace_back(add_command(*data, "dump", "write data.csv for the configured dataset", inv),
                        run_data_dump);
  app.add_subcommand("keys", "list every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (app.got_subcommand("keys")) {
    std::cout << describe_keys();
    return kExitOk;
  }
  for (const auto& [sub, run] : commands) {
    if (!sub->parsed()) continue;
    try {
      const RunConfig config = build_config(inv, sub->remaining());
      return run(config, std::cout);
    } catch (const std::exception& e) {
      std::cerr << describe_error(e) << "\n";
      return exit_code_for(e);
    }
  }
  return kExitValidation;
}
