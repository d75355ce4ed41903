// Command-line front end for the EPiC pipeline.
//
// Errors are reported as one line on stderr, "error: <Category>: <message>",
// with a nonzero exit status.

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "epic/error.hpp"
#include "epic/pipeline.hpp"
#include "epic/runtime.hpp"

namespace {

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int fail(std::string_view category, const std::string& message, int code) {
  std::cerr << "error: " << category << ": " << one_line(message) << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  epic::configure_allocator();

  CLI::App app{"EPiC: point-cloud classification with a sampling-based ensemble"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "Run configuration file (key = value lines)");
  // Flag name -> config key. Flags override the config file.
  const std::map<std::string, std::string> flag_keys = {
      {"--seed", "seed"},         {"--out", "out"},           {"--k-tilde", "k_tilde"},
      {"--aggregate", "aggregate"}, {"--severity", "severity"}, {"--family", "family"}};
  std::map<std::string, std::string> flag_values;
  app.add_option("--seed", flag_values["--seed"], "Root seed (u64)");
  app.add_option("--out", flag_values["--out"], "Output directory");
  app.add_option("--k-tilde", flag_values["--k-tilde"], "Anchors per cloud");
  app.add_option("--aggregate", flag_values["--aggregate"], "Headline aggregation: mean|majority");
  app.add_option("--severity", flag_values["--severity"], "Corruption severity 1..5 or all");
  app.add_option("--family", flag_values["--family"], "Corruption family name or all");

  using Command = std::function<void(const epic::RunConfig&, std::ostream&)>;
  const std::map<std::string, std::pair<std::string, Command>> commands = {
      {"gen-data", {"Generate the synthetic train and test sets", epic::run_gen_data}},
      {"train", {"Train the full-cloud baseline and the three EPiC specialists", epic::run_train}},
      {"corrupt", {"Write the corrupted test sets", epic::run_corrupt}},
      {"eval", {"Evaluate baseline and EPiC on clean and corrupted sets", epic::run_eval}},
      {"diversity", {"Compare reseeded-baseline and EPiC ensemble diversity", epic::run_diversity}},
      {"importance", {"Write per-point importance tables", epic::run_importance}},
      {"report", {"Merge all outputs into one summary JSON", epic::run_report}},
  };
  for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.first);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what(), 2);
  }

  try {
    epic::RunConfig config;
    if (!config_path.empty()) config = epic::load_run_config(config_path);
    for (const auto& [flag, key] : flag_keys) {
      if (app.count(flag) > 0) config.set(key, flag_values[flag]);
    }
    config.validate();
    const std::string name = app.get_subcommands().front()->get_name();
    commands.at(name).second(config, std::cout);
  } catch (const epic::Error& e) {
    return fail(epic::to_string(e.kind()), e.what(), 1);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("IoError", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("Internal", e.what(), 3);
  }
  return 0;
}
