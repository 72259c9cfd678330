#include <iostream>

#include <CLI11.hpp>

#include "magschro/magschro.hpp"

using namespace magschro;

namespace {

int run_kind(const std::string& kind, const std::string& config_path, const std::string& out,
             const std::vector<std::string>& overrides, int jobs, bool print_config) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (cfg.kind != kind && !config_path.empty() && cfg.kind != ExperimentConfig{}.kind)
    throw ConfigError("kind", "config is for '" + cfg.kind + "' but the command is '" + kind + "'");
  cfg.kind = kind;
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "--set expects key=value");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!out.empty()) cfg.output = out;
  if (print_config) {
    std::cout << emit_config(cfg);
    return 0;
  }
  const RunResult r = run(cfg, cfg.output, jobs);
  std::cout << report((std::filesystem::path(cfg.output) / "manifest.json").string());
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical laboratory for damped magnetic Schroedinger equations"};
  app.require_subcommand(1);
  std::string config, out;
  std::vector<std::string> overrides;
  int jobs = 1;
  bool print_config = false;
  for (const auto& kind : experiment_kinds()) {
    auto* sub = app.add_subcommand(kind, "run the " + kind + " experiment");
    sub->add_option("--config", config, "key=value or JSON config file");
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--jobs", jobs, "worker cap")->check(CLI::PositiveNumber);
    sub->add_option("--set", overrides, "override a config key, key=value");
    sub->add_flag("--print-config", print_config, "print the resolved config and exit");
  }
  std::string manifest;
  auto* rep = app.add_subcommand("report", "summarize a manifest");
  rep->add_option("manifest", manifest, "path to manifest.json")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (rep->parsed()) {
      std::cout << report(manifest);
      return 0;
    }
    for (auto* sub : app.get_subcommands()) return run_kind(sub->get_name(), config, out, overrides, jobs, print_config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
