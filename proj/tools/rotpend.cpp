// rotpend: Melnikov predictions and numerical scattering maps for the
// rotator-pendulum system.  Run `rotpend --help` for the subcommands.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rotpend/commands.hpp"
#include "rotpend/config.hpp"

namespace {

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos)
      throw rotpend::ConfigError("--eps-grid: cannot read '" + item + "' as a number");
    out.push_back(v);
  }
  if (out.empty()) throw rotpend::ConfigError("--eps-grid is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rotpend;
  CLI::App app{"Melnikov predictions and numerical scattering maps for rotator-pendulum systems"};
  app.require_subcommand(1);
  std::string config_path, out_dir, eps_grid, format;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  bool plot = false;
  app.add_option("--config", config_path, "TOML run configuration (built-in defaults when omitted)")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (overrides output.dir)");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--eps-grid", eps_grid, "comma-separated eps values (overrides experiment.eps)");
  app.add_option("--format", format, "csv or json (overrides output.format)")
      ->check(CLI::IsMember({"csv", "json"}));
  app.add_flag("--plot", plot, "also write a gnuplot script for scatter and gronwall");

  auto* melnikov_cmd = app.add_subcommand("melnikov", "first-order splitting, action and angle changes");
  auto* scatter_cmd = app.add_subcommand("scatter", "numerical scattering map against the first-order prediction");
  auto* hamgen_cmd = app.add_subcommand("hamgen", "Melnikov potential, critical points and generating function");
  auto* gronwall_cmd = app.add_subcommand("gronwall", "perturbed vs unperturbed deviation over k ln(1/eps)");
  auto* selftest_cmd = app.add_subcommand("selftest", "identity checks and quick library checks");
  for (auto* sub : {melnikov_cmd, scatter_cmd, hamgen_cmd, gronwall_cmd, selftest_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  RunConfig rc;
  try {
    rc = config_path.empty() ? default_config() : load_config(config_path);
    if (!eps_grid.empty()) rc.experiment.eps = parse_grid(eps_grid);
    if (!format.empty()) rc.output.format = format;
    if (!out_dir.empty()) rc.output.dir = out_dir;
    rc.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    if (selftest_cmd->parsed()) {
      // the self-test always leaves a report behind
      const std::filesystem::path dir = out_dir.empty() ? "out" : out_dir;
      std::error_code ec;
      std::filesystem::create_directories(dir, ec);
      nlohmann::json report{{"schema_version", kReportSchemaVersion}, {"command", "selftest"},
                            {"exit_code", kExitConfig}, {"config", nullptr},
                            {"summary", {{"pass", false}, {"error", e.what()}}}};
      std::ofstream(dir / "selftest_report.json") << report.dump(2) << "\n";
    }
    return kExitConfig;
  }

  const bool selftest = selftest_cmd->parsed();
  CommandResult res;
  try {
    if (melnikov_cmd->parsed()) res = cmd_melnikov(rc, threads);
    if (scatter_cmd->parsed()) res = cmd_scatter(rc, threads);
    if (hamgen_cmd->parsed()) res = cmd_hamgen(rc, threads);
    if (gronwall_cmd->parsed()) res = cmd_gronwall(rc);
    if (selftest) res = cmd_selftest(rc);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    if (!selftest) return kExitNumerical;
    res.name = "selftest";
    res.exit_code = kExitNumerical;
    res.summary = {{"pass", false}, {"error", e.what()}};
  }

  try {
    for (const auto& f : write_outputs(res, rc, rc.output.dir)) std::cout << f.string() << "\n";
    if (plot && rc.output.format == "csv") {
      const std::string script = gnuplot_script(res);
      if (!script.empty()) {
        const auto p = std::filesystem::path(rc.output.dir) / (res.name + ".gp");
        std::ofstream(p) << script;
        std::cout << p.string() << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "cannot write output: " << e.what() << "\n";
    return kExitConfig;
  }
  if (selftest) {
    for (const auto& row : res.table.rows)
      std::cout << (row[3].get<bool>() ? "PASS " : "FAIL ") << row[0].get<std::string>()
                << (row[3].get<bool>() ? "" : ": " + row[4].get<std::string>()) << "\n";
  }
  if (res.exit_code != kExitOk) std::cerr << res.name << ": finished with failures\n";
  return res.exit_code;
}
