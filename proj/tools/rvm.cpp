#include "rvm/binary_io.hpp"
#include "rvm/harness.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

struct ConfigArgs {
  std::string scenario;
  std::string file;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a)
{
  cmd->add_option("--scenario", a.scenario,
                  "identities | free-wave | free-wave-tail | free-transport | rvm");
  cmd->add_option("--config", a.file, "key-value config file");
  cmd->add_option("--set", a.sets, "override, e.g. --set grid.n=32");
}

rvm::RunConfig build_config(const ConfigArgs& a, rvm::Scenario fallback)
{
  std::optional<rvm::Scenario> scenario;
  if (!a.scenario.empty()) scenario = rvm::parse_scenario(a.scenario);
  if (!scenario && !a.file.empty()) scenario = rvm::load_config(a.file).scenario;
  rvm::RunConfig c = rvm::preset(scenario.value_or(fallback));
  if (!a.file.empty()) c = rvm::load_config(a.file, c);
  if (scenario) c.scenario = *scenario;
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw rvm::ConfigError("--set expects key=value, got '" + s + "'");
    rvm::set_config_value(c, s.substr(0, eq), s.substr(eq + 1));
  }
  return c;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Desk-scale relativistic Vlasov-Maxwell lab"};
  app.require_subcommand(1);

  ConfigArgs id_args;
  bool negative = false;
  double h = 0.0;
  auto* identities = app.add_subcommand("identities", "exact identities and commutation suites");
  add_config_options(identities, id_args);
  identities->add_flag("--negative-controls", negative, "also witness plain d_v non-commutation");
  identities->add_option("--step", h, "finite-difference base step (identities.h)");

  ConfigArgs run_args;
  bool print_config = false, quiet = false;
  auto* run = app.add_subcommand("run", "simulate a scenario into a run directory");
  add_config_options(run, run_args);
  run->add_flag("--print-config", print_config, "print the resolved config and exit");
  run->add_flag("--quiet", quiet, "no progress lines");

  std::string run_dir, observable = "field_max";
  std::vector<double> window;
  auto* fit = app.add_subcommand("fit", "fit a power law to one observable of a run");
  fit->add_option("run", run_dir, "run directory or CSV file")->required();
  fit->add_option("--observable", observable, "observable name");
  fit->add_option("--window", window, "t_begin t_end")->expected(2);

  std::string dump;
  auto* info = app.add_subcommand("dump-info", "describe a field or particle dump");
  info->add_option("file", dump, "dump file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*identities) {
      rvm::RunConfig c = build_config(id_args, rvm::Scenario::Identities);
      if (negative) c.negative_controls = true;
      if (h > 0.0) c.fd_step = h;
      return rvm::cmd_identities(c, std::cout);
    }
    if (*run) {
      const rvm::RunConfig c = build_config(run_args, rvm::Scenario::FreeWave);
      if (print_config) {
        c.validate();
        std::cout << rvm::serialize_config(c);
        return 0;
      }
      const auto s = rvm::cmd_run(c, quiet ? nullptr : &std::cerr);
      std::cout << "run directory = " << s.directory.string() << '\n';
      std::ifstream report(s.directory / "report.txt");
      std::cout << report.rdbuf();
      return 0;
    }
    if (*fit) {
      double begin = 0.0, end = 0.0;
      if (window.size() == 2) {
        begin = window[0];
        end = window[1];
      } else {
        const std::filesystem::path dir(run_dir);
        const auto cfg = dir / "config.ini";
        if (!std::filesystem::is_directory(dir) || !std::filesystem::exists(cfg))
          throw rvm::ConfigError("--window is required without a run directory config");
        const rvm::RunConfig c = rvm::load_config(cfg);
        begin = c.fit_begin;
        end = observable.rfind("field", 0) == 0 ? c.field_fit_end() : c.particle_fit_end();
      }
      const rvm::DecayFit f = rvm::cmd_fit(run_dir, observable, begin, end);
      std::cout << rvm::format_fit(f, observable);
      std::cout.precision(4);
      std::cout << std::fixed << "p = " << f.exponent << " +- " << f.standard_error << '\n';
      return 0;
    }
    if (*info) {
      std::cout << rvm::dump_info(dump);
      return 0;
    }
  } catch (const rvm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const rvm::FitError& e) {
    std::cerr << "fit error: " << e.what() << '\n';
    return 2;
  } catch (const rvm::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
