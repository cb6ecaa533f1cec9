#include "cil/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cil/errors.hpp"
#include "cil/experiment.hpp"

namespace cil {

namespace {

int do_run(const std::string& config_path, const std::string& out_override,
           const std::string& seed_override, const std::string& method_filter) {
  ExperimentConfig config = parse_config_file(config_path);

  if (!out_override.empty()) {
    config.out_dir = out_override;
  } else if (const char* env = std::getenv("CIL_OUT_DIR"); env && *env) {
    config.out_dir = env;
  }
  if (!seed_override.empty()) {
    config.seeds.clear();
    std::size_t pos = 0;
    config.seeds.push_back(std::stoull(seed_override, &pos));
    if (pos != seed_override.size()) throw ConfigError("--seed-override expects an integer");
  }
  if (!method_filter.empty()) {
    std::vector<MethodSpec> keep;
    std::string cur;
    auto flush = [&] {
      if (cur.empty()) return;
      const MethodSpec wanted = MethodSpec::parse(cur);
      for (const auto& m : config.methods)
        if (m.method == wanted.method) keep.push_back(m);
      cur.clear();
    };
    for (char c : method_filter) {
      if (c == ',') flush();
      else if (!std::isspace(static_cast<unsigned char>(c))) cur.push_back(c);
    }
    flush();
    if (keep.empty()) throw ConfigError("--method-filter matches none of the configured methods");
    config.methods = std::move(keep);
  }

  run_experiment(config);
  return 0;
}

int do_gradcheck(std::size_t instances, const std::string& inject_fault) {
  const GradCheckResult result = run_gradcheck(instances, inject_fault);
  bool ok = true;
  for (const auto& entry : result.entries) {
    const bool pass = entry.max_rel_err < result.tolerance;
    std::printf("%-16s max_rel_err %.3e  %s", entry.name.c_str(), entry.max_rel_err,
                pass ? "ok" : "FAIL");
    if (!pass) std::printf(" (instance seed %llu)", static_cast<unsigned long long>(entry.worst_seed));
    std::printf("\n");
    ok = ok && pass;
  }
  return ok ? 0 : 1;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"cil_lab - desk-scale class-incremental learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::string seed_override;
  std::string method_filter;
  auto* run = app.add_subcommand("run", "run every (method, seed) pair of an experiment config");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out", out_override, "output directory (overrides config and CIL_OUT_DIR)");
  run->add_option("--seed-override", seed_override, "replace the config's seed list");
  run->add_option("--method-filter", method_filter, "comma list restricting the config's methods");

  std::size_t instances = 1000;
  std::string inject_fault;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of every loss gradient");
  gradcheck->add_option("--instances", instances, "random instances per loss (default 1000)");
  gradcheck->add_option("--inject-fault", inject_fault,
                        "perturb the named loss's analytic gradient (testing hook)");

  std::vector<std::string> run_dirs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "side-by-side summary of completed run directories");
  compare->add_option("dirs", run_dirs, "run directories (<out>/<method>/<seed>)")->expected(-1);
  compare->add_option("--out", compare_out, "write compare.csv/compare.json here instead of stdout");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "re-render CSV outputs from a run's JSON reports");
  report->add_option("dir", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return do_run(config_path, out_override, seed_override, method_filter);
    if (gradcheck->parsed()) return do_gradcheck(instances, inject_fault);
    if (compare->parsed()) {
      compare_runs(run_dirs, compare_out);
      return 0;
    }
    if (report->parsed()) {
      rerender_run(report_dir);
      return 0;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IngestError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

} // namespace cil
