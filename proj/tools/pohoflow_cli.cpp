// pohoflow command-line driver.
//
// Subcommands: ground-state, solve-single, solve-system, minimax-surface,
// validate, gn-scan, flow-trace. Exit codes: 0 converged, 2 stalled,
// 3 invalid config. Worker threads come from POHOFLOW_THREADS.

#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pohoflow/io.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> grid_n;
  std::optional<double> r_max;
  std::optional<double> tol;
  bool emit_plot_data = false;
};

void add_common(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config_path, "JSON config file")->required();
  cmd->add_option("--out", ov.out, "output directory");
  cmd->add_option("--seed", ov.seed, "RNG seed");
  cmd->add_option("--grid-n", ov.grid_n, "grid node count");
  cmd->add_option("--r-max", ov.r_max, "domain truncation radius");
  cmd->add_option("--tol", ov.tol, "uniform tolerance for grad/pohozaev/energy");
  cmd->add_flag("--emit-plot-data", ov.emit_plot_data, "emit per-figure CSV data");
}

pohoflow::RunConfig load_with_overrides(const Overrides& ov) {
  pohoflow::json j;
  {
    std::ifstream in(ov.config_path);
    if (!in) throw pohoflow::ConfigError("cannot open config file: " + ov.config_path);
    try {
      j = pohoflow::json::parse(in);
    } catch (const pohoflow::json::parse_error& e) {
      throw pohoflow::ConfigError(std::string("config parse error: ") + e.what());
    }
  }
  if (ov.out) j["out"] = *ov.out;
  if (ov.seed) j["seed"] = *ov.seed;
  if (ov.grid_n) j["grid"]["n"] = *ov.grid_n;
  if (ov.r_max) j["grid"]["r_max"] = *ov.r_max;
  if (ov.tol) j["tol"] = {{"grad", *ov.tol}, {"pohozaev", *ov.tol}, {"energy", *ov.tol}};
  if (ov.emit_plot_data) j["emit_plot_data"] = true;
  return pohoflow::parse_config(j);
}

int status_to_exit(const pohoflow::RunManifest& man) {
  return man.status == pohoflow::SolveStatus::Stalled ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pohoflow: normalized solutions of nonlinear Schroedinger problems"};
  app.require_subcommand(1);

  Overrides ov_gs, ov_single, ov_system, ov_mm, ov_val, ov_gn, ov_flow;
  std::string profiles_path;
  int gn_samples = 100;
  int flow_budget = 200;

  add_common(app.add_subcommand("ground-state", "compute the cubic radial ground state"), ov_gs);
  add_common(app.add_subcommand("solve-single", "scalar mountain pass on the mass sphere"),
             ov_single);
  add_common(app.add_subcommand("solve-system", "two-parameter minimax for the cubic system"),
             ov_system);
  auto* mm = app.add_subcommand("minimax-surface",
                                "system minimax with surface/degree diagnostics");
  add_common(mm, ov_mm);
  auto* val = app.add_subcommand("validate", "validate a solution profile against the identities");
  add_common(val, ov_val);
  val->add_option("--profiles", profiles_path, "CSV file with columns r,u1,u2")->required();
  auto* gn = app.add_subcommand("gn-scan", "interpolation-ratio scan over random profiles");
  add_common(gn, ov_gn);
  gn->add_option("--samples", gn_samples, "number of random samples");
  auto* fl = app.add_subcommand("flow-trace", "run one deformation flow and emit its trace");
  add_common(fl, ov_flow);
  fl->add_option("--steps", flow_budget, "flow step budget");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("ground-state"))
      return status_to_exit(pohoflow::run_ground_state(load_with_overrides(ov_gs)));
    if (app.got_subcommand("solve-single"))
      return status_to_exit(pohoflow::run_solve_single(load_with_overrides(ov_single)));
    if (app.got_subcommand("solve-system"))
      return status_to_exit(pohoflow::run_solve_system(load_with_overrides(ov_system)));
    if (app.got_subcommand("minimax-surface"))
      return status_to_exit(pohoflow::run_minimax_surface(load_with_overrides(ov_mm)));
    if (app.got_subcommand("validate"))
      return status_to_exit(pohoflow::run_validate(load_with_overrides(ov_val), profiles_path));
    if (app.got_subcommand("gn-scan"))
      return status_to_exit(pohoflow::run_gn_scan(load_with_overrides(ov_gn), gn_samples));
    if (app.got_subcommand("flow-trace"))
      return status_to_exit(pohoflow::run_flow_trace(load_with_overrides(ov_flow), flow_budget));
  } catch (const pohoflow::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
