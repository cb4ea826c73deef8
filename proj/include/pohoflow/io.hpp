// pohoflow: configuration, persistence and report emission.
//
// Configs and reports are JSON; array data (profiles, traces, histories) is
// CSV. All numbers are written with round-trip precision and every emitted
// file is listed in the run manifest with a content hash, so identical
// (config, seed) pairs reproduce byte-identical artifacts.
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pohoflow/deformation.hpp"
#include "pohoflow/minimax.hpp"
#include "pohoflow/scalar.hpp"
#include "pohoflow/system.hpp"

namespace pohoflow {

using nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Snapshots: grid + function to JSON, function(s) to CSV
// ---------------------------------------------------------------------------

inline json grid_to_json(const RadialGrid& grid) {
  return json{{"dimension", grid.dimension},
              {"r_max", grid.r_max()},
              {"n", grid.size()},
              {"nodes", grid.nodes}};
}

inline GridPtr grid_from_json(const json& j) {
  return grid_from_nodes(j.at("dimension").get<int>(),
                         j.at("nodes").get<std::vector<double>>());
}

inline json function_to_json(const RadialFunction& u) {
  return json{{"grid", grid_to_json(*u.grid)}, {"values", u.values}};
}

inline RadialFunction function_from_json(const json& j) {
  return RadialFunction(grid_from_json(j.at("grid")),
                        j.at("values").get<std::vector<double>>());
}

inline void write_function_csv(const std::filesystem::path& path, const RadialFunction& u) {
  std::ofstream out(path);
  out << "r,value\n";
  for (std::size_t i = 0; i < u.size(); ++i)
    out << format_double(u.grid->nodes[i]) << ',' << format_double(u[i]) << '\n';
}

/// Reads an "r,value" snapshot onto the supplied grid (nodes must match).
inline RadialFunction read_function_csv(const std::filesystem::path& path, const GridPtr& grid) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open function file: " + path.string());
  std::string line;
  std::getline(in, line);  // header
  RadialFunction u(grid);
  std::size_t i = 0;
  while (std::getline(in, line) && i < grid->size()) {
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    u[i] = std::stod(cell);
    ++i;
  }
  if (i != grid->size()) throw ConfigError("function row count does not match the grid");
  u.values.back() = 0.0;
  return u;
}

inline void write_profiles_csv(const std::filesystem::path& path, const SystemState& s) {
  std::ofstream out(path);
  out << "r,u1,u2\n";
  for (std::size_t i = 0; i < s.u1.size(); ++i)
    out << format_double(s.grid()->nodes[i]) << ',' << format_double(s.u1[i]) << ','
        << format_double(s.u2[i]) << '\n';
}

/// Reads an "r,u1,u2" profile onto the supplied grid (nodes must match).
inline SystemState read_profiles_csv(const std::filesystem::path& path, const GridPtr& grid,
                                     const SystemParams& params) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open profile file: " + path.string());
  std::string line;
  std::getline(in, line);  // header
  RadialFunction u1(grid), u2(grid);
  std::size_t i = 0;
  while (std::getline(in, line) && i < grid->size()) {
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    u1[i] = std::stod(cell);
    std::getline(ss, cell, ',');
    u2[i] = std::stod(cell);
    ++i;
  }
  if (i != grid->size())
    throw ConfigError("profile row count does not match the configured grid");
  u1.values.back() = 0.0;
  u2.values.back() = 0.0;
  return SystemState(std::move(u1), std::move(u2), params);
}

inline void write_trace_csv(const std::filesystem::path& path, const FlowTrace& trace) {
  std::ofstream out(path);
  out << "t,J,P,grad_norm,theta,step,cutoff\n";
  for (const auto& r : trace.records)
    out << format_double(r.time) << ',' << format_double(r.J) << ',' << format_double(r.P) << ','
        << format_double(r.grad_norm) << ',' << format_double(r.theta) << ','
        << format_double(r.step) << ',' << format_double(r.cutoff) << '\n';
}

inline void write_history_csv(const std::filesystem::path& path,
                              const std::vector<std::pair<int, double>>& history) {
  std::ofstream out(path);
  out << "iteration,level\n";
  for (const auto& [it, lv] : history) out << it << ',' << format_double(lv) << '\n';
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json report_to_json(const CriticalPointReport& rep) {
  return json{{"lambda", rep.lambda},
              {"energy", rep.energy},
              {"pohozaev_residual", rep.pohozaev_residual},
              {"gradient_dual_norm", rep.gradient_dual_norm},
              {"decay_rate", rep.decay_rate},
              {"mass", rep.mass},
              {"status", to_string(rep.status)}};
}

inline json report_to_json(const SystemReport& rep) {
  return json{{"lambda1", rep.lambda1},
              {"lambda2", rep.lambda2},
              {"energy", rep.energy},
              {"pohozaev_residual", rep.pohozaev_residual},
              {"identity_residuals", rep.identity_residuals},
              {"positivity", rep.positivity},
              {"decay_rates", rep.decay_rates},
              {"decay_matches_lambda", rep.decay_matches_lambda},
              {"gradient_dual_norm", rep.gradient_dual_norm},
              {"status", to_string(rep.status)}};
}

inline json minimax_report_to_json(const MinimaxReport& rep) {
  json j{{"level", rep.level},
         {"maximizer", rep.maximizer},
         {"reference_level", rep.reference_level},
         {"theta_residual", rep.theta_residual},
         {"slice_dual_norm", rep.slice_dual},
         {"fiber_defect", rep.fiber_defect},
         {"status", to_string(rep.status)},
         {"sweeps", rep.history.size()}};
  if (rep.scalar_critical) j["critical"] = report_to_json(*rep.scalar_critical);
  if (rep.system_report) j["critical"] = report_to_json(*rep.system_report);
  return j;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct GridConfig {
  int dimension = 3;
  double r_max = 20.0;
  std::size_t n = 4096;
  double grading = 1.0;
};

struct RunConfig {
  std::string problem;  // "scalar" | "system"
  GridConfig grid;
  // scalar
  PowerNonlinearity spec;
  double m = 1.0;
  // system
  SystemParams params;
  // shared
  double tol_grad = 1e-6, tol_pohozaev = 1e-6, tol_energy = 1e-6;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int nodes = 17;
  int max_sweeps = 400;
  bool emit_plot_data = false;
  json raw;  // canonical config for hashing
};

inline GridPtr build_grid(const GridConfig& g) {
  return make_grid(g.dimension, g.r_max, g.n, g.grading);
}

inline RunConfig parse_config(const json& j) {
  RunConfig cfg;
  cfg.raw = j;
  if (!j.contains("problem")) throw ConfigError("config: missing \"problem\" (scalar|system)");
  cfg.problem = j.at("problem").get<std::string>();
  if (cfg.problem != "scalar" && cfg.problem != "system")
    throw ConfigError("config: problem must be \"scalar\" or \"system\"");

  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    cfg.grid.dimension = g.value("dimension", 3);
    cfg.grid.r_max = g.value("r_max", 20.0);
    cfg.grid.n = g.value("n", std::size_t{4096});
    cfg.grid.grading = g.value("grading", 1.0);
  }
  if (j.contains("dimension")) cfg.grid.dimension = j.at("dimension").get<int>();
  if (cfg.grid.dimension != 2 && cfg.grid.dimension != 3)
    throw ConfigError("config: dimension must be 2 or 3");
  if (!(cfg.grid.r_max > 0) || cfg.grid.n < 64)
    throw ConfigError("config: grid needs r_max > 0 and n >= 64");

  if (cfg.problem == "scalar") {
    if (!j.contains("terms")) throw ConfigError("config: scalar problem needs \"terms\"");
    cfg.spec.dimension = cfg.grid.dimension;
    cfg.spec.positive_part = j.value("positive_part", false);
    for (const auto& t : j.at("terms"))
      cfg.spec.terms.push_back({t.at("a").get<double>(), t.at("p").get<double>()});
    try {
      validate_growth(cfg.spec);
    } catch (const std::exception& e) {
      // re-tag with the condition the growth window encodes
      throw ConfigError(std::string("config: ") + e.what() +
                        " [mass-supercritical window: 2 + 4/N < p < 2*]");
    }
    cfg.m = j.value("m", 1.0);
    if (!(cfg.m > 0)) throw ConfigError("config: mass m must be positive");
  } else {
    cfg.params.mu1 = j.value("mu1", 1.0);
    cfg.params.mu2 = j.value("mu2", 1.0);
    cfg.params.beta = j.value("beta", -1.0);
    cfg.params.m1 = j.value("m1", 1.0);
    cfg.params.m2 = j.value("m2", 1.0);
    if (cfg.grid.dimension != 3)
      throw ConfigError("config: the cubic system is posed in dimension 3");
    try {
      cfg.params.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: ") + e.what() +
                        " [focusing-repulsive regime: mu_i > 0, beta < 0, m_i > 0]");
    }
  }

  if (j.contains("tol")) {
    const auto& t = j.at("tol");
    cfg.tol_grad = t.value("grad", 1e-6);
    cfg.tol_pohozaev = t.value("pohozaev", 1e-6);
    cfg.tol_energy = t.value("energy", 1e-6);
    if (!(cfg.tol_grad > 0 && cfg.tol_pohozaev > 0 && cfg.tol_energy > 0))
      throw ConfigError("config: tolerances must be positive");
  }
  cfg.seed = j.value("seed", std::uint64_t{1});
  cfg.out_dir = j.value("out", std::string("out"));
  cfg.nodes = j.value("nodes", 17);
  if (cfg.nodes < 5) throw ConfigError("config: need at least 5 path/surface nodes");
  cfg.max_sweeps = j.value("max_sweeps", 400);
  cfg.emit_plot_data = j.value("emit_plot_data", false);
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct RunManifest {
  std::string config_hash;
  std::string version = kVersion;
  std::vector<std::pair<std::string, double>> timings;  // (phase, seconds)
  std::vector<std::pair<std::string, std::string>> files;  // (name, content hash)
  SolveStatus status = SolveStatus::Converged;
};

inline json manifest_to_json(const RunManifest& man) {
  json files = json::object();
  for (const auto& [name, hash] : man.files) files[name] = hash;
  json timings = json::object();
  for (const auto& [phase, secs] : man.timings) timings[phase] = secs;
  return json{{"config_hash", man.config_hash},
              {"version", man.version},
              {"status", to_string(man.status)},
              {"timings", timings},
              {"files", files}};
}

class RunEmitter {
 public:
  RunEmitter(const RunConfig& cfg) : dir_(cfg.out_dir) {
    std::filesystem::create_directories(dir_);
    const std::string canonical = cfg.raw.dump();
    manifest_.config_hash = hash_hex(fnv1a64({canonical.data(), canonical.size()}));
  }

  const std::filesystem::path& dir() const { return dir_; }
  RunManifest& manifest() { return manifest_; }

  void add_file(const std::string& name) {
    std::ifstream in(dir_ / name, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    manifest_.files.emplace_back(name, hash_hex(fnv1a64({bytes.data(), bytes.size()})));
  }

  void write_json(const std::string& name, const json& j) {
    std::ofstream out(dir_ / name);
    out << j.dump(2) << '\n';
    out.close();
    add_file(name);
  }

  template <class F>
  void time_phase(const std::string& phase, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    const auto t1 = std::chrono::steady_clock::now();
    manifest_.timings.emplace_back(phase, std::chrono::duration<double>(t1 - t0).count());
  }

  void finalize() {
    // the manifest lists payload files only; it carries wall times itself
    std::ofstream out(dir_ / "manifest.json");
    out << manifest_to_json(manifest_).dump(2) << '\n';
  }

 private:
  std::filesystem::path dir_;
  RunManifest manifest_;
};

// ---------------------------------------------------------------------------
// Pipelines. Each returns the manifest; the CLI maps status to exit codes.
// ---------------------------------------------------------------------------

inline MinimaxOptions minimax_options(const RunConfig& cfg) {
  MinimaxOptions opt;
  opt.nodes = cfg.nodes;
  opt.max_sweeps = cfg.max_sweeps;
  opt.seed = cfg.seed;
  opt.tol_grad = cfg.tol_grad;
  opt.tol_pohozaev = cfg.tol_pohozaev;
  opt.tol_energy = cfg.tol_energy;
  return opt;
}

inline RunManifest run_ground_state(const RunConfig& cfg) {
  RunEmitter em(cfg);
  GridPtr grid;
  GroundState gs;
  em.time_phase("ground_state", [&] {
    grid = build_grid(cfg.grid);
    gs = ground_state_omega(grid);
  });
  write_function_csv(em.dir() / "omega.csv", gs.omega);
  em.add_file("omega.csv");
  em.write_json("identities.json",
                json{{"mass", gs.mass},
                     {"center_value", gs.center_value},
                     {"grad_ratio", gs.identities[0]},
                     {"l4_ratio", gs.identities[1]},
                     {"grid", {{"dimension", cfg.grid.dimension},
                               {"r_max", cfg.grid.r_max},
                               {"n", cfg.grid.n},
                               {"grading", cfg.grid.grading}}}});
  em.finalize();
  return em.manifest();
}

inline RunManifest run_solve_single(const RunConfig& cfg) {
  if (cfg.problem != "scalar") throw ConfigError("solve-single requires a scalar config");
  RunEmitter em(cfg);
  GridPtr grid = build_grid(cfg.grid);
  SphereConstraint constraint(cfg.m);
  MinimaxReport rep;
  em.time_phase("mountain_pass", [&] {
    rep = mountain_pass_single(grid, constraint, cfg.spec, minimax_options(cfg));
  });
  em.write_json("report.json", minimax_report_to_json(rep));
  write_history_csv(em.dir() / "level_history.csv", rep.history);
  em.add_file("level_history.csv");
  if (rep.scalar_critical) {
    write_function_csv(em.dir() / "solution.csv", rep.scalar_critical->solution);
    em.add_file("solution.csv");
  }
  if (cfg.emit_plot_data && !rep.final_node_energies.empty()) {
    std::ofstream out(em.dir() / "path_energies.csv");
    out << "node,I\n";
    for (std::size_t i = 0; i < rep.final_node_energies.size(); ++i)
      out << i << ',' << format_double(rep.final_node_energies[i]) << '\n';
    out.close();
    em.add_file("path_energies.csv");
  }
  em.manifest().status = rep.status;
  em.finalize();
  return em.manifest();
}

inline RunManifest run_solve_system(const RunConfig& cfg) {
  if (cfg.problem != "system") throw ConfigError("solve-system requires a system config");
  RunEmitter em(cfg);
  GridPtr grid = build_grid(cfg.grid);
  MinimaxReport rep;
  em.time_phase("surface_minimax", [&] {
    rep = surface_minimax(grid, cfg.params, minimax_options(cfg));
  });
  em.write_json("system_report.json", minimax_report_to_json(rep));
  write_history_csv(em.dir() / "level_history.csv", rep.history);
  em.add_file("level_history.csv");
  if (rep.system_report) {
    write_profiles_csv(em.dir() / "solution.csv", rep.system_report->state);
    em.add_file("solution.csv");
  }
  if (cfg.emit_plot_data && !rep.final_node_energies.empty()) {
    std::ofstream out(em.dir() / "surface_heatmap.csv");
    out << "s,t,I\n";
    const int K = cfg.nodes;
    for (int j = 0; j < K; ++j)
      for (int i = 0; i < K; ++i)
        out << format_double(double(i) / (K - 1)) << ',' << format_double(double(j) / (K - 1))
            << ',' << format_double(rep.final_node_energies[std::size_t(j) * K + i]) << '\n';
    out.close();
    em.add_file("surface_heatmap.csv");
  }
  em.manifest().status = rep.status;
  em.finalize();
  return em.manifest();
}

inline RunManifest run_validate(const RunConfig& cfg, const std::filesystem::path& profiles) {
  if (cfg.problem != "system") throw ConfigError("validate requires a system config");
  RunEmitter em(cfg);
  GridPtr grid = build_grid(cfg.grid);
  SystemState state = read_profiles_csv(profiles, grid, cfg.params);
  state.retract();
  const auto sg = system_gradient(state);
  const double c = energy_Istar(state);
  SystemReport rep = validate_solution(state, sg.lambda1, sg.lambda2, c);
  rep.gradient_dual_norm = std::sqrt(h1_norm_sq(sg.grad1) + h1_norm_sq(sg.grad2));
  const bool ok = rep.identity_residuals[0] < 1e-3 && rep.identity_residuals[1] < 1e-3 &&
                  rep.identity_residuals[2] < 1e-3 && rep.lambda1 > 0 && rep.lambda2 > 0 &&
                  rep.positivity[0] && rep.positivity[1];
  rep.status = ok ? SolveStatus::Converged : SolveStatus::Flowing;
  em.write_json("validation.json", report_to_json(rep));
  em.manifest().status = rep.status;
  em.finalize();
  return em.manifest();
}

inline RunManifest run_gn_scan(const RunConfig& cfg, int samples = 100) {
  if (cfg.problem != "scalar") throw ConfigError("gn-scan requires a scalar config");
  RunEmitter em(cfg);
  GridPtr grid = build_grid(cfg.grid);
  SphereConstraint constraint(cfg.m);
  const double p = cfg.spec.terms.front().p;
  Rng rng(cfg.seed);
  double best = 0.0;
  {
    std::ofstream out(em.dir() / "gn_scan.csv");
    out << "sample,ratio\n";
    for (int k = 0; k < samples; ++k) {
      const auto u = random_sphere_function(grid, constraint, rng);
      const double r = gn_ratio(u, p);
      best = std::max(best, r);
      out << k << ',' << format_double(r) << '\n';
    }
  }
  em.add_file("gn_scan.csv");
  json summary{{"p", p}, {"samples", samples}, {"max_ratio", best}};
  if (cfg.grid.dimension == 3 && p == 4.0) {
    try {
      const auto gs = ground_state_omega(grid);
      summary["ground_state_ratio"] = gn_ratio(gs.omega, p);
    } catch (const std::exception& e) {
      summary["ground_state_ratio_error"] = e.what();
    }
  }
  em.write_json("gn_summary.json", summary);
  em.finalize();
  return em.manifest();
}

inline RunManifest run_flow_trace(const RunConfig& cfg, int budget = 200) {
  if (cfg.problem != "scalar") throw ConfigError("flow-trace requires a scalar config");
  RunEmitter em(cfg);
  GridPtr grid = build_grid(cfg.grid);
  SphereConstraint constraint(cfg.m);
  ScalarProblem prob(grid, cfg.spec, constraint);
  Rng rng(cfg.seed);
  AugmentedPoint<ScalarProblem> at{0.0, random_sphere_function(grid, constraint, rng)};
  FlowConfig fc;
  fc.level_b = prob.J(0.0, at.u);
  fc.eps_bar = 0.1 * std::max(std::abs(fc.level_b), 1.0);
  fc.tol_grad = cfg.tol_grad;
  fc.tol_pohozaev = cfg.tol_pohozaev;
  fc.tol_energy = cfg.tol_energy;
  FlowTrace trace;
  em.time_phase("flow", [&] { trace = flow_integrate(prob, at, fc, budget); });
  write_trace_csv(em.dir() / "trace.csv", trace);
  em.add_file("trace.csv");
  const auto status = psp_monitor(trace, fc);
  em.write_json("flow_summary.json", json{{"records", trace.records.size()},
                                          {"status", to_string(status)},
                                          {"final_J", trace.tail().J},
                                          {"final_P", trace.tail().P},
                                          {"final_grad_norm", trace.tail().grad_norm}});
  em.manifest().status = status == SolveStatus::Stalled ? SolveStatus::Stalled
                                                        : SolveStatus::Converged;
  em.finalize();
  return em.manifest();
}

/// Surface-minimax diagnostics run: emits the explicit initial surface
/// (energy heatmap), its boundary winding number and joint Pohozaev
/// intersection, then the full minimax solve.
inline RunManifest run_minimax_surface(RunConfig cfg) {
  if (cfg.problem != "system") throw ConfigError("minimax-surface requires a system config");
  cfg.emit_plot_data = true;
  RunEmitter em(cfg);
  GridPtr grid = build_grid(cfg.grid);
  GroundState gs;
  SurfaceOnProduct surf;
  em.time_phase("initial_surface", [&] {
    gs = ground_state_omega(grid);
    const auto [l1, b1] = scalar_b_i(cfg.params.m1, cfg.params.mu1, gs);
    const auto [l2, b2] = scalar_b_i(cfg.params.m2, cfg.params.mu2, gs);
    (void)l1;
    (void)l2;
    surf = initial_surface(grid, cfg.params, gs, 0.01 * std::min(b1, b2), cfg.nodes);
  });
  {
    std::ofstream out(em.dir() / "initial_surface_heatmap.csv");
    out << "s,t,I\n";
    const int K = surf.side;
    for (int j = 0; j < K; ++j)
      for (int i = 0; i < K; ++i)
        out << format_double(double(i) / (K - 1)) << ',' << format_double(double(j) / (K - 1))
            << ',' << format_double(energy_Istar(surf.at(i, j))) << '\n';
  }
  em.add_file("initial_surface_heatmap.csv");
  DegreeIntersection di;
  em.time_phase("degree_intersection", [&] { di = degree_intersection(surf); });
  em.write_json("degree_intersection.json", json{{"s", di.s},
                                                 {"t", di.t},
                                                 {"P1", di.P1},
                                                 {"P2", di.P2},
                                                 {"energy", di.energy},
                                                 {"winding", di.winding}});
  MinimaxReport rep;
  em.time_phase("surface_minimax", [&] {
    rep = surface_minimax(grid, cfg.params, minimax_options(cfg));
  });
  em.write_json("system_report.json", minimax_report_to_json(rep));
  write_history_csv(em.dir() / "level_history.csv", rep.history);
  em.add_file("level_history.csv");
  if (rep.system_report) {
    write_profiles_csv(em.dir() / "solution.csv", rep.system_report->state);
    em.add_file("solution.csv");
  }
  em.manifest().status = rep.status;
  em.finalize();
  return em.manifest();
}

/// Dispatch by the config's problem kind (scalar -> mountain pass,
/// system -> surface minimax).
inline RunManifest run(const RunConfig& cfg) {
  return cfg.problem == "scalar" ? run_solve_single(cfg) : run_solve_system(cfg);
}

}  // namespace pohoflow
