#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <string>

#include "pohoflow/io.hpp"

using namespace pohoflow;

namespace {

json minimal_scalar() {
  return json{{"problem", "scalar"},
              {"dimension", 3},
              {"terms", {{{"a", 1.0}, {"p", 4.0}}}},
              {"m", 1.0}};
}

json small_system() {
  return json{{"problem", "system"},
              {"mu1", 1.0},
              {"mu2", 1.0},
              {"beta", -0.5},
              {"m1", 2.0},
              {"m2", 2.0},
              {"grid", {{"r_max", 14.0}, {"n", 1024}}}};
}

std::filesystem::path tmpdir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / "pohoflow_test" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("minimal scalar config is accepted with defaults") {
  const auto cfg = parse_config(minimal_scalar());
  CHECK(cfg.problem == "scalar");
  CHECK(cfg.spec.terms.size() == 1);
  CHECK(cfg.m == 1.0);
  CHECK(cfg.grid.n == 4096);
  CHECK(cfg.tol_grad == 1e-6);
}

TEST_CASE("system config with nonnegative beta is rejected naming the condition") {
  auto j = small_system();
  j["beta"] = 0.1;
  try {
    parse_config(j);
    CHECK(false);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("beta") != std::string::npos);
    CHECK(msg.find("repulsive") != std::string::npos);
  }
}

TEST_CASE("scalar config with subcritical exponent is rejected naming the window") {
  auto j = minimal_scalar();
  j["terms"] = {{{"a", 1.0}, {"p", 3.0}}};
  try {
    parse_config(j);
    CHECK(false);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2 + 4/N") != std::string::npos);
  }
}

TEST_CASE("malformed inputs raise config errors") {
  CHECK_THROWS_AS(parse_config(json{{"problem", "banana"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"problem", "scalar"}}), ConfigError);  // no terms
  auto j = minimal_scalar();
  j["m"] = -2.0;
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  auto j2 = small_system();
  j2["grid"]["n"] = 8;
  CHECK_THROWS_AS(parse_config(j2), ConfigError);
  auto j3 = small_system();
  j3["dimension"] = 2;  // the cubic system is three-dimensional
  CHECK_THROWS_AS(parse_config(j3), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), ConfigError);
}

TEST_CASE("function snapshots round-trip through JSON and CSV") {
  auto grid = make_grid(3, 10.0, 256, 1.4);
  auto u = sample_function(grid, [](double r) { return std::exp(-r) * std::cos(r); });
  const json j = function_to_json(u);
  const auto v = function_from_json(j);
  REQUIRE(v.size() == u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    CHECK(std::abs(v[i] - u[i]) <= 1e-12 * (1.0 + std::abs(u[i])));
    CHECK(std::abs(v.grid->nodes[i] - u.grid->nodes[i]) <= 1e-12 * (1.0 + u.grid->nodes[i]));
  }
  // rebuilt quadrature agrees
  CHECK(mass(v) == doctest::Approx(mass(u)).epsilon(1e-14));
  CHECK(grad_norm_sq(v) == doctest::Approx(grad_norm_sq(u)).epsilon(1e-14));

  const auto dir = tmpdir("roundtrip");
  write_function_csv(dir / "u.csv", u);
  const auto w = read_function_csv(dir / "u.csv", grid);
  for (std::size_t i = 0; i < u.size(); ++i)
    CHECK(std::abs(w[i] - u[i]) <= 1e-12 * (1.0 + std::abs(u[i])));
}

TEST_CASE("ground-state run emits the identity report and is deterministic") {
  auto j = minimal_scalar();
  j["grid"] = {{"r_max", 14.0}, {"n", 2048}};
  j["seed"] = 9;

  j["out"] = tmpdir("gs_a").string();
  auto cfg_a = parse_config(j);
  const auto man_a = run_ground_state(cfg_a);

  j["out"] = tmpdir("gs_b").string();
  auto cfg_b = parse_config(j);
  const auto man_b = run_ground_state(cfg_b);

  REQUIRE(man_a.files.size() == man_b.files.size());
  for (std::size_t k = 0; k < man_a.files.size(); ++k) {
    CHECK(man_a.files[k].first == man_b.files[k].first);
    CHECK(man_a.files[k].second == man_b.files[k].second);  // identical content hashes
  }

  std::ifstream in(std::filesystem::path(cfg_a.out_dir) / "identities.json");
  REQUIRE(in.good());
  const json ids = json::parse(in);
  CHECK(std::abs(ids.at("grad_ratio").get<double>() - 3.0) < 1e-3);
  CHECK(std::abs(ids.at("l4_ratio").get<double>() - 4.0) < 1e-3);
  CHECK(std::filesystem::exists(std::filesystem::path(cfg_a.out_dir) / "omega.csv"));
  CHECK(std::filesystem::exists(std::filesystem::path(cfg_a.out_dir) / "manifest.json"));
}

TEST_CASE("solve-single emits report, history and solution") {
  auto j = minimal_scalar();
  j["grid"] = {{"r_max", 14.0}, {"n", 1024}};
  j["m"] = 16.0;
  j["seed"] = 5;
  j["max_sweeps"] = 30;
  j["out"] = tmpdir("single").string();
  j["emit_plot_data"] = true;
  auto cfg = parse_config(j);
  const auto man = run_solve_single(cfg);
  CHECK(man.status == SolveStatus::Converged);
  const auto dir = std::filesystem::path(cfg.out_dir);
  for (const char* f : {"report.json", "level_history.csv", "solution.csv",
                        "path_energies.csv", "manifest.json"})
    CHECK(std::filesystem::exists(dir / f));
  std::ifstream in(dir / "report.json");
  const json rep = json::parse(in);
  CHECK(rep.at("critical").at("status").get<std::string>() == "converged");
  CHECK(rep.at("level").get<double>() > 0.0);
}

TEST_CASE("solve-system emits the report with the three identity residuals") {
  json j{{"problem", "system"}, {"mu1", 1.0},  {"mu2", 1.0}, {"beta", -0.5},
         {"m1", 18.9},          {"m2", 18.9},
         {"grid", {{"r_max", 18.0}, {"n", 2048}, {"grading", 50.0}}},
         {"nodes", 9},          {"max_sweeps", 12}};
  j["out"] = tmpdir("system").string();
  auto cfg = parse_config(j);
  const auto man = run_solve_system(cfg);
  CHECK(man.status == SolveStatus::Converged);
  const auto dir = std::filesystem::path(cfg.out_dir);
  std::ifstream in(dir / "system_report.json");
  REQUIRE(in.good());
  const json rep = json::parse(in);
  const auto& ids = rep.at("critical").at("identity_residuals");
  REQUIRE(ids.size() == 3);
  for (const auto& v : ids) CHECK(v.get<double>() < 1e-3);
  CHECK(std::filesystem::exists(dir / "solution.csv"));
  std::ifstream sol(dir / "solution.csv");
  std::string header;
  std::getline(sol, header);
  CHECK(header == "r,u1,u2");
}

TEST_CASE("flow-trace and gn-scan pipelines emit their artifacts") {
  auto j = minimal_scalar();
  j["grid"] = {{"r_max", 14.0}, {"n", 1024}};
  j["seed"] = 3;
  j["out"] = tmpdir("flow").string();
  auto cfg = parse_config(j);
  run_flow_trace(cfg, 60);
  CHECK(std::filesystem::exists(std::filesystem::path(cfg.out_dir) / "trace.csv"));
  CHECK(std::filesystem::exists(std::filesystem::path(cfg.out_dir) / "flow_summary.json"));

  j["grid"] = {{"r_max", 14.0}, {"n", 2048}};
  j["out"] = tmpdir("gn").string();
  auto cfg2 = parse_config(j);
  run_gn_scan(cfg2, 20);
  CHECK(std::filesystem::exists(std::filesystem::path(cfg2.out_dir) / "gn_scan.csv"));
  CHECK(std::filesystem::exists(std::filesystem::path(cfg2.out_dir) / "gn_summary.json"));
}

TEST_CASE("validate pipeline reads profiles and reports residuals without throwing") {
  // build a converged pair in beta = 0 test mode, then validate it as a
  // repulsive-system profile: residuals reported, nothing thrown
  auto grid = make_grid(3, 14.0, 2048, 1.0);
  auto gs = ground_state_omega(grid);
  SystemParams p{1.0, 1.0, -0.5, gs.mass, gs.mass};
  SystemProblem prob(grid, p);
  auto u1 = omega_rescaled(gs, p.m1, p.mu1);
  auto u2 = u1;
  for (std::size_t i = 0; i < u2.size(); ++i) u2[i] *= 1.0 + 0.02 * std::sin(grid->nodes[i]);
  renormalize_mass(u2, p.m2);
  auto crit = refine_system_critical(prob, SystemState(u1, u2, p));
  REQUIRE(crit.converged);

  const auto dir = tmpdir("validate");
  write_profiles_csv(dir / "solution.csv", crit.state);

  json j{{"problem", "system"}, {"mu1", 1.0}, {"mu2", 1.0}, {"beta", -0.5},
         {"m1", gs.mass}, {"m2", gs.mass},
         {"grid", {{"r_max", 14.0}, {"n", 2048}}},
         {"out", (dir / "out").string()}};
  auto cfg = parse_config(j);
  const auto man = run_validate(cfg, dir / "solution.csv");
  CHECK(man.status == SolveStatus::Converged);
  std::ifstream in(dir / "out" / "validation.json");
  const json rep = json::parse(in);
  CHECK(rep.at("lambda1").get<double>() > 0.0);
  CHECK(rep.at("identity_residuals")[0].get<double>() < 1e-3);
}
