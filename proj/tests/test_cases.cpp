#include <catch_amalgamated.hpp>

#include <sstream>

#include "relabel/cases.hpp"

using namespace relabel;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "relabel_test_cases" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

// A coarse grid that still holds the 2 km bubble.
RunConfig small_config() {
  RunConfig c;
  c.nx = 20;
  c.nz = 10;
  c.dx = c.dz = 1000.0;
  c.dt = 20.0;
  c.t_end = 60.0;
  c.threads = 1;
  return c;
}

std::string message_of(const ConfigPairs& pairs) {
  try {
    (void)config_from_pairs(pairs);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("config text parsing") {
  const auto pairs = parse_config_text("# comment\ncase = half\n\n  dt=4 # trailing\nscheme = 1,6\n");
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[1] == std::pair<std::string, std::string>{"dt", "4"});
  const auto c = config_from_pairs(pairs);
  CHECK(c.kind == CaseKind::half_bubble);
  CHECK(c.dt == 4.0);
  CHECK(c.schemes == std::vector<SchemeConfig>{named_scheme(1), named_scheme(6)});
  CHECK_THROWS_AS(parse_config_text("dt 4\n"), ConfigError);
}

TEST_CASE("validation messages name the offending key") {
  CHECK(message_of({{"t_end", "1001"}}).starts_with("t_end:"));
  CHECK(message_of({{"dt", "fast"}}).starts_with("dt:"));
  CHECK(message_of({{"colour", "red"}}).starts_with("colour:"));
  CHECK(message_of({{"scheme", "7"}}).starts_with("scheme:"));
  CHECK(message_of({{"nx", "0"}}).starts_with("nx:"));
  CHECK(message_of({{"preset", "huge"}}).starts_with("preset:"));
  CHECK(message_of({{"bubble_form", "round"}}).starts_with("bubble_form:"));
  CHECK(message_of({{"t_end", "0"}}).empty());
}

TEST_CASE("presets apply before the other keys") {
  const auto c = config_from_pairs({{"dt", "1"}, {"preset", "paper"}});
  CHECK(c.nx == 200);
  CHECK(c.nz == 100);
  CHECK(c.dx == 100.0);
  CHECK(c.dt == 1.0);
  CHECK(c.steps() == 1000);
  const auto d = config_from_pairs({});
  CHECK(d.nx == 50);
  CHECK(d.steps() == 125);
}

TEST_CASE("full bubble starts with the single-fluid mass, all in fluid 1") {
  const auto c = small_config();
  const auto full = build_case(c);
  const auto single = build_case(c, CaseKind::single_fluid);
  REQUIRE(full.state.fluids.size() == 2);
  CHECK(full.state.fluids[0].eta.max() == 0);
  CHECK(full.state.fluids[1].eta == single.state.fluids[0].eta);
  CHECK(full.state.fluids[1].theta == single.state.fluids[0].theta);
  CHECK(full.closure.kind == TransferClosure::Kind::relabel);
  CHECK_FALSE(full.closure.cap_rate);
  CHECK(single.closure.kind == TransferClosure::Kind::none);
}

TEST_CASE("half bubble volume fractions") {
  const auto c = small_config();
  const auto h = build_case(c, CaseKind::half_bubble);
  const auto& s = h.state;
  const auto g = s.grid;
  const auto b = bubble_geometry(c);
  double smax = 0;
  for (int k = 0; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) {
      const double rho1 = fluid_density(s.pi(i, k), s.fluids[1].theta(i, k), dry_air);
      const double rho0 = fluid_density(s.pi(i, k), s.fluids[0].theta(i, k), dry_air);
      const double s1 = s.fluids[1].eta(i, k) / rho1;
      const double s0 = s.fluids[0].eta(i, k) / rho0;
      smax = std::max(smax, s1);
      const auto L = b.distance(g.xc(i), g.zc(k));
      if (!(L && *L < 1.0)) CHECK(s.fluids[1].eta(i, k) == 0);
      CHECK(s0 + s1 == Catch::Approx(1.0).epsilon(1e-14));
    }
  CHECK(smax == Catch::Approx(0.5).epsilon(1e-14));
  CHECK(h.closure.kind == TransferClosure::Kind::diffusive);
  CHECK(h.closure.cap_rate);
}

TEST_CASE("t_end = 0 writes only the initial dumps") {
  auto c = small_config();
  c.kind = CaseKind::single_fluid;
  c.t_end = 0;
  c.dump_every = 1;
  c.out = scratch("t0");
  std::ostringstream log;
  CHECK(run(c, log) == 0);
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(c.out / "single_fluid" / "fields"))
    names.push_back(e.path().filename().string());
  CHECK(names.size() == 5);
  for (const auto& n : names) CHECK(n.starts_with("step_000000_"));
  const auto diag = slurp(c.out / "single_fluid" / "diagnostics.csv");
  CHECK(std::count(diag.begin(), diag.end(), '\n') == 2);
}

TEST_CASE("full-bubble batch writes a twenty-row table, reproducibly") {
  auto c = small_config();
  c.out = scratch("a");
  std::ostringstream log;
  REQUIRE(run(c, log) == 0);
  const auto table = slurp(c.out / "table_full_bubble.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 21);
  CHECK(table.find("M1_C0A0_m_m,,nan,nan,inf,1,0,nan") != std::string::npos);

  auto d = c;
  d.out = scratch("b");
  d.threads = 3;
  REQUIRE(run(d, log) == 0);
  CHECK(slurp(d.out / "table_full_bubble.csv") == table);
  CHECK(slurp(d.out / "M2_C1A1" / "diagnostics.csv") == slurp(c.out / "M2_C1A1" / "diagnostics.csv"));
  CHECK(std::filesystem::exists(c.out / "reference_single_fluid" / "diagnostics.csv"));
  CHECK(std::filesystem::exists(c.out / "M1_C0A0_m_m" / "failure.txt"));
}

TEST_CASE("conservative schemes track the single-fluid energy on the coarse bubble") {
  auto c = small_config();
  c.schemes = parse_scheme_list("named");
  const auto batch = run_bubble_batch(c, false);
  REQUIRE(batch.reference);
  for (const auto& r : batch.runs) {
    CHECK_FALSE(r.blow_up);
    CHECK(r.steps_completed() == 3);
    CHECK(r.max_abs_rsf() <= 1e-12);
  }
}

TEST_CASE("half bubble: a non-conservative variant fails before the end") {
  auto c = small_config();
  c.kind = CaseKind::half_bubble;
  c.t_end = 200;
  c.schemes = {method1(0, 0, TimeLevel::m, TimeLevel::m)};
  const auto batch = run_bubble_batch(c, false);
  CHECK(batch.runs.front().blow_up);
  CHECK(batch.runs.front().steps_completed() < c.steps());
}

TEST_CASE("sweep case writes envelope and property CSVs") {
  RunConfig c;
  c.kind = CaseKind::sweep;
  c.points = 4;
  c.schemes = {named_scheme(4)};
  c.out = scratch("sweep");
  std::ostringstream log;
  CHECK(run(c, log) == 0);
  CHECK(slurp(c.out / "envelope.csv").starts_with("scheme_id,dt,"));
  CHECK(slurp(c.out / "properties.csv").find("M1_C1A1_np1_m,4,vv,vv,vv,vv") != std::string::npos);
}
