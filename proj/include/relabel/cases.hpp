#pragma once

// Test-case construction and batch orchestration: flat key=value run
// configuration, the single-fluid reference, the full and half bubbles, the
// parameter sweep, and every CSV artefact they write.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "relabel/analysis.hpp"
#include "relabel/solver.hpp"

namespace relabel {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class CaseKind { single_fluid, full_bubble, half_bubble, sweep };
enum class Preset { desk, paper };

[[nodiscard]] inline std::string case_name(CaseKind k) {
  switch (k) {
    case CaseKind::single_fluid: return "single";
    case CaseKind::full_bubble: return "full";
    case CaseKind::half_bubble: return "half";
    case CaseKind::sweep: return "sweep";
  }
  return "?";
}

struct RunConfig {
  CaseKind kind = CaseKind::full_bubble;
  std::string scheme_spec = "all20";
  std::vector<SchemeConfig> schemes = all_schemes();
  Preset preset = Preset::desk;
  int nx = 50;
  int nz = 25;
  double dx = 400.0;  // m
  double dz = 400.0;  // m
  double dt = 8.0;    // s
  double t_end = 1000.0;  // s
  std::filesystem::path out = "runs";
  int dump_every = 0;  // steps between field dumps; 0 disables dumps
  double theta0 = 300.0;      // K
  double p_surface = 1.0e5;   // Pa
  double sigma_min = 0.1;
  double k_sigma = 200.0;     // m^2 s^-1
  // Caps transfer rates at 1/dt. Unset means on for the diffusive closure,
  // whose rate grows without bound as the donor empties, and off otherwise.
  std::optional<bool> cap_rate;
  bool literal_bubble = false;
  double cn_alpha = 0.5;
  int cn_iterations = 2;
  int points = 50;       // sweep samples per axis
  unsigned threads = 0;  // 0 picks hardware concurrency

  [[nodiscard]] long steps() const { return std::lround(t_end / dt); }
  [[nodiscard]] Grid2D grid() const { return Grid2D{nx, nz, dx, dz, -0.5 * nx * dx, 0.0}; }
};

inline void apply_preset(RunConfig& c, Preset p) {
  c.preset = p;
  if (p == Preset::desk) {
    c.nx = 50, c.nz = 25, c.dx = c.dz = 400.0, c.dt = 8.0;
  } else {
    c.nx = 200, c.nz = 100, c.dx = c.dz = 100.0, c.dt = 2.0;
  }
  c.t_end = 1000.0;
}

using ConfigPairs = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError(fmt::format("{}: cannot parse '{}' as a number", key, value));
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", key, value));
}

}  // namespace detail

// Parses "key = value" lines; '#' starts a comment.
[[nodiscard]] inline ConfigPairs parse_config_text(std::string_view text) {
  ConfigPairs out;
  int line_no = 0;
  std::istringstream is{std::string(text)};
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key = value", line_no));
    out.emplace_back(detail::trim(std::string_view(t).substr(0, eq)), detail::trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

[[nodiscard]] inline ConfigPairs read_config_file(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw ConfigError(fmt::format("config: cannot read '{}'", p.string()));
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

inline void validate(const RunConfig& c) {
  if (c.nx < 1) throw ConfigError("nx: must be at least 1");
  if (c.nz < 1) throw ConfigError("nz: must be at least 1");
  if (!(c.dx > 0)) throw ConfigError("dx: must be positive");
  if (!(c.dz > 0)) throw ConfigError("dz: must be positive");
  if (!(c.dt > 0)) throw ConfigError("dt: must be positive");
  if (!(c.t_end >= 0)) throw ConfigError("t_end: must be non-negative");
  const double ratio = c.t_end / c.dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio))
    throw ConfigError(fmt::format("t_end: {} is not a multiple of dt = {}", c.t_end, c.dt));
  if (c.dump_every < 0) throw ConfigError("dump_every: must be non-negative");
  if (c.points < 2) throw ConfigError("points: need at least 2 samples per axis");
  if (!(c.cn_alpha >= 0 && c.cn_alpha <= 1)) throw ConfigError("cn_alpha: must lie in [0, 1]");
  if (c.cn_iterations < 1) throw ConfigError("cn_iterations: must be at least 1");
  if (!(c.sigma_min >= 0 && c.sigma_min <= 1)) throw ConfigError("sigma_min: must lie in [0, 1]");
  if (!(c.k_sigma >= 0)) throw ConfigError("k_sigma: must be non-negative");
  if (c.schemes.empty()) throw ConfigError("scheme: empty selection");
  if (c.out.empty()) throw ConfigError("out: empty output directory");
}

// Builds a config from key/value pairs. The preset is applied first so the
// remaining keys override it regardless of order.
[[nodiscard]] inline RunConfig config_from_pairs(const ConfigPairs& pairs) {
  RunConfig c;
  for (const auto& [k, v] : pairs)
    if (k == "preset") {
      if (v == "desk") apply_preset(c, Preset::desk);
      else if (v == "paper") apply_preset(c, Preset::paper);
      else throw ConfigError(fmt::format("preset: expected desk or paper, got '{}'", v));
    }
  for (const auto& [k, v] : pairs) {
    if (k == "preset") continue;
    if (k == "case") {
      if (v == "single" || v == "SingleFluid") c.kind = CaseKind::single_fluid;
      else if (v == "full" || v == "FullBubble") c.kind = CaseKind::full_bubble;
      else if (v == "half" || v == "HalfBubble") c.kind = CaseKind::half_bubble;
      else if (v == "sweep" || v == "Sweep") c.kind = CaseKind::sweep;
      else throw ConfigError(fmt::format("case: expected single, full, half or sweep, got '{}'", v));
    } else if (k == "scheme") {
      try {
        c.schemes = parse_scheme_list(v);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(fmt::format("scheme: {}", e.what()));
      }
      c.scheme_spec = v;
    } else if (k == "nx") c.nx = detail::parse_number<int>(k, v);
    else if (k == "nz") c.nz = detail::parse_number<int>(k, v);
    else if (k == "dx") c.dx = detail::parse_number<double>(k, v);
    else if (k == "dz") c.dz = detail::parse_number<double>(k, v);
    else if (k == "dt") c.dt = detail::parse_number<double>(k, v);
    else if (k == "t_end") c.t_end = detail::parse_number<double>(k, v);
    else if (k == "out") c.out = v;
    else if (k == "dump_every") c.dump_every = detail::parse_number<int>(k, v);
    else if (k == "theta0") c.theta0 = detail::parse_number<double>(k, v);
    else if (k == "p_surface") c.p_surface = detail::parse_number<double>(k, v);
    else if (k == "sigma_min") c.sigma_min = detail::parse_number<double>(k, v);
    else if (k == "k_sigma") c.k_sigma = detail::parse_number<double>(k, v);
    else if (k == "cap_rate") c.cap_rate = detail::parse_bool(k, v);
    else if (k == "bubble_form") {
      if (v == "squared") c.literal_bubble = false;
      else if (v == "literal") c.literal_bubble = true;
      else throw ConfigError(fmt::format("bubble_form: expected squared or literal, got '{}'", v));
    } else if (k == "cn_alpha") c.cn_alpha = detail::parse_number<double>(k, v);
    else if (k == "cn_iterations") c.cn_iterations = detail::parse_number<int>(k, v);
    else if (k == "points") c.points = detail::parse_number<int>(k, v);
    else if (k == "threads") c.threads = detail::parse_number<unsigned>(k, v);
    else throw ConfigError(fmt::format("{}: unknown key", k));
  }
  validate(c);
  return c;
}

[[nodiscard]] inline BubbleGeometry bubble_geometry(const RunConfig& c) {
  BubbleGeometry b;
  if (c.literal_bubble) {
    b.literal = true;
    b.xc = 10000.0;
  }
  return b;
}

struct CaseSetup {
  ModelState state;
  TransferClosure closure;
  std::vector<SchemeConfig> schemes;
};

[[nodiscard]] inline CaseSetup build_case(const RunConfig& c, std::optional<CaseKind> override_kind = {}) {
  validate(c);
  const CaseKind kind = override_kind.value_or(c.kind);
  if (kind == CaseKind::sweep) throw ConfigError("case: the sweep has no model state; use run_sweep");
  const auto g = c.grid();
  const auto b = bubble_geometry(c);
  CaseSetup out;
  out.schemes = c.schemes;
  std::vector<CenterField<double>> sigma;
  if (kind == CaseKind::single_fluid) {
    sigma.emplace_back(g, 1.0);
  } else if (kind == CaseKind::full_bubble) {
    sigma.emplace_back(g, 0.0);
    sigma.emplace_back(g, 1.0);
  } else {
    CenterField<double> s1(g);
    for (int k = 0; k < g.nz; ++k)
      for (int i = 0; i < g.nx; ++i) {
        const auto L = b.distance(g.xc(i), g.zc(k));
        if (L && *L < 1.0) s1(i, k) = 0.5;
      }
    CenterField<double> s0 = s1;
    for (auto& v : s0.v) v = 1.0 - v;
    sigma = {s0, s1};
  }
  out.state = hydrostatic_init(g, c.theta0, c.p_surface, sigma);
  const int warm = kind == CaseKind::single_fluid ? 0 : 1;
  apply_bubble_perturbation(out.state, b, {warm});
  if (kind == CaseKind::full_bubble) {
    out.closure = TransferClosure::relabel_closure(c.sigma_min);
  } else if (kind == CaseKind::half_bubble) {
    out.closure = TransferClosure::diffusive_closure(c.k_sigma);
  }
  out.closure.cap_rate = c.cap_rate.value_or(out.closure.kind == TransferClosure::Kind::diffusive);
  return out;
}

[[nodiscard]] inline SolverOptions solver_options(const RunConfig& c) {
  SolverOptions o;
  o.alpha = c.cn_alpha;
  o.outer_iterations = c.cn_iterations;
  return o;
}

struct RunResult {
  SchemeConfig scheme;
  std::vector<StepReport> reports;  // one per completed step
  double e_initial = 0;
  std::vector<double> dE_rsf;  // per completed step, empty without a reference
  bool blow_up = false;
  std::string failure;  // exception text when the run stopped early
  long steps_requested = 0;

  [[nodiscard]] long steps_completed() const { return static_cast<long>(reports.size()); }
  [[nodiscard]] double dE_rel(std::size_t n) const { return (reports[n].energy.total() - e_initial) / e_initial; }
  [[nodiscard]] double dE_rel_end() const {
    if (blow_up) return std::numeric_limits<double>::infinity();
    return reports.empty() ? 0.0 : dE_rel(reports.size() - 1);
  }
  [[nodiscard]] double min_eta() const {
    if (reports.empty()) return std::numeric_limits<double>::quiet_NaN();
    double m = std::numeric_limits<double>::infinity();
    for (const auto& r : reports)
      for (double v : r.min_eta) m = std::min(m, v);
    return m;
  }
  [[nodiscard]] double max_abs_rsf() const {
    double m = 0;
    for (double v : dE_rsf) m = std::max(m, std::isfinite(v) ? std::abs(v) : std::numeric_limits<double>::infinity());
    return blow_up ? std::numeric_limits<double>::infinity() : m;
  }
  [[nodiscard]] double transferred_fraction_step1() const {
    return reports.empty() ? std::numeric_limits<double>::quiet_NaN() : transferred_fraction_;
  }
  double transferred_fraction_ = 0;
};

namespace detail {

inline void dump_state(const std::filesystem::path& dir, const ModelState& s) {
  const auto tag = fmt::format("step_{:06d}", s.step);
  write_field_csv(dir / (tag + "_pi.csv"), s.grid, s.pi, "pi", s.time);
  for (std::size_t f = 0; f < s.fluids.size(); ++f) {
    const auto& fl = s.fluids[f];
    write_field_csv(dir / fmt::format("{}_eta{}.csv", tag, f), s.grid, fl.eta, fmt::format("eta{}", f), s.time);
    write_field_csv(dir / fmt::format("{}_theta{}.csv", tag, f), s.grid, fl.theta, fmt::format("theta{}", f), s.time);
    write_face_csv(dir / fmt::format("{}_u{}.csv", tag, f), s.grid, fl.vel, 'x', fmt::format("u{}", f), s.time);
    write_face_csv(dir / fmt::format("{}_w{}.csv", tag, f), s.grid, fl.vel, 'z', fmt::format("w{}", f), s.time);
  }
}

inline double domain_mass(const ModelState& s) {
  long double m = 0;
  for (const auto& f : s.fluids)
    for (double v : f.eta.v) m += v;
  return static_cast<double>(m) * s.grid.cell_volume();
}

}  // namespace detail

// Integrates one scheme from a fresh state. Blow-ups (exceptions or
// non-finite energy, or a relative energy error above 1) stop the run and are
// recorded. `reference` holds the single-fluid total energy per step.
[[nodiscard]] inline RunResult run_one(const RunConfig& c, const CaseSetup& setup, const SchemeConfig& scheme,
                                       const std::vector<double>* reference = nullptr,
                                       const std::optional<std::filesystem::path>& dir = {}) {
  RunResult res;
  res.scheme = scheme;
  res.steps_requested = c.steps();
  ModelState s = setup.state;
  MultiFluidSolver solver(s.grid, solver_options(c));
  res.e_initial = energy_budget(s).total();
  const double mass0 = detail::domain_mass(s);

  std::ofstream diag;
  if (dir) {
    std::filesystem::create_directories(*dir);
    diag.open(*dir / "diagnostics.csv");
    if (!diag) throw std::runtime_error("cannot write diagnostics in '" + dir->string() + "'");
    write_diagnostics_header(diag, s.fluids.size());
    StepReport r0;
    r0.energy = energy_budget(s);
    for (const auto& f : s.fluids) {
      r0.min_eta.push_back(f.eta.min());
      for (double w : f.vel.z) r0.max_abs_w = std::max(r0.max_abs_w, std::abs(w));
    }
    write_diagnostics_row(diag, r0, res.e_initial, reference ? std::optional<double>(0.0) : std::nullopt);
    if (c.dump_every > 0) detail::dump_state(*dir / "fields", s);
  }

  for (long n = 0; n < c.steps(); ++n) {
    StepReport rep;
    try {
      rep = solver.step(s, setup.closure, scheme, c.dt);
    } catch (const std::exception& e) {
      res.blow_up = true;
      res.failure = e.what();
      break;
    }
    if (n == 0) res.transferred_fraction_ = (rep.transfer.mass_moved_10 + rep.transfer.mass_moved_01) / mass0;
    std::optional<double> rsf;
    if (reference) {
      const double e_sf = (*reference)[static_cast<std::size_t>(n + 1)];
      rsf = (rep.energy.total() - e_sf) / (*reference)[0];
      res.dE_rsf.push_back(*rsf);
    }
    res.reports.push_back(rep);
    if (diag.is_open()) write_diagnostics_row(diag, rep, res.e_initial, rsf);
    if (dir && c.dump_every > 0 && s.step % c.dump_every == 0) detail::dump_state(*dir / "fields", s);
    const double rel = reference ? *rsf : res.dE_rel(res.reports.size() - 1);
    if (!rep.finite || !std::isfinite(rel) || std::abs(rel) > 1.0) {
      res.blow_up = true;
      res.failure = fmt::format("energy blow-up at step {} (relative error {:.3g})", rep.step, rel);
      break;
    }
  }
  if (dir && !res.failure.empty()) {
    std::ofstream fail(*dir / "failure.txt");
    fail << res.failure << '\n';
  }
  return res;
}

struct BatchResult {
  std::optional<RunResult> reference;  // single-fluid run for the full bubble
  std::vector<RunResult> runs;
};

// Runs every selected scheme on the configured bubble case. Each run starts
// from a freshly built state and writes into its own directory when `write`
// is set, so runs can proceed in parallel.
[[nodiscard]] inline BatchResult run_bubble_batch(const RunConfig& c, bool write = true) {
  validate(c);
  BatchResult out;
  if (write) std::filesystem::create_directories(c.out);
  auto dir_for = [&](const std::string& name) -> std::optional<std::filesystem::path> {
    if (!write) return std::nullopt;
    return c.out / name;
  };

  if (c.kind == CaseKind::single_fluid) {
    const auto setup = build_case(c);
    out.runs.push_back(run_one(c, setup, named_scheme(1), nullptr, dir_for("single_fluid")));
    if (out.runs.back().blow_up) throw SolverError("single-fluid run failed: " + out.runs.back().failure);
    return out;
  }

  std::vector<double> ref_energy;
  if (c.kind == CaseKind::full_bubble) {
    const auto sf = build_case(c, CaseKind::single_fluid);
    out.reference = run_one(c, sf, named_scheme(1), nullptr, dir_for("reference_single_fluid"));
    if (out.reference->blow_up) throw SolverError("single-fluid reference failed: " + out.reference->failure);
    ref_energy.push_back(out.reference->e_initial);
    for (const auto& r : out.reference->reports) ref_energy.push_back(r.energy.total());
  }

  const auto setup = build_case(c);
  out.runs.resize(setup.schemes.size());
  detail::parallel_for(setup.schemes.size(), c.threads, [&](std::size_t k) {
    const auto& sc = setup.schemes[k];
    out.runs[k] = run_one(c, setup, sc, ref_energy.empty() ? nullptr : &ref_energy, dir_for(sc.label()));
  });
  return out;
}

[[nodiscard]] inline std::string scheme_number_text(const SchemeConfig& s) {
  const auto n = scheme_number(s);
  return n ? std::to_string(*n) : std::string{};
}

// Table-2 analogue for the full bubble: one row per scheme.
inline void write_full_bubble_table(const BatchResult& b, const std::filesystem::path& path) {
  auto os = detail::open_output(path);
  os << "scheme_id,scheme_number,dE_RSF_step1,dE_RSF_end,max_abs_dE_RSF,blow_up,steps_completed,"
        "transferred_fraction_step1\n";
  for (const auto& r : b.runs) {
    const double first = r.dE_rsf.empty() ? std::numeric_limits<double>::quiet_NaN() : r.dE_rsf.front();
    const double last = r.blow_up || r.dE_rsf.empty() ? std::numeric_limits<double>::quiet_NaN() : r.dE_rsf.back();
    os << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{},{},{:.17g}\n", r.scheme.label(), scheme_number_text(r.scheme),
                      first, last, r.max_abs_rsf(), r.blow_up ? 1 : 0, r.steps_completed(),
                      r.transferred_fraction_step1());
  }
  detail::close_output(os, path);
}

inline void write_half_bubble_table(const BatchResult& b, const std::filesystem::path& path) {
  auto os = detail::open_output(path);
  os << "scheme_id,scheme_number,dE_rel_end,max_dE_rel,min_eta,blow_up,steps_completed\n";
  for (const auto& r : b.runs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < r.reports.size(); ++n) mx = std::max(mx, r.dE_rel(n));
    os << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{},{}\n", r.scheme.label(), scheme_number_text(r.scheme),
                      r.dE_rel_end(), mx, r.min_eta(), r.blow_up ? 1 : 0, r.steps_completed());
  }
  detail::close_output(os, path);
}

[[nodiscard]] inline SweepConfig sweep_config(const RunConfig& c) {
  SweepConfig s;
  s.points = c.points;
  s.threads = c.threads;
  return s;
}

// Runs the configured case and writes its artefacts under cfg.out. Returns
// the process exit status.
inline int run(const RunConfig& c, std::ostream& log) {
  validate(c);
  std::filesystem::create_directories(c.out);
  if (c.kind == CaseKind::sweep) {
    const auto env = run_sweep(sweep_config(c), c.schemes);
    emit_envelope_csv(env, c.out / "envelope.csv");
    const auto rows = classify_schemes(env);
    emit_property_csv(rows, c.out / "properties.csv");
    log << fmt::format("sweep: {} schemes, {} points per axis -> {}\n", c.schemes.size(), c.points, c.out.string());
    return 0;
  }
  const auto batch = run_bubble_batch(c);
  if (c.kind == CaseKind::full_bubble) write_full_bubble_table(batch, c.out / "table_full_bubble.csv");
  if (c.kind == CaseKind::half_bubble) write_half_bubble_table(batch, c.out / "table_half_bubble.csv");
  for (const auto& r : batch.runs) {
    if (c.kind == CaseKind::full_bubble) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      const double first = r.dE_rsf.empty() ? nan : r.dE_rsf.front();
      const double last = r.blow_up || r.dE_rsf.empty() ? nan : r.dE_rsf.back();
      log << fmt::format("{:<16} dE_RSF(1)={:+.3e} dE_RSF(end)={:+.3e} {}\n", r.scheme.label(), first, last,
                         r.blow_up ? "BLOW-UP" : "");
    } else {
      log << fmt::format("{:<16} dE/E0(end)={:+.3e} min_eta={:.3e} {}\n", r.scheme.label(), r.dE_rel_end(),
                         r.min_eta(), r.blow_up ? "BLOW-UP" : "");
    }
  }
  return 0;
}

}  // namespace relabel
