#pragma once

// Parameter-space sweep over the 0-D transfer kernels: per-timestep envelopes
// of the relative momentum and energy change, and the property matrix
// derived from them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "relabel/kernels.hpp"

namespace relabel {

// The sweep runs in extended precision so that exactly conservative schemes
// stay below the 1e-13 classification threshold at eta_1 = 1e-8, |u_1| = 150.
using SweepReal = long double;

struct Axis {
  double lo = 0;
  double hi = 0;

  // Inclusive uniform sampling; a single point sits at `lo`.
  [[nodiscard]] SweepReal at(int i, int n) const {
    if (n <= 1 || i == 0) return lo;
    if (i == n - 1) return hi;
    return SweepReal(lo) + (SweepReal(hi) - SweepReal(lo)) * SweepReal(i) / SweepReal(n - 1);
  }
};

struct SweepConfig {
  double eta0 = 1.0;     // kg m^-3
  double u0 = 1.0;       // m s^-1
  double theta0 = 300.0; // K
  double theta1 = 301.0; // K
  double s01 = 1.0;      // s^-1
  Axis dt{0.0, 5.0};
  Axis eta1{1.0e-8, 2.0};
  Axis u1{-150.0, 150.0};
  Axis s10{0.0, 1.0};
  int points = 50;
  // Extra timesteps beyond the plotted range, used only to separate
  // "holds for dt*S <= 1" from "holds for every dt*S".
  std::vector<double> probe_dts{10.0, 100.0, 1000.0};
  unsigned threads = 0;  // 0 picks hardware concurrency

  [[nodiscard]] std::size_t transfers_per_slice() const {
    const auto n = static_cast<std::size_t>(points);
    return n * n * n;
  }
};

struct SliceEnvelope {
  double dt = 0;
  SweepReal dF_min = 0, dF_max = 0;
  SweepReal dE_min = 0, dE_max = 0;
  SweepReal dI_abs_max = 0;
  SweepReal max_rate = 0;  // largest dt*S_ij in the slice
  bool bound_violation = false;
  bool negative_mass = false;
  bool nonfinite = false;
  std::size_t count = 0;

  [[nodiscard]] SweepReal conservation_error() const {
    return std::max({std::abs(dF_min), std::abs(dF_max), dI_abs_max});
  }
};

struct SchemeEnvelope {
  SchemeConfig scheme;
  std::vector<SliceEnvelope> slices;  // one per swept dt, in order
  std::vector<SliceEnvelope> probes;  // one per probe dt

  // Slices with dt*S_ij <= 1 for every point; the explicit-stability subgrid.
  [[nodiscard]] std::vector<SliceEnvelope> small_step_slices() const {
    std::vector<SliceEnvelope> out;
    for (const auto& s : slices)
      if (s.max_rate <= 1) out.push_back(s);
    return out;
  }
};

namespace detail {

inline SliceEnvelope sweep_slice(const SweepConfig& cfg, const SchemeConfig& scheme, SweepReal dt) {
  using R = SweepReal;
  SliceEnvelope env;
  env.dt = static_cast<double>(dt);
  env.dF_min = env.dE_min = std::numeric_limits<R>::infinity();
  env.dF_max = env.dE_max = -std::numeric_limits<R>::infinity();
  const R s01 = cfg.s01;
  const R s10_hi = std::max(cfg.s10.at(0, cfg.points), cfg.s10.at(cfg.points - 1, cfg.points));
  env.max_rate = dt * std::max(s01, s10_hi);
  const R inf = std::numeric_limits<R>::infinity();
  for (int a = 0; a < cfg.points; ++a) {
    const R eta1 = cfg.eta1.at(a, cfg.points);
    for (int b = 0; b < cfg.points; ++b) {
      const R u1 = cfg.u1.at(b, cfg.points);
      const PairState<R> before{{R(cfg.eta0), eta1}, {R(cfg.theta0), R(cfg.theta1)}, {R(cfg.u0), u1}};
      for (int c = 0; c < cfg.points; ++c) {
        const TransferRates<R> rates{s01, cfg.s10.at(c, cfg.points), dt};
        const auto out = apply_transfer(before, rates, scheme, Mode::permissive);
        const auto d = pair_diagnostics(before, out.state);
        ++env.count;
        env.negative_mass |= d.negative_mass;
        env.bound_violation |= d.bound_violation;
        if (!d.finite) {
          env.nonfinite = true;
          env.dF_max = env.dE_max = env.dI_abs_max = inf;
          continue;
        }
        env.dF_min = std::min(env.dF_min, d.dF_rel);
        env.dF_max = std::max(env.dF_max, d.dF_rel);
        env.dE_min = std::min(env.dE_min, d.dE_rel);
        env.dE_max = std::max(env.dE_max, d.dE_rel);
        env.dI_abs_max = std::max(env.dI_abs_max, std::abs(d.dI_rel));
      }
    }
  }
  // Every point non-finite leaves the minima at +inf; report them as +inf too.
  return env;
}

// Runs `work(k)` for k in [0, n) over a fixed pool. Results are written to
// distinct slots, so the outcome does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& work) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t k = 0; k < n; ++k) work(k);
    return;
  }
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t k = t; k < n; k += threads) work(k);
    });
}

}  // namespace detail

[[nodiscard]] inline std::vector<SchemeEnvelope> run_sweep(const SweepConfig& cfg,
                                                           const std::vector<SchemeConfig>& schemes) {
  if (cfg.points < 1) throw std::invalid_argument("sweep needs at least one point per axis");
  std::vector<SchemeEnvelope> out(schemes.size());
  const std::size_t n_dt = static_cast<std::size_t>(cfg.points);
  const std::size_t per_scheme = n_dt + cfg.probe_dts.size();
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    out[s].scheme = schemes[s];
    out[s].slices.resize(n_dt);
    out[s].probes.resize(cfg.probe_dts.size());
  }
  detail::parallel_for(schemes.size() * per_scheme, cfg.threads, [&](std::size_t k) {
    const std::size_t s = k / per_scheme;
    const std::size_t j = k % per_scheme;
    if (j < n_dt) {
      out[s].slices[j] = detail::sweep_slice(cfg, schemes[s], cfg.dt.at(static_cast<int>(j), cfg.points));
    } else {
      out[s].probes[j - n_dt] = detail::sweep_slice(cfg, schemes[s], SweepReal(cfg.probe_dts[j - n_dt]));
    }
  });
  return out;
}

// Table-style verdicts: `small` holds for dt*S_ij <= 1, `all` holds for every
// sampled dt*S_ij including the probes.
enum class Verdict { fails, small, all };

[[nodiscard]] inline const char* verdict_symbol(Verdict v) {
  switch (v) {
    case Verdict::fails: return "x";
    case Verdict::small: return "v";
    case Verdict::all: return "vv";
  }
  return "?";
}

enum class Property { positive_mass, bounded, conserving, energy_diminishing };
inline constexpr std::array<Property, 4> all_properties{Property::positive_mass, Property::bounded,
                                                        Property::conserving, Property::energy_diminishing};

[[nodiscard]] inline const char* property_name(Property p) {
  switch (p) {
    case Property::positive_mass: return "positive_eta";
    case Property::bounded: return "bounded_theta_u";
    case Property::conserving: return "momentum_ie_conserved";
    case Property::energy_diminishing: return "ke_decreases";
  }
  return "?";
}

struct Tolerances {
  double conserved = 1e-13;  // |change| at or below this counts as exact
  double violated = 1e-6;    // |change| above this counts as a genuine violation
};

struct PropertyRow {
  SchemeConfig scheme;
  std::array<Verdict, 4> verdicts{};
  // A conservation or energy error fell between the two thresholds, so the
  // verdict rests on rounding rather than on an O(1) effect.
  bool ambiguous = false;

  [[nodiscard]] Verdict operator[](Property p) const { return verdicts[static_cast<std::size_t>(p)]; }
};

namespace detail {

// Rounding in an exactly conservative update grows with the amount moved,
// roughly dt*S times the state. Probe slices far beyond the swept range get
// their conservation threshold scaled by that factor.
inline SweepReal conservation_budget(const SliceEnvelope& e, const Tolerances& tol, bool probe) {
  return SweepReal(tol.conserved) * (probe ? std::max(SweepReal(1), e.max_rate) : SweepReal(1));
}

inline bool holds(const SliceEnvelope& e, Property p, const Tolerances& tol, bool probe) {
  switch (p) {
    case Property::positive_mass: return !e.negative_mass && !e.nonfinite;
    case Property::bounded: return !e.bound_violation && !e.nonfinite;
    case Property::conserving: return !e.nonfinite && e.conservation_error() <= conservation_budget(e, tol, probe);
    case Property::energy_diminishing: return !e.nonfinite && e.dE_max <= tol.conserved;
  }
  return false;
}

inline bool grey_zone(const SliceEnvelope& e, const Tolerances& tol, bool probe) {
  if (e.nonfinite) return false;
  const SweepReal c = e.conservation_error();
  const bool c_grey = c > conservation_budget(e, tol, probe) && c <= tol.violated;
  const bool e_grey = e.dE_max > tol.conserved && e.dE_max <= tol.violated;
  return c_grey || e_grey;
}

}  // namespace detail

[[nodiscard]] inline std::vector<PropertyRow> classify_schemes(const std::vector<SchemeEnvelope>& envelopes,
                                                               const Tolerances& tol = {}) {
  std::vector<PropertyRow> rows;
  for (const auto& env : envelopes) {
    PropertyRow row;
    row.scheme = env.scheme;
    for (auto p : all_properties) {
      bool small = true, every = true;
      for (const auto& s : env.slices) {
        const bool ok = detail::holds(s, p, tol, false);
        every &= ok;
        if (s.max_rate <= 1) small &= ok;
      }
      for (const auto& s : env.probes) every &= detail::holds(s, p, tol, true);
      row.verdicts[static_cast<std::size_t>(p)] = every ? Verdict::all : small ? Verdict::small : Verdict::fails;
    }
    for (const auto& s : env.slices) row.ambiguous |= detail::grey_zone(s, tol, false);
    for (const auto& s : env.probes) row.ambiguous |= detail::grey_zone(s, tol, true);
    rows.push_back(row);
  }
  return rows;
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return os;
}

inline void close_output(std::ofstream& os, const std::filesystem::path& path) {
  os.close();
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace detail

// Envelope rows in input order, one per (scheme, dt).
inline void emit_envelope_csv(const std::vector<SchemeEnvelope>& envelopes, const std::filesystem::path& path) {
  auto os = detail::open_output(path);
  os << "scheme_id,dt,dF_min,dF_max,dE_min,dE_max\n";
  for (const auto& env : envelopes)
    for (const auto& s : env.slices)
      os << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", env.scheme.label(), s.dt,
                        static_cast<double>(s.dF_min), static_cast<double>(s.dF_max), static_cast<double>(s.dE_min),
                        static_cast<double>(s.dE_max));
  detail::close_output(os, path);
}

inline void emit_property_csv(const std::vector<PropertyRow>& rows, const std::filesystem::path& path) {
  auto os = detail::open_output(path);
  os << "scheme_id,scheme_number";
  for (auto p : all_properties) os << ',' << property_name(p);
  os << ",ambiguous\n";
  for (const auto& r : rows) {
    const auto num = scheme_number(r.scheme);
    os << r.scheme.label() << ',' << (num ? std::to_string(*num) : std::string{});
    for (auto v : r.verdicts) os << ',' << verdict_symbol(v);
    os << ',' << (r.ambiguous ? 1 : 0) << '\n';
  }
  detail::close_output(os, path);
}

}  // namespace relabel
