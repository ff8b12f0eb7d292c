#pragma once

// Multi-fluid compressible Euler integrator on the C-grid. A step is the
// dynamics (advection, pressure gradient, gravity and the equation of state,
// iterated Crank-Nicolson with a Helmholtz solve for the Exner pressure)
// followed by the operator-split transfers between fluid 0 and fluid 1.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <fmt/format.h>

#include "relabel/constants.hpp"
#include "relabel/grid.hpp"
#include "relabel/kernels.hpp"
#include "relabel/scheme.hpp"

namespace relabel {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FluidFields {
  CenterField<double> eta;    // kg m^-3
  CenterField<double> theta;  // K
  FaceField<double> vel;      // u on x-faces, w on z-faces, m s^-1
  FaceField<double> tend;     // stored Crank-Nicolson velocity tendency, m s^-2
};

struct ModelState {
  Grid2D grid;
  std::vector<FluidFields> fluids;
  CenterField<double> pi;  // Exner pressure
  double time = 0;
  long step = 0;

  [[nodiscard]] CenterField<double> total_mass() const {
    CenterField<double> m(grid);
    for (const auto& f : fluids)
      for (std::size_t n = 0; n < m.size(); ++n) m.v[n] += f.eta.v[n];
    return m;
  }
};

struct EnergyBudget {
  double potential = 0;  // E_P, J per metre of depth
  double internal = 0;   // E_I
  double kinetic = 0;    // E_K
  [[nodiscard]] double total() const { return potential + internal + kinetic; }
};

struct TransferClosure {
  enum class Kind { none, relabel, diffusive };
  Kind kind = Kind::none;
  double sigma_min = 0.1;  // relabel target volume fraction of fluid 0
  double k_sigma = 200.0;  // diffusive coefficient, m^2 s^-1
  // Caps S_ij at 1/dt so an explicit transfer cannot move more than the
  // donor holds. Only the diffusive closure can exceed it.
  bool cap_rate = false;

  static TransferClosure none_closure() { return {}; }
  static TransferClosure relabel_closure(double sigma_min = 0.1) {
    TransferClosure c;
    c.kind = Kind::relabel;
    c.sigma_min = sigma_min;
    return c;
  }
  static TransferClosure diffusive_closure(double k_sigma = 200.0) {
    TransferClosure c;
    c.kind = Kind::diffusive;
    c.k_sigma = k_sigma;
    return c;
  }
};

struct RateFields {
  CenterField<double> s01;  // s^-1
  CenterField<double> s10;  // s^-1
};

struct SolverOptions {
  double alpha = 0.5;        // Crank-Nicolson off-centring
  int outer_iterations = 2;  // Crank-Nicolson outer iterations per step
  double solve_tolerance = 1e-8;
  Mode transfer_mode = Mode::strict;
  PhysicalConstants constants = dry_air;
};

// Exner pressure consistent with the equation of state for the current
// masses and temperatures.
[[nodiscard]] inline CenterField<double> exner_from_state(const ModelState& s, const PhysicalConstants& pc) {
  CenterField<double> pi(s.grid);
  const double inv_e = 1.0 / pc.eos_exponent();
  for (std::size_t n = 0; n < pi.size(); ++n) {
    double rt = 0;
    for (const auto& f : s.fluids) rt += f.eta.v[n] * f.theta.v[n];
    pi.v[n] = std::pow(pc.R * rt / pc.p0, inv_e);
  }
  return pi;
}

// Density a fluid of temperature theta would have at Exner pressure pi.
[[nodiscard]] inline double fluid_density(double pi, double theta, const PhysicalConstants& pc) {
  return pc.p0 * std::pow(pi, pc.eos_exponent()) / (pc.R * theta);
}

// Uniform-theta atmosphere at rest in discrete hydrostatic balance
// c_p theta d(pi)/dz = -g on every interior z-face. `sigma` gives each
// fluid's volume fraction per cell.
[[nodiscard]] inline ModelState hydrostatic_init(const Grid2D& g, double theta, double p_surface,
                                                 const std::vector<CenterField<double>>& sigma,
                                                 const PhysicalConstants& pc = dry_air) {
  g.validate();
  if (!(theta > 0)) throw std::invalid_argument("hydrostatic_init needs a positive potential temperature");
  if (sigma.empty()) throw std::invalid_argument("hydrostatic_init needs at least one fluid");
  ModelState s;
  s.grid = g;
  s.pi = CenterField<double>(g);
  const double pi_surface = std::pow(p_surface / pc.p0, pc.kappa());
  const double step = pc.g * g.dz / (pc.cp * theta);
  for (int k = 0; k < g.nz; ++k) {
    const double pik = k == 0 ? pi_surface - 0.5 * step : s.pi(0, k - 1) - step;
    for (int i = 0; i < g.nx; ++i) s.pi(i, k) = pik;
  }
  for (const auto& sg : sigma) {
    FluidFields f{CenterField<double>(g), CenterField<double>(g, theta), FaceField<double>(g), FaceField<double>(g)};
    for (std::size_t n = 0; n < f.eta.size(); ++n) f.eta.v[n] = sg.v[n] * fluid_density(s.pi.v[n], theta, pc);
    s.fluids.push_back(std::move(f));
  }
  return s;
}

struct BubbleGeometry {
  double xc = 0;        // m
  double zc = 2000.0;   // m
  double xr = 2000.0;   // m
  double zr = 2000.0;   // m
  double amplitude = 2.0;  // K
  // The unsquared distance exactly as printed; the argument of the root is
  // negative below and left of the centre, where no warming is applied.
  bool literal = false;

  [[nodiscard]] std::optional<double> distance(double x, double z) const {
    const double a = (x - xc) / xr;
    const double b = (z - zc) / zr;
    const double arg = literal ? a + b : a * a + b * b;
    if (arg < 0) return std::nullopt;
    return std::sqrt(arg);
  }
  [[nodiscard]] double perturbation(double x, double z) const {
    const auto L = distance(x, z);
    if (!L || *L > 1.0) return 0.0;
    const double c = std::cos(0.5 * std::numbers::pi * *L);
    return amplitude * c * c;
  }
};

// Warms the selected fluids by theta' while keeping eta*theta, hence the
// Exner pressure and the volume fractions, unchanged.
inline void apply_bubble_perturbation(ModelState& s, const BubbleGeometry& b, const std::vector<int>& target) {
  const auto& g = s.grid;
  for (int f : target) {
    auto& fl = s.fluids.at(static_cast<std::size_t>(f));
    for (int k = 0; k < g.nz; ++k)
      for (int i = 0; i < g.nx; ++i) {
        const double dth = b.perturbation(g.xc(i), g.zc(k));
        if (dth == 0.0) continue;
        const double old = fl.theta(i, k);
        fl.theta(i, k) = old + dth;
        fl.eta(i, k) *= old / fl.theta(i, k);
      }
  }
}

[[nodiscard]] inline RateFields compute_transfer_rates(const ModelState& s, const TransferClosure& c, double dt,
                                                       const PhysicalConstants& pc = dry_air) {
  const auto& g = s.grid;
  RateFields r{CenterField<double>(g), CenterField<double>(g)};
  if (c.kind == TransferClosure::Kind::none) return r;
  if (s.fluids.size() != 2) throw std::invalid_argument("transfer closures need exactly two fluids");
  const auto& e0 = s.fluids[0].eta;
  const auto& e1 = s.fluids[1].eta;
  if (c.kind == TransferClosure::Kind::relabel) {
    for (std::size_t n = 0; n < r.s10.size(); ++n) {
      if (e1.v[n] <= 0) continue;
      // An empty fluid 0 has no density of its own; use the cell's mixture.
      const double rho0 = e0.v[n] == 0 ? e0.v[n] + e1.v[n] : fluid_density(s.pi.v[n], s.fluids[0].theta.v[n], pc);
      const double deficit = std::max(0.0, c.sigma_min * rho0 - e0.v[n]);
      r.s10.v[n] = deficit / (dt * e1.v[n]);
    }
  } else {
    CenterField<double> diff(g);
    for (std::size_t n = 0; n < diff.size(); ++n) diff.v[n] = e1.v[n] - e0.v[n];
    const auto lap = laplacian(g, diff);
    for (std::size_t n = 0; n < lap.size(); ++n) {
      if (e0.v[n] > 0) r.s01.v[n] = 0.5 * c.k_sigma / e0.v[n] * std::max(0.0, lap.v[n]);
      if (e1.v[n] > 0) r.s10.v[n] = 0.5 * c.k_sigma / e1.v[n] * std::max(0.0, -lap.v[n]);
    }
  }
  if (c.cap_rate) {
    const double cap = 1.0 / dt;
    for (auto& v : r.s01.v) v = std::min(v, cap);
    for (auto& v : r.s10.v) v = std::min(v, cap);
  }
  return r;
}

[[nodiscard]] inline EnergyBudget energy_budget(const ModelState& s, const PhysicalConstants& pc = dry_air) {
  const auto& g = s.grid;
  EnergyBudget e;
  const double vol = g.cell_volume();
  std::vector<FaceField<double>> N, w;
  for (const auto& f : s.fluids) {
    for (int k = 0; k < g.nz; ++k)
      for (int i = 0; i < g.nx; ++i) {
        e.potential += f.eta(i, k) * pc.g * g.zc(k) * vol;
        e.internal += f.eta(i, k) * f.theta(i, k) * pc.cv() * s.pi(i, k) * vol;
      }
    N.push_back(to_faces(g, f.eta));
    w.push_back(f.vel);
  }
  e.kinetic = kinetic_energy_cgrid(g, N, w).sum() * vol;
  return e;
}

// Advective-form momentum tendency -(u . grad) u on the faces, computed as
// the flux divergence over the dual cells minus u times the dual-cell
// velocity divergence. Dual-face values use van Leer reconstruction.
[[nodiscard]] inline FaceField<double> momentum_advection(const Grid2D& g, const FaceField<double>& v) {
  FaceField<double> t(g);
  auto recon = [](double vel, double lo_val, double lo_slope, double hi_val, double hi_slope) {
    return vel >= 0 ? lo_val + 0.5 * lo_slope : hi_val - 0.5 * hi_slope;
  };
  const double rdx = 1.0 / g.dx, rdz = 1.0 / g.dz;

  // u on x-faces: nodes i = 0..nx along x, rows k = 0..nz-1.
  auto su_x = [&](int i, int k) {
    return (i <= 0 || i >= g.nx) ? 0.0 : vanleer_slope(v.X(i - 1, k), v.X(i, k), v.X(i + 1, k));
  };
  auto su_z = [&](int i, int k) {
    return (k <= 0 || k >= g.nz - 1) ? 0.0 : vanleer_slope(v.X(i, k - 1), v.X(i, k), v.X(i, k + 1));
  };
  for (int k = 0; k < g.nz; ++k)
    for (int i = 1; i < g.nx; ++i) {
      // Dual faces at the centres of cells i-1 (west) and i (east).
      const double Uw = 0.5 * (v.X(i - 1, k) + v.X(i, k));
      const double Ue = 0.5 * (v.X(i, k) + v.X(i + 1, k));
      const double uw = recon(Uw, v.X(i - 1, k), su_x(i - 1, k), v.X(i, k), su_x(i, k));
      const double ue = recon(Ue, v.X(i, k), su_x(i, k), v.X(i + 1, k), su_x(i + 1, k));
      // Dual faces at the corners below and above.
      double Ws = 0, us = 0, Wn = 0, un = 0;
      if (k > 0) {
        Ws = 0.5 * (v.Z(i - 1, k) + v.Z(i, k));
        us = recon(Ws, v.X(i, k - 1), su_z(i, k - 1), v.X(i, k), su_z(i, k));
      }
      if (k < g.nz - 1) {
        Wn = 0.5 * (v.Z(i - 1, k + 1) + v.Z(i, k + 1));
        un = recon(Wn, v.X(i, k), su_z(i, k), v.X(i, k + 1), su_z(i, k + 1));
      }
      const double flux_div = (Ue * ue - Uw * uw) * rdx + (Wn * un - Ws * us) * rdz;
      const double div = (Ue - Uw) * rdx + (Wn - Ws) * rdz;
      t.X(i, k) = -flux_div + v.X(i, k) * div;
    }

  // w on z-faces: nodes k = 0..nz along z, columns i = 0..nx-1.
  auto sw_z = [&](int i, int k) {
    return (k <= 0 || k >= g.nz) ? 0.0 : vanleer_slope(v.Z(i, k - 1), v.Z(i, k), v.Z(i, k + 1));
  };
  auto sw_x = [&](int i, int k) {
    return (i <= 0 || i >= g.nx - 1) ? 0.0 : vanleer_slope(v.Z(i - 1, k), v.Z(i, k), v.Z(i + 1, k));
  };
  for (int k = 1; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) {
      const double Ws = 0.5 * (v.Z(i, k - 1) + v.Z(i, k));
      const double Wn = 0.5 * (v.Z(i, k) + v.Z(i, k + 1));
      const double ws = recon(Ws, v.Z(i, k - 1), sw_z(i, k - 1), v.Z(i, k), sw_z(i, k));
      const double wn = recon(Wn, v.Z(i, k), sw_z(i, k), v.Z(i, k + 1), sw_z(i, k + 1));
      double Uw = 0, ww = 0, Ue = 0, we = 0;
      if (i > 0) {
        Uw = 0.5 * (v.X(i, k - 1) + v.X(i, k));
        ww = recon(Uw, v.Z(i - 1, k), sw_x(i - 1, k), v.Z(i, k), sw_x(i, k));
      }
      if (i < g.nx - 1) {
        Ue = 0.5 * (v.X(i + 1, k - 1) + v.X(i + 1, k));
        we = recon(Ue, v.Z(i, k), sw_x(i, k), v.Z(i + 1, k), sw_x(i + 1, k));
      }
      const double flux_div = (Ue * we - Uw * ww) * rdx + (Wn * wn - Ws * ws) * rdz;
      const double div = (Ue - Uw) * rdx + (Wn - Ws) * rdz;
      t.Z(i, k) = -flux_div + v.Z(i, k) * div;
    }
  return t;
}

struct TransferReport {
  double mass_moved_01 = 0;  // domain mass, net fluid 0 -> fluid 1 (kg per metre of depth)
  double mass_moved_10 = 0;  // net fluid 1 -> fluid 0
  double max_rate = 0;       // largest dt*S_ij
  TransferFlags flags;
};

struct StepReport {
  long step = 0;
  double time = 0;
  EnergyBudget energy;
  std::vector<double> min_eta;
  double max_abs_w = 0;
  TransferReport transfer;
  bool finite = true;
};

class MultiFluidSolver {
 public:
  MultiFluidSolver(const Grid2D& grid, SolverOptions opts = {}) : g_(grid), opts_(opts) {
    g_.validate();
    build_pattern();
  }

  [[nodiscard]] const SolverOptions& options() const { return opts_; }
  [[nodiscard]] const Grid2D& grid() const { return g_; }

  // Advances everything except the transfers from level n to level m and
  // stores the level-m velocity tendencies.
  void dynamics_substep(ModelState& s, double dt) {
    const auto& pc = opts_.constants;
    const double a = opts_.alpha;
    const std::size_t nf = s.fluids.size();
    const auto old = s.fluids;  // level n
    std::vector<FaceField<double>> vel_star(nf), theta_star_f(nf);
    std::vector<CenterField<double>> theta_star(nf);
    for (std::size_t f = 0; f < nf; ++f) {
      vel_star[f] = old[f].vel;
      theta_star[f] = old[f].theta;
    }
    CenterField<double> pi_star = s.pi;

    for (int it = 0; it < opts_.outer_iterations; ++it) {
      std::vector<FaceField<double>> u_tilde(nf), H(nf), J(nf), ubar_exp(nf);
      for (std::size_t f = 0; f < nf; ++f) {
        u_tilde[f] = explicit_velocity(old[f], vel_star[f], dt);
        FaceField<double> ubar_est = old[f].vel;
        ubar_est.transform([&](double un, double us) { return (1 - a) * un + a * us; }, vel_star[f]);
        auto mass = vanleer_flux(g_, old[f].eta, ubar_est, dt);
        J[f] = mass.face_value;
        J[f].transform([](double q, double l) { return q * l; }, mass.limiter);
        const auto th_face = vanleer_face_values(g_, old[f].theta, ubar_est, dt);
        H[f] = J[f];
        H[f].transform([](double j, double t) { return j * t; }, th_face);
        ubar_exp[f] = old[f].vel;
        ubar_exp[f].transform([&](double un, double ut) { return (1 - a) * un + a * ut; }, u_tilde[f]);
        theta_star_f[f] = to_faces(g_, theta_star[f]);
      }
      const auto pi_new = solve_exner(old, H, ubar_exp, theta_star_f, pi_star, dt);
      const auto grad_pi = gradient(g_, pi_new);
      for (std::size_t f = 0; f < nf; ++f) {
        FaceField<double> um = u_tilde[f];
        um.transform([&](double ut, double th, double gp) { return ut - dt * a * pc.cp * th * gp; }, theta_star_f[f],
                     grad_pi);
        pin_walls(um);
        FaceField<double> ubar = old[f].vel;
        ubar.transform([&](double un, double m) { return (1 - a) * un + a * m; }, um);
        FaceField<double> fm = J[f], fh = H[f];
        fm.transform([](double j, double u) { return j * u; }, ubar);
        fh.transform([](double h, double u) { return h * u; }, ubar);
        const auto eta_m = apply_flux(g_, old[f].eta, fm, dt);
        const auto eth_m = apply_flux(g_, weighted(old[f]), fh, dt);
        for (std::size_t n = 0; n < eta_m.size(); ++n)
          theta_star[f].v[n] = eta_m.v[n] > 0 ? eth_m.v[n] / eta_m.v[n] : old[f].theta.v[n];
        vel_star[f] = std::move(um);
      }
      pi_star = pi_new;
    }

    // Final transport with the converged mean velocity, upwinded and limited
    // afresh so that the masses stay non-negative.
    for (std::size_t f = 0; f < nf; ++f) {
      auto& fl = s.fluids[f];
      FaceField<double> ubar = old[f].vel;
      ubar.transform([&](double un, double m) { return (1 - a) * un + a * m; }, vel_star[f]);
      const auto mass = vanleer_flux(g_, old[f].eta, ubar, dt);
      const auto th_face = vanleer_face_values(g_, old[f].theta, ubar, dt);
      FaceField<double> heat = mass.flux;
      heat.transform([](double m, double t) { return m * t; }, th_face);
      fl.eta = apply_flux(g_, old[f].eta, mass.flux, dt);
      const auto eth = apply_flux(g_, weighted(old[f]), heat, dt);
      for (std::size_t n = 0; n < fl.eta.size(); ++n)
        fl.theta.v[n] = fl.eta.v[n] > 0 ? eth.v[n] / fl.eta.v[n] : old[f].theta.v[n];
      fl.vel = vel_star[f];
    }
    s.pi = exner_from_state(s, pc);
    for (auto& fl : s.fluids) fl.tend = tendency(fl, s.pi);
    check_finite(s, "dynamics");
  }

  // Applies the transfers in place, level m to n+1, relabelling the stored
  // tendencies consistently.
  TransferReport transfer_substep(ModelState& s, const RateFields& rates, const SchemeConfig& cfg, double dt) {
    TransferReport rep;
    if (s.fluids.size() != 2) throw std::invalid_argument("transfers need exactly two fluids");
    auto& f0 = s.fluids[0];
    auto& f1 = s.fluids[1];
    const auto eta0_m = f0.eta, eta1_m = f1.eta;
    const Mode mode = opts_.transfer_mode;

    CenterField<double> x01(g_), x10(g_);
    for (std::size_t n = 0; n < eta0_m.size(); ++n) {
      const TransferRates<double> r{rates.s01.v[n], rates.s10.v[n], dt};
      rep.max_rate = std::max({rep.max_rate, dt * r.s01, dt * r.s10});
      const PairState<double> pm{{eta0_m.v[n], eta1_m.v[n]}, {f0.theta.v[n], f1.theta.v[n]}, {0.0, 0.0}};
      const auto out = apply_transfer(pm, r, cfg, mode);
      rep.flags |= out.flags;
      f0.eta.v[n] = out.state.eta[0];
      f1.eta.v[n] = out.state.eta[1];
      f0.theta.v[n] = out.state.theta[0];
      f1.theta.v[n] = out.state.theta[1];
      const double moved = out.state.eta[0] - pm.eta[0];
      (moved >= 0 ? rep.mass_moved_10 : rep.mass_moved_01) += std::abs(moved) * g_.cell_volume();
      if (cfg.method == Method::one) {
        x01.v[n] = r.dt * r.s01 * pick(cfg.q, pm.eta[0], out.state.eta[0]);
        x10.v[n] = r.dt * r.s10 * pick(cfg.q, pm.eta[1], out.state.eta[1]);
      }
    }

    if (cfg.method == Method::one) {
      const auto& e0r = cfg.r == TimeLevel::m ? eta0_m : f0.eta;
      const auto& e1r = cfg.r == TimeLevel::m ? eta1_m : f1.eta;
      const auto nu = face_nu_method1(g_, x01, x10, e0r, e1r, cfg.alpha_a, mode);
      rep.flags |= nu.flags;
      auto vel = face_transfer_method1(f0.vel, f1.vel, nu.nu01, nu.nu10);
      auto tend = face_transfer_method1(f0.tend, f1.tend, nu.nu01, nu.nu10);
      f0.vel = std::move(vel.f0);
      f1.vel = std::move(vel.f1);
      f0.tend = std::move(tend.f0);
      f1.tend = std::move(tend.f1);
    } else {
      const auto s01f = to_faces(g_, rates.s01), s10f = to_faces(g_, rates.s10);
      const auto lam_c = face_lambda(s01f, s10f, dt, cfg.alpha_c);
      const auto lam_a = face_lambda(s01f, s10f, dt, cfg.alpha_a);
      const auto e0f = to_faces(g_, eta0_m), e1f = to_faces(g_, eta1_m);
      auto vel = face_transfer_method2(f0.vel, f1.vel, e0f, e1f, lam_c, lam_a, mode);
      auto tend = face_transfer_method2(f0.tend, f1.tend, e0f, e1f, lam_c, lam_a, mode);
      rep.flags |= vel.flags;
      f0.vel = std::move(vel.w.f0);
      f1.vel = std::move(vel.w.f1);
      f0.tend = std::move(tend.w.f0);
      f1.tend = std::move(tend.w.f1);
    }
    for (auto* f : {&f0, &f1}) {
      pin_walls(f->vel);
      pin_walls(f->tend);
    }
    check_finite(s, "transfer");
    return rep;
  }

  StepReport step(ModelState& s, const TransferClosure& closure, const SchemeConfig& cfg, double dt) {
    dynamics_substep(s, dt);
    StepReport rep;
    if (closure.kind != TransferClosure::Kind::none) {
      const auto rates = compute_transfer_rates(s, closure, dt, opts_.constants);
      rep.transfer = transfer_substep(s, rates, cfg, dt);
    }
    s.time += dt;
    ++s.step;
    rep.step = s.step;
    rep.time = s.time;
    rep.energy = energy_budget(s, opts_.constants);
    for (const auto& f : s.fluids) {
      rep.min_eta.push_back(f.eta.min());
      for (double w : f.vel.z) rep.max_abs_w = std::max(rep.max_abs_w, std::abs(w));
    }
    rep.finite = std::isfinite(rep.energy.total());
    return rep;
  }

  // Helmholtz residual of the last pressure solve, relative to the right-hand side.
  [[nodiscard]] double last_residual() const { return last_residual_; }

 private:
  Grid2D g_;
  SolverOptions opts_;
  Eigen::SparseMatrix<double> A_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  double last_residual_ = 0;

  [[nodiscard]] int cell(int i, int k) const { return i + g_.nx * k; }

  void build_pattern() {
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < g_.nz; ++k)
      for (int i = 0; i < g_.nx; ++i) {
        const int c = cell(i, k);
        trip.emplace_back(c, c, 1.0);
        if (i > 0) trip.emplace_back(c, cell(i - 1, k), 0.0);
        if (i < g_.nx - 1) trip.emplace_back(c, cell(i + 1, k), 0.0);
        if (k > 0) trip.emplace_back(c, cell(i, k - 1), 0.0);
        if (k < g_.nz - 1) trip.emplace_back(c, cell(i, k + 1), 0.0);
      }
    const auto n = static_cast<Eigen::Index>(g_.cells());
    A_.resize(n, n);
    A_.setFromTriplets(trip.begin(), trip.end());
    A_.makeCompressed();
    ldlt_.analyzePattern(A_);
  }

  static CenterField<double> weighted(const FluidFields& f) {
    CenterField<double> w = f.eta;
    for (std::size_t n = 0; n < w.size(); ++n) w.v[n] *= f.theta.v[n];
    return w;
  }

  [[nodiscard]] FaceField<double> gravity() const {
    FaceField<double> gv(g_);
    for (int k = 1; k < g_.nz; ++k)
      for (int i = 0; i < g_.nx; ++i) gv.Z(i, k) = -opts_.constants.g;
    return gv;
  }

  // u^n + dt (1 - alpha) T^n + dt alpha (A(u*) + g): everything in the new
  // momentum except the implicit pressure gradient.
  [[nodiscard]] FaceField<double> explicit_velocity(const FluidFields& old, const FaceField<double>& vel_star,
                                                    double dt) const {
    const double a = opts_.alpha;
    FaceField<double> adv = momentum_advection(g_, vel_star);
    const auto gv = gravity();
    FaceField<double> u = old.vel;
    u.transform([&](double un, double tn, double ad, double gg) { return un + dt * (1 - a) * tn + dt * a * (ad + gg); },
                old.tend, adv, gv);
    pin_walls(u);
    return u;
  }

  [[nodiscard]] FaceField<double> tendency(const FluidFields& f, const CenterField<double>& pi) const {
    FaceField<double> t = momentum_advection(g_, f.vel);
    const auto gv = gravity();
    const auto thf = to_faces(g_, f.theta);
    const auto gp = gradient(g_, pi);
    const double cp = opts_.constants.cp;
    t.transform([&](double ad, double gg, double th, double gpi) { return ad + gg - cp * th * gpi; }, gv, thf, gp);
    pin_walls(t);
    return t;
  }

  // Solves a pi - D(K G pi) = rhs for the new Exner pressure, with the
  // equation of state linearised about pi*.
  CenterField<double> solve_exner(const std::vector<FluidFields>& old, const std::vector<FaceField<double>>& H,
                                  const std::vector<FaceField<double>>& ubar_exp,
                                  const std::vector<FaceField<double>>& theta_f, const CenterField<double>& pi_star,
                                  double dt) {
    const auto& pc = opts_.constants;
    const double a = opts_.alpha;
    const double e = pc.eos_exponent();
    FaceField<double> K(g_);
    for (std::size_t f = 0; f < H.size(); ++f)
      K.transform([](double k, double h, double t) { return k + h * t; }, H[f], theta_f[f]);
    const double kscale = pc.R * dt * dt * a * a * pc.cp;
    K.transform([&](double k) { return kscale * k; });

    Eigen::VectorXd rhs(static_cast<Eigen::Index>(g_.cells()));
    CenterField<double> rt(g_);
    for (std::size_t f = 0; f < H.size(); ++f) {
      FaceField<double> flux = H[f];
      flux.transform([](double h, double u) { return h * u; }, ubar_exp[f]);
      const auto adv = apply_flux(g_, weighted(old[f]), flux, dt);
      for (std::size_t n = 0; n < rt.size(); ++n) rt.v[n] += adv.v[n];
    }
    std::vector<double> diag(g_.cells());
    for (std::size_t n = 0; n < rt.size(); ++n) {
      const double ps = pi_star.v[n];
      const double slope = pc.p0 * e * std::pow(ps, e - 1);
      diag[n] = slope;
      rhs[static_cast<Eigen::Index>(n)] = pc.R * rt.v[n] - pc.p0 * std::pow(ps, e) + slope * ps;
    }

    const double rx = 1.0 / (g_.dx * g_.dx), rz = 1.0 / (g_.dz * g_.dz);
    A_.coeffs().setZero();
    for (int k = 0; k < g_.nz; ++k)
      for (int i = 0; i < g_.nx; ++i) {
        const int c = cell(i, k);
        double d = diag[static_cast<std::size_t>(c)];
        auto couple = [&](int other, double kf) {
          A_.coeffRef(c, other) -= kf;
          d += kf;
        };
        if (i > 0) couple(cell(i - 1, k), K.X(i, k) * rx);
        if (i < g_.nx - 1) couple(cell(i + 1, k), K.X(i + 1, k) * rx);
        if (k > 0) couple(cell(i, k - 1), K.Z(i, k) * rz);
        if (k < g_.nz - 1) couple(cell(i, k + 1), K.Z(i, k + 1) * rz);
        A_.coeffRef(c, c) = d;
      }
    ldlt_.factorize(A_);
    if (ldlt_.info() != Eigen::Success) throw SolverError("Helmholtz factorisation failed");
    Eigen::VectorXd x = ldlt_.solve(rhs);
    // One refinement pass; the pressure-gradient term amplifies any error in pi.
    x += ldlt_.solve(rhs - A_ * x);
    last_residual_ = (A_ * x - rhs).norm() / rhs.norm();
    if (!(last_residual_ <= opts_.solve_tolerance))
      throw SolverError(fmt::format("Helmholtz solve residual {:.3g} above tolerance {:.3g}", last_residual_,
                                    opts_.solve_tolerance));
    CenterField<double> pi(g_);
    for (std::size_t n = 0; n < pi.size(); ++n) pi.v[n] = x[static_cast<Eigen::Index>(n)];
    return pi;
  }

  void check_finite(const ModelState& s, const char* stage) const {
    for (std::size_t f = 0; f < s.fluids.size(); ++f) {
      const auto& fl = s.fluids[f];
      const char* bad = !fl.eta.finite()     ? "eta"
                        : !fl.theta.finite() ? "theta"
                        : !fl.vel.finite()   ? "velocity"
                        : !fl.tend.finite()  ? "tendency"
                                             : nullptr;
      if (bad) throw SolverError(fmt::format("non-finite {} of fluid {} after {} at step {}", bad, f, stage, s.step + 1));
    }
    if (!s.pi.finite()) throw SolverError(fmt::format("non-finite Exner pressure after {} at step {}", stage, s.step + 1));
  }
};

inline void write_diagnostics_header(std::ostream& os, std::size_t fluids) {
  os << "step,time,E_P,E_I,E_K,E_total,dE_rel_from_IC,dE_RSF";
  for (std::size_t f = 0; f < fluids; ++f) os << ",min_eta_" << f;
  os << ",max_abs_w\n";
}

inline void write_diagnostics_row(std::ostream& os, const StepReport& r, double e0, std::optional<double> de_rsf) {
  os << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},", r.step, r.time, r.energy.potential,
                    r.energy.internal, r.energy.kinetic, r.energy.total(), (r.energy.total() - e0) / e0);
  if (de_rsf) os << fmt::format("{:.17g}", *de_rsf);
  for (double m : r.min_eta) os << fmt::format(",{:.17g}", m);
  os << fmt::format(",{:.17g}\n", r.max_abs_w);
}

}  // namespace relabel
