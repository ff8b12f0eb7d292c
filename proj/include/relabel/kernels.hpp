#pragma once

// Gridless two-fluid transfer kernels. Every formula the sweep analyzer and
// the 2D solver use for relabelling mass, temperature and momentum between
// fluid 0 and fluid 1 lives here; the grid layer only feeds face-interpolated
// inputs into the same functions.

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "relabel/constants.hpp"
#include "relabel/scheme.hpp"

namespace relabel {

// Raised in strict mode when a transfer leaves the domain on which its
// positivity or well-definedness guarantees hold.
class TransferError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Strict mode rejects explicit transfers with dt*S > 1 and undefined
// ratios; permissive mode computes anyway and raises a flag, so the sweep
// can chart the unstable region.
enum class Mode { strict, permissive };

enum class Direction { zero_to_one, one_to_zero };

template <std::floating_point Real>
struct PairState {
  std::array<Real, 2> eta{};    // kg m^-3
  std::array<Real, 2> theta{};  // K
  std::array<Real, 2> u{};      // m s^-1
};

template <std::floating_point Real>
struct TransferRates {
  Real s01 = 0;  // s^-1, fluid 0 -> fluid 1
  Real s10 = 0;  // s^-1, fluid 1 -> fluid 0
  Real dt = 0;   // s
};

struct TransferFlags {
  bool rate_exceeded = false;      // explicit mass transfer with dt*S > 1
  bool empty_denominator = false;  // nu ratio with an empty mass and a live rate
  bool empty_fluid = false;        // method two divided by a zero new mass

  [[nodiscard]] bool any() const { return rate_exceeded || empty_denominator || empty_fluid; }
  TransferFlags& operator|=(const TransferFlags& o) {
    rate_exceeded |= o.rate_exceeded;
    empty_denominator |= o.empty_denominator;
    empty_fluid |= o.empty_fluid;
    return *this;
  }
};

template <std::floating_point Real>
struct MassTransfer {
  std::array<Real, 2> eta{};
  Real lambda01 = 0;
  Real lambda10 = 0;
  bool rate_exceeded = false;
};

template <std::floating_point Real>
struct TransferOutcome {
  PairState<Real> state;
  Real lambda01 = 0;
  Real lambda10 = 0;
  std::optional<Real> nu01;  // method one only
  std::optional<Real> nu10;
  TransferFlags flags;
};

// lambda_ij = dt S_ij / (1 + alpha dt (S_ji + S_ij)).
template <std::floating_point Real>
[[nodiscard]] constexpr Real lambda_coeff(Real s_ij, Real s_ji, Real dt, int alpha) {
  const Real x = dt * s_ij;
  if (alpha == 0) return x;
  return x / (Real(1) + dt * (s_ji + s_ij));
}

// Two-term exchange written as a single moved amount, so that the pair sum
// is preserved up to one rounding per output.
template <std::floating_point Real>
[[nodiscard]] constexpr std::array<Real, 2> exchange(std::array<Real, 2> q, Real lambda01, Real lambda10) {
  const Real moved = lambda10 * q[1] - lambda01 * q[0];
  return {q[0] + moved, q[1] - moved};
}

template <std::floating_point Real>
[[nodiscard]] MassTransfer<Real> apply_mass_transfer(std::array<Real, 2> eta_m, const TransferRates<Real>& rates,
                                                     int alpha_c, Mode mode = Mode::permissive) {
  MassTransfer<Real> out;
  out.rate_exceeded = alpha_c == 0 && (rates.dt * rates.s01 > Real(1) || rates.dt * rates.s10 > Real(1));
  if (out.rate_exceeded && mode == Mode::strict)
    throw TransferError("explicit mass transfer with dt*S > 1 cannot guarantee positive mass");
  out.lambda01 = lambda_coeff(rates.s01, rates.s10, rates.dt, alpha_c);
  out.lambda10 = lambda_coeff(rates.s10, rates.s01, rates.dt, alpha_c);
  out.eta = exchange(eta_m, out.lambda01, out.lambda10);
  return out;
}

namespace detail {

// x / d where x is an incoming product S*eta. A zero product contributes
// nothing even over an empty mass; a live product over an empty mass
// diverges and is reported as +inf.
template <std::floating_point Real>
[[nodiscard]] constexpr Real ratio_term(Real x, Real d) {
  if (x == Real(0)) return Real(0);
  if (d == Real(0)) return std::numeric_limits<Real>::infinity();
  return x / d;
}

}  // namespace detail

// Core of the method-one coefficient. `x_ij` and `x_ji` are the weighted
// rates dt*S_ij*eta_i^q and dt*S_ji*eta_j^q; `eta_i_r`, `eta_j_r` the masses
// at the denominator level r.
//
// With alpha = 1 a diverging ratio has a finite limit (nu -> 1 when the
// receiving mass is empty, nu -> 0 when the donor mass is), which is what the
// full-bubble case relies on. With alpha = 0 it is a genuine blow-up.
template <std::floating_point Real>
[[nodiscard]] Real nu_weighted(Real x_ij, Real x_ji, Real eta_i_r, Real eta_j_r, int alpha_a,
                               Mode mode, TransferFlags* flags = nullptr) {
  const Real a = detail::ratio_term(x_ij, eta_j_r);
  auto diverged = [&](const char* what) {
    if (flags) flags->empty_denominator = true;
    if (mode == Mode::strict) throw TransferError(what);
  };
  if (alpha_a == 0) {
    if (std::isinf(a)) diverged("explicit nu coefficient with an empty receiving mass");
    return a;
  }
  const Real b = detail::ratio_term(x_ji, eta_i_r);
  const bool a_inf = std::isinf(a);
  const bool b_inf = std::isinf(b);
  if (a_inf && b_inf) {
    diverged("implicit nu coefficient with both masses empty");
    return std::numeric_limits<Real>::quiet_NaN();
  }
  if (a_inf) return Real(1);
  if (b_inf) return Real(0);
  return a / (Real(1) + a + b);
}

template <std::floating_point Real>
[[nodiscard]] constexpr Real pick(TimeLevel level, Real at_m, Real at_next) {
  return level == TimeLevel::m ? at_m : at_next;
}

// nu^{q,r}_{A ij} for the pair, in the given direction.
template <std::floating_point Real>
[[nodiscard]] Real nu_coeff(const PairState<Real>& state_m, std::array<Real, 2> eta_np1,
                            const TransferRates<Real>& rates, const SchemeConfig& cfg, Direction dir,
                            Mode mode = Mode::permissive, TransferFlags* flags = nullptr) {
  if (cfg.method != Method::one) throw std::invalid_argument("nu_coeff requires a method-one scheme");
  const int i = dir == Direction::zero_to_one ? 0 : 1;
  const int j = 1 - i;
  const Real s_ij = i == 0 ? rates.s01 : rates.s10;
  const Real s_ji = i == 0 ? rates.s10 : rates.s01;
  const Real x_ij = rates.dt * s_ij * pick(cfg.q, state_m.eta[i], eta_np1[i]);
  const Real x_ji = rates.dt * s_ji * pick(cfg.q, state_m.eta[j], eta_np1[j]);
  return nu_weighted(x_ij, x_ji, pick(cfg.r, state_m.eta[i], eta_np1[i]), pick(cfg.r, state_m.eta[j], eta_np1[j]),
                     cfg.alpha_a, mode, flags);
}

// phi_0 <- (1 - nu10) phi_0 + nu10 phi_1 and symmetrically. A weight of
// exactly one reproduces the donor value bit for bit.
template <std::floating_point Real>
[[nodiscard]] constexpr std::array<Real, 2> relabel_property(std::array<Real, 2> phi, Real nu01, Real nu10) {
  return {(Real(1) - nu10) * phi[0] + nu10 * phi[1], (Real(1) - nu01) * phi[1] + nu01 * phi[0]};
}

// Mass-weighted transfer of phi: Phi = eta^m phi is exchanged with the
// lambda_A coefficients and divided by the new mass. An empty new mass takes
// the donor's value.
template <std::floating_point Real>
[[nodiscard]] std::array<Real, 2> relabel_weighted(std::array<Real, 2> eta_m, std::array<Real, 2> phi,
                                                   Real lambda01, Real lambda10, std::array<Real, 2> eta_np1,
                                                   Mode mode = Mode::permissive, TransferFlags* flags = nullptr) {
  // No exchange: skip the eta*phi/eta round trip so the identity is exact.
  if (lambda01 == Real(0) && lambda10 == Real(0) && eta_np1 == eta_m) return phi;
  const auto weighted = exchange(std::array<Real, 2>{eta_m[0] * phi[0], eta_m[1] * phi[1]}, lambda01, lambda10);
  std::array<Real, 2> out{};
  for (int i = 0; i < 2; ++i) {
    if (eta_np1[i] == Real(0)) {
      if (weighted[i] != Real(0) && mode == Mode::strict)
        throw TransferError("mass-weighted transfer left momentum in an empty fluid");
      if (flags) flags->empty_fluid = true;
      out[i] = phi[1 - i];
    } else {
      out[i] = weighted[i] / eta_np1[i];
    }
  }
  return out;
}

template <std::floating_point Real>
[[nodiscard]] TransferOutcome<Real> apply_method1(const PairState<Real>& state_m, const TransferRates<Real>& rates,
                                                  const SchemeConfig& cfg, Mode mode = Mode::permissive) {
  if (cfg.method != Method::one) throw std::invalid_argument("apply_method1 requires a method-one scheme");
  TransferOutcome<Real> out;
  const auto mass = apply_mass_transfer(state_m.eta, rates, cfg.alpha_c, mode);
  out.flags.rate_exceeded = mass.rate_exceeded;
  out.lambda01 = mass.lambda01;
  out.lambda10 = mass.lambda10;
  const Real nu01 = nu_coeff(state_m, mass.eta, rates, cfg, Direction::zero_to_one, mode, &out.flags);
  const Real nu10 = nu_coeff(state_m, mass.eta, rates, cfg, Direction::one_to_zero, mode, &out.flags);
  out.nu01 = nu01;
  out.nu10 = nu10;
  out.state.eta = mass.eta;
  out.state.theta = relabel_property(state_m.theta, nu01, nu10);
  out.state.u = relabel_property(state_m.u, nu01, nu10);
  return out;
}

template <std::floating_point Real>
[[nodiscard]] TransferOutcome<Real> apply_method2(const PairState<Real>& state_m, const TransferRates<Real>& rates,
                                                  const SchemeConfig& cfg, Mode mode = Mode::permissive) {
  if (cfg.method != Method::two) throw std::invalid_argument("apply_method2 requires a method-two scheme");
  TransferOutcome<Real> out;
  const auto mass = apply_mass_transfer(state_m.eta, rates, cfg.alpha_c, mode);
  out.flags.rate_exceeded = mass.rate_exceeded;
  out.lambda01 = mass.lambda01;
  out.lambda10 = mass.lambda10;
  const Real la01 = lambda_coeff(rates.s01, rates.s10, rates.dt, cfg.alpha_a);
  const Real la10 = lambda_coeff(rates.s10, rates.s01, rates.dt, cfg.alpha_a);
  out.state.eta = mass.eta;
  out.state.theta = relabel_weighted(state_m.eta, state_m.theta, la01, la10, mass.eta, mode, &out.flags);
  out.state.u = relabel_weighted(state_m.eta, state_m.u, la01, la10, mass.eta, mode, &out.flags);
  return out;
}

template <std::floating_point Real>
[[nodiscard]] TransferOutcome<Real> apply_transfer(const PairState<Real>& state_m, const TransferRates<Real>& rates,
                                                   const SchemeConfig& cfg, Mode mode = Mode::permissive) {
  return cfg.method == Method::one ? apply_method1(state_m, rates, cfg, mode) : apply_method2(state_m, rates, cfg, mode);
}

// Closed-form energy weight for method two with alpha_c = alpha_a = alpha.
// Written so that mu(i->j) and mu(j->i) evaluate the same products in the
// same order, hence agree bit for bit.
template <std::floating_point Real>
[[nodiscard]] Real mu_coeff(const PairState<Real>& state_m, const TransferRates<Real>& rates, int alpha,
                            Direction dir) {
  const int i = dir == Direction::zero_to_one ? 0 : 1;
  const int j = 1 - i;
  const Real s_ij = i == 0 ? rates.s01 : rates.s10;
  const Real s_ji = i == 0 ? rates.s10 : rates.s01;
  const Real l_ij = lambda_coeff(s_ij, s_ji, rates.dt, alpha);
  const Real l_ji = lambda_coeff(s_ji, s_ij, rates.dt, alpha);
  const Real ei = state_m.eta[i];
  const Real ej = state_m.eta[j];
  const Real ti = (Real(1) - l_ij) * l_ij * ei;
  const Real tj = (Real(1) - l_ji) * l_ji * ej;
  const Real num = (ei * ej) * (ti + tj);
  if (num == Real(0)) return Real(0);
  const Real fi = l_ij * ei + (Real(1) - l_ji) * ej;
  const Real fj = l_ji * ej + (Real(1) - l_ij) * ei;
  return num / (fi * fj);
}

// Kinetic energy removed by a method-two transfer (alpha_c = alpha_a).
template <std::floating_point Real>
[[nodiscard]] Real delta_K(const PairState<Real>& state_m, const TransferRates<Real>& rates, const SchemeConfig& cfg) {
  if (cfg.method != Method::two || cfg.alpha_c != cfg.alpha_a)
    throw std::invalid_argument("delta_K requires method two with alpha_c == alpha_a");
  const Real mu01 = mu_coeff(state_m, rates, cfg.alpha_c, Direction::zero_to_one);
  const Real mu10 = mu_coeff(state_m, rates, cfg.alpha_c, Direction::one_to_zero);
  const Real du = state_m.u[0] - state_m.u[1];
  return Real(0.5) * du * (mu01 * state_m.u[0] - mu10 * state_m.u[1]);
}

template <std::floating_point Real>
struct PairDiagnostics {
  Real dF_rel = 0;    // (F^{n+1} - F^m) / F^0, F = sum eta u
  Real dE_rel = 0;    // (E^{n+1} - E^m) / E^0, E = E_I + E_K
  Real dI_rel = 0;    // relative change of sum eta theta
  Real mass_err = 0;  // relative change of sum eta
  bool bound_violation = false;
  bool negative_mass = false;
  bool finite = true;
};

template <std::floating_point Real>
[[nodiscard]] Real internal_energy(const PairState<Real>& s, Real cv, Real pi_ref) {
  return cv * pi_ref * (s.eta[0] * s.theta[0] + s.eta[1] * s.theta[1]);
}

template <std::floating_point Real>
[[nodiscard]] Real kinetic_energy(const PairState<Real>& s) {
  return Real(0.5) * (s.eta[0] * s.u[0] * s.u[0] + s.eta[1] * s.u[1] * s.u[1]);
}

namespace detail {

// True when either new value leaves [min, max] of the old pair by more than
// 16 epsilon, measured against the magnitude of the interval.
template <std::floating_point Real>
[[nodiscard]] bool outside_hull(std::array<Real, 2> before, std::array<Real, 2> after) {
  const Real lo = std::min(before[0], before[1]);
  const Real hi = std::max(before[0], before[1]);
  const Real scale = std::max({hi - lo, std::abs(lo), std::abs(hi)});
  const Real tol = 16 * std::numeric_limits<Real>::epsilon() * scale;
  for (Real v : after)
    if (!(v >= lo - tol && v <= hi + tol)) return true;
  return false;
}

}  // namespace detail

// The 0-D energy uses a fixed reference Exner value, so only the exchange of
// eta*theta and the kinetic energy enter the difference.
template <std::floating_point Real>
[[nodiscard]] PairDiagnostics<Real> pair_diagnostics(const PairState<Real>& before, const PairState<Real>& after,
                                                     const PhysicalConstants& pc = dry_air, Real pi_ref = 1) {
  PairDiagnostics<Real> d;
  const Real cv = static_cast<Real>(pc.cv());
  const Real f0 = before.eta[0] * before.u[0] + before.eta[1] * before.u[1];
  const Real f1 = after.eta[0] * after.u[0] + after.eta[1] * after.u[1];
  const Real e0 = internal_energy(before, cv, pi_ref) + kinetic_energy(before);
  const Real e1 = internal_energy(after, cv, pi_ref) + kinetic_energy(after);
  const Real i0 = before.eta[0] * before.theta[0] + before.eta[1] * before.theta[1];
  const Real i1 = after.eta[0] * after.theta[0] + after.eta[1] * after.theta[1];
  const Real m0 = before.eta[0] + before.eta[1];
  const Real m1 = after.eta[0] + after.eta[1];
  d.dF_rel = (f1 - f0) / f0;
  d.dE_rel = (e1 - e0) / e0;
  d.dI_rel = (i1 - i0) / i0;
  d.mass_err = (m1 - m0) / m0;
  d.negative_mass = after.eta[0] < 0 || after.eta[1] < 0;
  d.bound_violation = detail::outside_hull(before.u, after.u) || detail::outside_hull(before.theta, after.theta);
  d.finite = std::isfinite(d.dF_rel) && std::isfinite(d.dE_rel) && std::isfinite(d.dI_rel);
  return d;
}

}  // namespace relabel
