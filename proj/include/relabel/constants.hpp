#pragma once

namespace relabel {

// Dry-air constants shared by the 0-D energy diagnostic and the 2D solver.
struct PhysicalConstants {
  double cp = 1004.0;     // J kg^-1 K^-1
  double R = 287.0;       // J kg^-1 K^-1
  double g = 9.81;        // m s^-2
  double p0 = 1.0e5;      // Pa, Exner reference pressure

  [[nodiscard]] constexpr double cv() const { return cp - R; }
  [[nodiscard]] constexpr double kappa() const { return R / cp; }
  [[nodiscard]] constexpr double gamma() const { return cp / cv(); }
  // Exponent of pi in the equation of state p0 pi^e = R sum(eta theta).
  [[nodiscard]] constexpr double eos_exponent() const { return (1.0 - kappa()) / kappa(); }
};

inline constexpr PhysicalConstants dry_air{};

}  // namespace relabel
