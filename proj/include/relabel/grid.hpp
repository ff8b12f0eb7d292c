#pragma once

// Staggered (C-grid) storage and operators on a uniform rectangular domain
// with rigid walls on every side. Scalars live at cell centres, the normal
// velocity component on faces: u on x-faces, w on z-faces.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "relabel/kernels.hpp"

namespace relabel {

struct Grid2D {
  int nx = 0;
  int nz = 0;
  double dx = 0;  // m
  double dz = 0;  // m
  double x0 = 0;  // x of the left wall, m
  double z0 = 0;  // z of the bottom wall, m

  void validate() const {
    if (nx < 1 || nz < 1) throw std::invalid_argument("grid needs at least one cell in each direction");
    if (!(dx > 0) || !(dz > 0)) throw std::invalid_argument("grid spacings must be positive");
  }
  [[nodiscard]] std::size_t cells() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(nz); }
  [[nodiscard]] double width() const { return nx * dx; }
  [[nodiscard]] double height() const { return nz * dz; }
  [[nodiscard]] double xc(int i) const { return x0 + (i + 0.5) * dx; }
  [[nodiscard]] double zc(int k) const { return z0 + (k + 0.5) * dz; }
  [[nodiscard]] double xf(int i) const { return x0 + i * dx; }
  [[nodiscard]] double zf(int k) const { return z0 + k * dz; }
  [[nodiscard]] double cell_volume() const { return dx * dz; }
  friend bool operator==(const Grid2D&, const Grid2D&) = default;
};

template <std::floating_point Real = double>
struct CenterField {
  int nx = 0;
  int nz = 0;
  std::vector<Real> v;

  CenterField() = default;
  explicit CenterField(const Grid2D& g, Real init = 0) : nx(g.nx), nz(g.nz), v(g.cells(), init) {}

  Real& operator()(int i, int k) { return v[static_cast<std::size_t>(i + nx * k)]; }
  const Real& operator()(int i, int k) const { return v[static_cast<std::size_t>(i + nx * k)]; }
  [[nodiscard]] std::size_t size() const { return v.size(); }

  [[nodiscard]] Real sum() const {
    Real s = 0;
    for (Real x : v) s += x;
    return s;
  }
  [[nodiscard]] Real min() const { return *std::min_element(v.begin(), v.end()); }
  [[nodiscard]] Real max() const { return *std::max_element(v.begin(), v.end()); }
  [[nodiscard]] bool finite() const {
    return std::all_of(v.begin(), v.end(), [](Real x) { return std::isfinite(x); });
  }
  friend bool operator==(const CenterField&, const CenterField&) = default;
};

// x-face (i, k) sits at x = x0 + i dx for i in [0, nx]; z-face (i, k) at
// z = z0 + k dz for k in [0, nz].
template <std::floating_point Real = double>
struct FaceField {
  int nx = 0;
  int nz = 0;
  std::vector<Real> x;
  std::vector<Real> z;

  FaceField() = default;
  explicit FaceField(const Grid2D& g, Real init = 0)
      : nx(g.nx),
        nz(g.nz),
        x(static_cast<std::size_t>((g.nx + 1) * g.nz), init),
        z(static_cast<std::size_t>(g.nx * (g.nz + 1)), init) {}

  Real& X(int i, int k) { return x[static_cast<std::size_t>(i + (nx + 1) * k)]; }
  const Real& X(int i, int k) const { return x[static_cast<std::size_t>(i + (nx + 1) * k)]; }
  Real& Z(int i, int k) { return z[static_cast<std::size_t>(i + nx * k)]; }
  const Real& Z(int i, int k) const { return z[static_cast<std::size_t>(i + nx * k)]; }

  [[nodiscard]] bool finite() const {
    auto ok = [](Real s) { return std::isfinite(s); };
    return std::all_of(x.begin(), x.end(), ok) && std::all_of(z.begin(), z.end(), ok);
  }
  [[nodiscard]] Real max_abs() const {
    Real m = 0;
    for (Real s : x) m = std::max(m, std::abs(s));
    for (Real s : z) m = std::max(m, std::abs(s));
    return m;
  }

  // Applies f to matching entries of this and the other fields.
  template <class F, class... Rest>
  void transform(F&& f, const Rest&... rest) {
    for (std::size_t n = 0; n < x.size(); ++n) x[n] = f(x[n], rest.x[n]...);
    for (std::size_t n = 0; n < z.size(); ++n) z[n] = f(z[n], rest.z[n]...);
  }

  friend bool operator==(const FaceField&, const FaceField&) = default;
};

// Wall-normal faces carry no flow.
template <std::floating_point Real>
void pin_walls(FaceField<Real>& f) {
  for (int k = 0; k < f.nz; ++k) f.X(0, k) = f.X(f.nx, k) = 0;
  for (int i = 0; i < f.nx; ++i) f.Z(i, 0) = f.Z(i, f.nz) = 0;
}

template <std::floating_point Real>
[[nodiscard]] FaceField<Real> to_faces(const Grid2D& g, const CenterField<Real>& c) {
  FaceField<Real> f(g);
  for (int k = 0; k < g.nz; ++k) {
    f.X(0, k) = c(0, k);
    for (int i = 1; i < g.nx; ++i) f.X(i, k) = Real(0.5) * (c(i - 1, k) + c(i, k));
    f.X(g.nx, k) = c(g.nx - 1, k);
  }
  for (int i = 0; i < g.nx; ++i) {
    f.Z(i, 0) = c(i, 0);
    for (int k = 1; k < g.nz; ++k) f.Z(i, k) = Real(0.5) * (c(i, k - 1) + c(i, k));
    f.Z(i, g.nz) = c(i, g.nz - 1);
  }
  return f;
}

template <std::floating_point Real>
struct CenterPair {
  CenterField<Real> x;  // mean of the two bounding x-faces
  CenterField<Real> z;  // mean of the two bounding z-faces
};

template <std::floating_point Real>
[[nodiscard]] CenterPair<Real> to_centers(const Grid2D& g, const FaceField<Real>& f) {
  CenterPair<Real> out{CenterField<Real>(g), CenterField<Real>(g)};
  for (int k = 0; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) {
      out.x(i, k) = Real(0.5) * (f.X(i, k) + f.X(i + 1, k));
      out.z(i, k) = Real(0.5) * (f.Z(i, k) + f.Z(i, k + 1));
    }
  return out;
}

template <std::floating_point Real>
[[nodiscard]] CenterField<Real> divergence(const Grid2D& g, const FaceField<Real>& flux) {
  CenterField<Real> d(g);
  const Real rdx = Real(1) / Real(g.dx);
  const Real rdz = Real(1) / Real(g.dz);
  for (int k = 0; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i)
      d(i, k) = (flux.X(i + 1, k) - flux.X(i, k)) * rdx + (flux.Z(i, k + 1) - flux.Z(i, k)) * rdz;
  return d;
}

template <std::floating_point Real>
[[nodiscard]] FaceField<Real> gradient(const Grid2D& g, const CenterField<Real>& c) {
  FaceField<Real> f(g);
  const Real rdx = Real(1) / Real(g.dx);
  const Real rdz = Real(1) / Real(g.dz);
  for (int k = 0; k < g.nz; ++k)
    for (int i = 1; i < g.nx; ++i) f.X(i, k) = (c(i, k) - c(i - 1, k)) * rdx;
  for (int k = 1; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) f.Z(i, k) = (c(i, k) - c(i, k - 1)) * rdz;
  return f;
}

// Five-point Laplacian with zero-gradient walls (mirrored ghost cells).
template <std::floating_point Real>
[[nodiscard]] CenterField<Real> laplacian(const Grid2D& g, const CenterField<Real>& c) {
  return divergence(g, gradient(g, c));
}

// Harmonic-mean (van Leer) slope of a cell given its neighbour differences.
template <std::floating_point Real>
[[nodiscard]] constexpr Real vanleer_slope(Real left, Real centre, Real right) {
  const Real a = centre - left;
  const Real b = right - centre;
  if (!(a * b > 0)) return 0;
  return 2 * a * b / (a + b);
}

class CourantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Limited slope of cell n along a line of `count` cells; zero at the walls.
template <std::floating_point Real, class At>
Real line_slope(At at, int n, int count) {
  if (n <= 0 || n >= count - 1) return 0;
  return vanleer_slope(at(n - 1), at(n), at(n + 1));
}

}  // namespace detail

// Upwind face values of q with van Leer slopes and the Lax-Wendroff time
// factor (1 - |c|)/2, c the face Courant number. Wall faces are zero.
template <std::floating_point Real>
[[nodiscard]] FaceField<Real> vanleer_face_values(const Grid2D& g, const CenterField<Real>& q,
                                                  const FaceField<Real>& vel, Real dt) {
  FaceField<Real> f(g);
  const Real cx = dt / Real(g.dx);
  const Real cz = dt / Real(g.dz);
  auto check = [](Real c, const char* dir, int i, int k) {
    if (!(std::abs(c) <= Real(1)))
      throw CourantError(fmt::format("advective Courant number {:.3g} exceeds 1 on {}-face ({}, {})",
                                     static_cast<double>(c), dir, i, k));
  };
  for (int k = 0; k < g.nz; ++k) {
    auto row = [&](int n) { return q(n, k); };
    for (int i = 1; i < g.nx; ++i) {
      const Real c = vel.X(i, k) * cx;
      check(c, "x", i, k);
      const int up = c >= 0 ? i - 1 : i;
      const Real s = detail::line_slope<Real>(row, up, g.nx);
      const Real half = Real(0.5) * (Real(1) - std::abs(c)) * s;
      f.X(i, k) = c >= 0 ? q(up, k) + half : q(up, k) - half;
    }
  }
  for (int i = 0; i < g.nx; ++i) {
    auto col = [&](int n) { return q(i, n); };
    for (int k = 1; k < g.nz; ++k) {
      const Real c = vel.Z(i, k) * cz;
      check(c, "z", i, k);
      const int up = c >= 0 ? k - 1 : k;
      const Real s = detail::line_slope<Real>(col, up, g.nz);
      const Real half = Real(0.5) * (Real(1) - std::abs(c)) * s;
      f.Z(i, k) = c >= 0 ? q(i, up) + half : q(i, up) - half;
    }
  }
  return f;
}

// Per-face factor in [0, 1] that scales each cell's outgoing fluxes so the
// cell cannot be emptied below zero within dt. Inflows are left alone.
template <std::floating_point Real>
[[nodiscard]] FaceField<Real> outflow_limiter(const Grid2D& g, const CenterField<Real>& q,
                                              const FaceField<Real>& flux, Real dt) {
  CenterField<Real> ratio(g, Real(1));
  const Real ax = dt / Real(g.dx);
  const Real az = dt / Real(g.dz);
  for (int k = 0; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) {
      const Real out = ax * (std::max(Real(0), flux.X(i + 1, k)) - std::min(Real(0), flux.X(i, k))) +
                       az * (std::max(Real(0), flux.Z(i, k + 1)) - std::min(Real(0), flux.Z(i, k)));
      // The margin keeps the rounding of q - outflow from dipping below zero.
      const Real budget = q(i, k) * (Real(1) - 16 * std::numeric_limits<Real>::epsilon());
      if (out > budget) ratio(i, k) = budget > 0 ? budget / out : Real(0);
    }
  FaceField<Real> lim(g, Real(1));
  for (int k = 0; k < g.nz; ++k)
    for (int i = 1; i < g.nx; ++i) lim.X(i, k) = flux.X(i, k) >= 0 ? ratio(i - 1, k) : ratio(i, k);
  for (int i = 0; i < g.nx; ++i)
    for (int k = 1; k < g.nz; ++k) lim.Z(i, k) = flux.Z(i, k) >= 0 ? ratio(i, k - 1) : ratio(i, k);
  return lim;
}

// Limited mass-like flux q_face * vel * limiter on every face.
template <std::floating_point Real>
struct LimitedFlux {
  FaceField<Real> face_value;  // reconstructed q
  FaceField<Real> limiter;     // outflow limiter factor
  FaceField<Real> flux;        // limiter * vel * face_value
};

template <std::floating_point Real>
[[nodiscard]] LimitedFlux<Real> vanleer_flux(const Grid2D& g, const CenterField<Real>& q, const FaceField<Real>& vel,
                                             Real dt) {
  LimitedFlux<Real> out;
  out.face_value = vanleer_face_values(g, q, vel, dt);
  FaceField<Real> raw = out.face_value;
  raw.transform([](Real fv, Real v) { return fv * v; }, vel);
  out.limiter = outflow_limiter(g, q, raw, dt);
  out.flux = raw;
  out.flux.transform([](Real f, Real l) { return f * l; }, out.limiter);
  return out;
}

template <std::floating_point Real>
[[nodiscard]] CenterField<Real> apply_flux(const Grid2D& g, const CenterField<Real>& q, const FaceField<Real>& flux,
                                           Real dt) {
  const auto div = divergence(g, flux);
  CenterField<Real> out = q;
  for (std::size_t n = 0; n < out.size(); ++n) out.v[n] = q.v[n] - dt * div.v[n];
  return out;
}

// One flux-form van Leer step of q by the face velocity field.
template <std::floating_point Real>
[[nodiscard]] CenterField<Real> advect_vanleer(const Grid2D& g, const CenterField<Real>& q,
                                               const FaceField<Real>& vel, Real dt) {
  return apply_flux(g, q, vanleer_flux(g, q, vel, dt).flux, dt);
}

// Method-one coefficients on faces: nu_ij = [x_ij]_f / [eta_j^r]_f with the
// implicit denominator built from the same face values. x_ij = dt S_ij eta_i^q.
template <std::floating_point Real>
struct FaceNu {
  FaceField<Real> nu01;
  FaceField<Real> nu10;
  TransferFlags flags;
};

template <std::floating_point Real>
[[nodiscard]] FaceNu<Real> face_nu_method1(const Grid2D& g, const CenterField<Real>& x01, const CenterField<Real>& x10,
                                           const CenterField<Real>& eta0_r, const CenterField<Real>& eta1_r,
                                           int alpha_a, Mode mode) {
  const auto fx01 = to_faces(g, x01), fx10 = to_faces(g, x10);
  const auto fe0 = to_faces(g, eta0_r), fe1 = to_faces(g, eta1_r);
  FaceNu<Real> out{FaceField<Real>(g), FaceField<Real>(g), {}};
  auto fill = [&](std::vector<Real>& n01, std::vector<Real>& n10, const std::vector<Real>& a01,
                  const std::vector<Real>& a10, const std::vector<Real>& e0, const std::vector<Real>& e1) {
    for (std::size_t n = 0; n < n01.size(); ++n) {
      n01[n] = nu_weighted(a01[n], a10[n], e0[n], e1[n], alpha_a, mode, &out.flags);
      n10[n] = nu_weighted(a10[n], a01[n], e1[n], e0[n], alpha_a, mode, &out.flags);
    }
  };
  fill(out.nu01.x, out.nu10.x, fx01.x, fx10.x, fe0.x, fe1.x);
  fill(out.nu01.z, out.nu10.z, fx01.z, fx10.z, fe0.z, fe1.z);
  return out;
}

template <std::floating_point Real>
struct FacePair {
  FaceField<Real> f0;
  FaceField<Real> f1;
};

template <std::floating_point Real>
[[nodiscard]] FacePair<Real> face_transfer_method1(const FaceField<Real>& w0, const FaceField<Real>& w1,
                                                   const FaceField<Real>& nu01, const FaceField<Real>& nu10) {
  FacePair<Real> out{w0, w1};
  auto run = [](std::vector<Real>& a, std::vector<Real>& b, const std::vector<Real>& n01,
                const std::vector<Real>& n10) {
    for (std::size_t n = 0; n < a.size(); ++n) {
      const auto r = relabel_property<Real>({a[n], b[n]}, n01[n], n10[n]);
      a[n] = r[0];
      b[n] = r[1];
    }
  };
  run(out.f0.x, out.f1.x, nu01.x, nu10.x);
  run(out.f0.z, out.f1.z, nu01.z, nu10.z);
  return out;
}

// Face lambda coefficients from face-interpolated rates.
template <std::floating_point Real>
[[nodiscard]] FacePair<Real> face_lambda(const FaceField<Real>& s01_f, const FaceField<Real>& s10_f, Real dt,
                                         int alpha) {
  FacePair<Real> out{s01_f, s10_f};
  out.f0.transform([&](Real a, Real b) { return lambda_coeff(a, b, dt, alpha); }, s10_f);
  out.f1.transform([&](Real b, Real a) { return lambda_coeff(b, a, dt, alpha); }, s01_f);
  return out;
}

template <std::floating_point Real>
struct FaceMethod2Result {
  FacePair<Real> w;  // new velocities
  FacePair<Real> N;  // face masses after transfer
  TransferFlags flags;
};

// Method-two transfer on faces. `lam_c` and `lam_a` hold (lambda_01, lambda_10)
// for continuity and momentum; the empty-face convention follows the kernels.
template <std::floating_point Real>
[[nodiscard]] FaceMethod2Result<Real> face_transfer_method2(const FaceField<Real>& w0, const FaceField<Real>& w1,
                                                            const FaceField<Real>& eta0_f, const FaceField<Real>& eta1_f,
                                                            const FacePair<Real>& lam_c, const FacePair<Real>& lam_a,
                                                            Mode mode = Mode::permissive) {
  FaceMethod2Result<Real> out{{w0, w1}, {eta0_f, eta1_f}, {}};
  auto run = [&](std::vector<Real>& a, std::vector<Real>& b, std::vector<Real>& n0, std::vector<Real>& n1,
                 const std::vector<Real>& lc01, const std::vector<Real>& lc10, const std::vector<Real>& la01,
                 const std::vector<Real>& la10) {
    for (std::size_t n = 0; n < a.size(); ++n) {
      const std::array<Real, 2> e{n0[n], n1[n]};
      const auto N = exchange(e, lc01[n], lc10[n]);
      const auto w = relabel_weighted(e, {a[n], b[n]}, la01[n], la10[n], N, mode, &out.flags);
      a[n] = w[0];
      b[n] = w[1];
      n0[n] = N[0];
      n1[n] = N[1];
    }
  };
  run(out.w.f0.x, out.w.f1.x, out.N.f0.x, out.N.f1.x, lam_c.f0.x, lam_c.f1.x, lam_a.f0.x, lam_a.f1.x);
  run(out.w.f0.z, out.w.f1.z, out.N.f0.z, out.N.f1.z, lam_c.f0.z, lam_c.f1.z, lam_a.f0.z, lam_a.f1.z);
  return out;
}

// Per-cell kinetic energy density sum_i 1/2 [N_i w_i^2]_c over both
// velocity components. Summed over the domain this equals the face sum with
// boundary faces at half weight.
template <std::floating_point Real>
[[nodiscard]] CenterField<Real> kinetic_energy_cgrid(const Grid2D& g, const std::vector<FaceField<Real>>& N,
                                                     const std::vector<FaceField<Real>>& w) {
  if (N.size() != w.size()) throw std::invalid_argument("kinetic_energy_cgrid needs one mass field per velocity");
  CenterField<Real> ke(g);
  for (std::size_t f = 0; f < N.size(); ++f) {
    FaceField<Real> e = N[f];
    e.transform([](Real n, Real v) { return Real(0.5) * n * v * v; }, w[f]);
    const auto c = to_centers(g, e);
    for (std::size_t n = 0; n < ke.size(); ++n) ke.v[n] += c.x.v[n] + c.z.v[n];
  }
  return ke;
}

namespace detail {

inline std::ofstream open_field_file(const std::filesystem::path& path, const std::string& quantity, double time) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << fmt::format("# quantity={} time={:.17g}\n", quantity, time);
  os << "i,k,x,z,value\n";
  return os;
}

}  // namespace detail

template <std::floating_point Real>
void write_field_csv(const std::filesystem::path& path, const Grid2D& g, const CenterField<Real>& f,
                     const std::string& quantity, double time) {
  auto os = detail::open_field_file(path, quantity, time);
  for (int k = 0; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i)
      os << fmt::format("{},{},{:.17g},{:.17g},{:.17g}\n", i, k, g.xc(i), g.zc(k), static_cast<double>(f(i, k)));
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

// Dumps one face component: 'x' writes the x-faces, 'z' the z-faces.
template <std::floating_point Real>
void write_face_csv(const std::filesystem::path& path, const Grid2D& g, const FaceField<Real>& f, char component,
                    const std::string& quantity, double time) {
  auto os = detail::open_field_file(path, quantity, time);
  if (component == 'x') {
    for (int k = 0; k < g.nz; ++k)
      for (int i = 0; i <= g.nx; ++i)
        os << fmt::format("{},{},{:.17g},{:.17g},{:.17g}\n", i, k, g.xf(i), g.zc(k), static_cast<double>(f.X(i, k)));
  } else {
    for (int k = 0; k <= g.nz; ++k)
      for (int i = 0; i < g.nx; ++i)
        os << fmt::format("{},{},{:.17g},{:.17g},{:.17g}\n", i, k, g.xc(i), g.zf(k), static_cast<double>(f.Z(i, k)));
  }
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace relabel
