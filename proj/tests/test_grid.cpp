#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "relabel/grid.hpp"

using namespace relabel;
using Catch::Approx;

namespace {

constexpr double eps = std::numeric_limits<double>::epsilon();

Grid2D small_grid() { return {6, 4, 100.0, 50.0, -300.0, 0.0}; }

CenterField<double> random_center(const Grid2D& g, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  CenterField<double> c(g);
  for (auto& v : c.v) v = d(rng);
  return c;
}

FaceField<double> random_faces(const Grid2D& g, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  FaceField<double> f(g);
  for (auto& v : f.x) v = d(rng);
  for (auto& v : f.z) v = d(rng);
  pin_walls(f);
  return f;
}

}  // namespace

TEST_CASE("to_faces: constants, means and linear profiles") {
  const auto g = small_grid();
  CenterField<double> c(g, 3.5);
  const auto f = to_faces(g, c);
  for (double v : f.x) CHECK(v == 3.5);
  for (double v : f.z) CHECK(v == 3.5);

  CenterField<double> lin(g);
  for (int k = 0; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) lin(i, k) = 2.0 * g.xc(i) + 0.5 * g.zc(k);
  const auto fl = to_faces(g, lin);
  for (int k = 0; k < g.nz; ++k)
    for (int i = 1; i < g.nx; ++i) CHECK(fl.X(i, k) == Approx(2.0 * g.xf(i) + 0.5 * g.zc(k)));
  for (int k = 1; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) CHECK(fl.Z(i, k) == Approx(2.0 * g.xc(i) + 0.5 * g.zf(k)));
  // Boundary faces copy the adjacent centre.
  CHECK(fl.X(0, 1) == lin(0, 1));
  CHECK(fl.Z(2, g.nz) == lin(2, g.nz - 1));

  CenterField<double> two(g);
  two(0, 0) = 1;
  two(1, 0) = 3;
  CHECK(to_faces(g, two).X(1, 0) == 2.0);
}

TEST_CASE("to_centers: constants and linear profiles") {
  const auto g = small_grid();
  FaceField<double> f(g, 1.25);
  const auto c = to_centers(g, f);
  for (double v : c.x.v) CHECK(v == 1.25);
  for (double v : c.z.v) CHECK(v == 1.25);

  FaceField<double> lin(g);
  for (int k = 0; k < g.nz; ++k)
    for (int i = 0; i <= g.nx; ++i) lin.X(i, k) = 3.0 * g.xf(i);
  for (int k = 0; k <= g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) lin.Z(i, k) = -g.zf(k);
  const auto cl = to_centers(g, lin);
  for (int k = 0; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) {
      CHECK(cl.x(i, k) == Approx(3.0 * g.xc(i)));
      CHECK(cl.z(i, k) == Approx(-g.zc(k)));
    }
}

TEST_CASE("divergence of uniform, linear and walled fluxes") {
  const auto g = small_grid();
  FaceField<double> uni(g, 4.0);
  for (double v : divergence(g, uni).v) CHECK(v == 0.0);

  FaceField<double> lin(g);
  for (int k = 0; k < g.nz; ++k)
    for (int i = 0; i <= g.nx; ++i) lin.X(i, k) = g.xf(i);
  for (double v : divergence(g, lin).v) CHECK(v == Approx(1.0));

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = random_faces(g, rng, -5, 5);
    double scale = 0;
    for (double v : f.x) scale += std::abs(v);
    for (double v : f.z) scale += std::abs(v);
    const auto d = divergence(g, f);
    double integral = 0;
    for (double v : d.v) integral += v * g.cell_volume();
    CHECK(std::abs(integral) <= 8 * eps * scale * std::max(g.dx, g.dz));
  }
}

TEST_CASE("gradient of constant, linear and checkerboard fields") {
  const auto g = small_grid();
  for (double v : gradient(g, CenterField<double>(g, 7.0)).x) CHECK(v == 0.0);

  CenterField<double> lin(g), chk(g);
  for (int k = 0; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) {
      lin(i, k) = 0.25 * g.xc(i) - 2.0 * g.zc(k);
      chk(i, k) = (i + k) % 2 == 0 ? 1.0 : -1.0;
    }
  const auto gl = gradient(g, lin);
  const auto gc = gradient(g, chk);
  for (int k = 0; k < g.nz; ++k) {
    CHECK(gl.X(0, k) == 0.0);
    CHECK(gl.X(g.nx, k) == 0.0);
    for (int i = 1; i < g.nx; ++i) {
      CHECK(gl.X(i, k) == Approx(0.25));
      CHECK(gc.X(i, k) == Approx(((i + k) % 2 == 0 ? 2.0 : -2.0) / g.dx));
    }
  }
  for (int k = 1; k < g.nz; ++k)
    for (int i = 0; i < g.nx; ++i) CHECK(gl.Z(i, k) == Approx(-2.0));
}

TEST_CASE("operators are linear") {
  const auto g = small_grid();
  std::mt19937_64 rng(11);
  const auto a = random_center(g, rng, -1, 1), b = random_center(g, rng, -1, 1);
  CenterField<double> s(g);
  for (std::size_t n = 0; n < s.size(); ++n) s.v[n] = 2 * a.v[n] - 3 * b.v[n];
  const auto fa = to_faces(g, a), fb = to_faces(g, b), fs = to_faces(g, s);
  for (std::size_t n = 0; n < fs.x.size(); ++n) CHECK(fs.x[n] == Approx(2 * fa.x[n] - 3 * fb.x[n]).margin(1e-14));
  const auto ga = gradient(g, a), gb = gradient(g, b), gs = gradient(g, s);
  for (std::size_t n = 0; n < gs.z.size(); ++n) CHECK(gs.z[n] == Approx(2 * ga.z[n] - 3 * gb.z[n]).margin(1e-14));
}

TEST_CASE("van Leer slope") {
  CHECK(vanleer_slope(0.0, 1.0, 2.0) == 1.0);
  CHECK(vanleer_slope(0.0, 1.0, 3.0) == Approx(4.0 / 3.0));
  CHECK(vanleer_slope(0.0, 1.0, 0.5) == 0.0);
  CHECK(vanleer_slope(2.0, 2.0, 5.0) == 0.0);
}

TEST_CASE("advection preserves constants and is the identity without flow") {
  const auto g = small_grid();
  std::mt19937_64 rng(5);
  const auto q = random_center(g, rng, 0.5, 2.0);
  CHECK(advect_vanleer(g, q, FaceField<double>(g), 10.0) == q);

  // A closed loop of face flow around one interior corner is divergence-free.
  FaceField<double> loop(g);
  loop.X(3, 1) = 0.01 * g.dx;
  loop.Z(3, 2) = 0.01 * g.dz;
  loop.X(3, 2) = -0.01 * g.dx;
  loop.Z(2, 2) = -0.01 * g.dz;
  for (double v : divergence(g, loop).v) REQUIRE(std::abs(v) < 1e-15);
  const auto c = advect_vanleer(g, CenterField<double>(g, 1.3), loop, 20.0);
  for (double v : c.v) CHECK(v == Approx(1.3).epsilon(4 * eps));
}

namespace {

// Textbook 1-D flux-form van Leer step used as the reference.
std::vector<double> reference_1d(const std::vector<double>& q, double c) {
  const int n = static_cast<int>(q.size());
  auto slope = [&](int j) {
    if (j <= 0 || j >= n - 1) return 0.0;
    const double a = q[j] - q[j - 1], b = q[j + 1] - q[j];
    return a * b > 0 ? 2 * a * b / (a + b) : 0.0;
  };
  std::vector<double> flux(n + 1, 0.0);
  for (int f = 1; f < n; ++f) flux[f] = c * (q[f - 1] + 0.5 * (1 - c) * slope(f - 1));
  std::vector<double> out(q);
  for (int j = 0; j < n; ++j) out[j] = q[j] - (flux[j + 1] - flux[j]);
  return out;
}

}  // namespace

TEST_CASE("top-hat advected at Courant 0.5 matches the 1-D reference") {
  const Grid2D g{20, 1, 10.0, 10.0, 0.0, 0.0};
  CenterField<double> q(g);
  for (int i = 6; i < 10; ++i) q(i, 0) = 1.0;
  FaceField<double> vel(g);
  for (int i = 1; i < g.nx; ++i) vel.X(i, 0) = 5.0;
  const double dt = 1.0;  // c = 0.5
  std::vector<double> ref(q.v);
  auto cur = q;
  const double total = q.sum();
  for (int step = 0; step < 2; ++step) {
    cur = advect_vanleer(g, cur, vel, dt);
    ref = reference_1d(ref, 0.5);
  }
  for (int i = 0; i < g.nx; ++i) CHECK(cur(i, 0) == Approx(ref[static_cast<std::size_t>(i)]).margin(1e-15));
  CHECK(cur.min() >= 0.0);
  CHECK(cur.max() <= 1.0);
  CHECK(std::abs(cur.sum() - total) <= 8 * eps * total);
}

TEST_CASE("advection keeps random non-negative fields non-negative") {
  const Grid2D g{12, 9, 100.0, 100.0, 0.0, 0.0};
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    auto q = random_center(g, rng, 0.0, 1.0);
    for (auto& v : q.v)
      if (v < 0.4) v = 0;  // plenty of empty cells
    const auto vel = random_faces(g, rng, -10, 10);
    const double dt = 9.9;  // |c| < 1
    const auto out = advect_vanleer(g, q, vel, dt);
    CHECK(out.min() >= 0.0);
    CHECK(std::abs(out.sum() - q.sum()) <= 64 * eps * q.sum());
  }
}

TEST_CASE("Courant violations are reported") {
  const Grid2D g{4, 4, 10.0, 10.0, 0.0, 0.0};
  FaceField<double> vel(g);
  vel.X(2, 1) = 20.0;
  CHECK_THROWS_AS(advect_vanleer(g, CenterField<double>(g, 1.0), vel, 1.0), CourantError);
}

TEST_CASE("face transfers agree with the 0-D kernels on uniform states") {
  const auto g = small_grid();
  const PairState<double> s{{0.7, 1.9}, {300, 301}, {2.5, -4.0}};
  const TransferRates<double> r{0.3, 0.6, 1.5};
  for (int n = 1; n <= 6; ++n) {
    const auto cfg = named_scheme(n);
    const auto ref = apply_transfer(s, r, cfg);
    FaceField<double> w0(g, s.u[0]), w1(g, s.u[1]);
    if (cfg.method == Method::one) {
      const auto pick = [&](TimeLevel t, int i) { return t == TimeLevel::m ? s.eta[i] : ref.state.eta[i]; };
      CenterField<double> x01(g, r.dt * r.s01 * pick(cfg.q, 0)), x10(g, r.dt * r.s10 * pick(cfg.q, 1));
      CenterField<double> e0(g, pick(cfg.r, 0)), e1(g, pick(cfg.r, 1));
      const auto nu = face_nu_method1(g, x01, x10, e0, e1, cfg.alpha_a, Mode::strict);
      const auto out = face_transfer_method1(w0, w1, nu.nu01, nu.nu10);
      for (double v : out.f0.x) CHECK(v == ref.state.u[0]);
      for (double v : out.f1.z) CHECK(v == ref.state.u[1]);
    } else {
      const auto lc = face_lambda(FaceField<double>(g, r.s01), FaceField<double>(g, r.s10), r.dt, cfg.alpha_c);
      const auto la = face_lambda(FaceField<double>(g, r.s01), FaceField<double>(g, r.s10), r.dt, cfg.alpha_a);
      const auto out =
          face_transfer_method2(w0, w1, FaceField<double>(g, s.eta[0]), FaceField<double>(g, s.eta[1]), lc, la);
      for (double v : out.w.f0.x) CHECK(v == ref.state.u[0]);
      for (double v : out.w.f1.z) CHECK(v == ref.state.u[1]);
      for (double v : out.N.f1.x) CHECK(v == ref.state.eta[1]);
    }
  }
}

TEST_CASE("face transfer limits and per-face momentum") {
  const auto g = small_grid();
  std::mt19937_64 rng(23);
  const auto w0 = random_faces(g, rng, -3, 3), w1 = random_faces(g, rng, -3, 3);
  const FaceField<double> zero(g), one(g, 1.0);
  auto id = face_transfer_method1(w0, w1, zero, zero);
  CHECK(id.f0 == w0);
  CHECK(id.f1 == w1);
  auto take = face_transfer_method1(w0, w1, zero, one);
  CHECK(take.f0 == w1);
  CHECK(take.f1 == w1);

  FaceField<double> e0 = random_faces(g, rng, 0.1, 2), e1 = random_faces(g, rng, 0.1, 2);
  e0.transform([](double v) { return std::abs(v) + 0.1; });
  e1.transform([](double v) { return std::abs(v) + 0.1; });
  const auto none = face_lambda(zero, zero, 2.0, 1);
  const auto same = face_transfer_method2(w0, w1, e0, e1, none, none);
  CHECK(same.w.f0 == w0);
  CHECK(same.N.f0 == e0);

  const auto lam = face_lambda(random_faces(g, rng, 0, 1), random_faces(g, rng, 0, 1), 0.8, 1);
  const auto moved = face_transfer_method2(w0, w1, e0, e1, lam, lam);
  for (std::size_t n = 0; n < e0.x.size(); ++n) {
    const double before = e0.x[n] * w0.x[n] + e1.x[n] * w1.x[n];
    const double after = moved.N.f0.x[n] * moved.w.f0.x[n] + moved.N.f1.x[n] * moved.w.f1.x[n];
    const double scale = std::abs(e0.x[n] * w0.x[n]) + std::abs(e1.x[n] * w1.x[n]);
    CHECK(std::abs(after - before) <= 8 * eps * scale);
  }
}

TEST_CASE("face kinetic energy") {
  const auto g = small_grid();
  const std::vector<FaceField<double>> N{FaceField<double>(g, 1.0)};
  CHECK(kinetic_energy_cgrid<double>(g, N, {FaceField<double>(g)}).max() == 0.0);
  const auto ke = kinetic_energy_cgrid<double>(g, N, {FaceField<double>(g, 2.0)});
  for (double v : ke.v) CHECK(v == 4.0);  // 1/2 * 4 per component, two components

  std::mt19937_64 rng(29);
  const auto n0 = random_faces(g, rng, 0, 2), n1 = random_faces(g, rng, 0, 2);
  const auto u0 = random_faces(g, rng, -5, 5), u1 = random_faces(g, rng, -5, 5);
  FaceField<double> n0b = n0, n1b = n1;
  // Non-zero boundary values exercise the half weights.
  n0b.transform([](double v) { return std::abs(v) + 0.5; });
  n1b.transform([](double v) { return std::abs(v) + 0.5; });
  FaceField<double> v0(g, 1.5), v1 = u1;
  const auto total = kinetic_energy_cgrid<double>(g, {n0b, n1b}, {v0, v1}).sum();
  double face_sum = 0;
  auto add = [&](const FaceField<double>& n, const FaceField<double>& v) {
    for (int k = 0; k < g.nz; ++k)
      for (int i = 0; i <= g.nx; ++i)
        face_sum += (i == 0 || i == g.nx ? 0.5 : 1.0) * 0.5 * n.X(i, k) * v.X(i, k) * v.X(i, k);
    for (int k = 0; k <= g.nz; ++k)
      for (int i = 0; i < g.nx; ++i)
        face_sum += (k == 0 || k == g.nz ? 0.5 : 1.0) * 0.5 * n.Z(i, k) * v.Z(i, k) * v.Z(i, k);
  };
  add(n0b, v0);
  add(n1b, v1);
  CHECK(total == Approx(face_sum).epsilon(8 * eps));
}

TEST_CASE("field CSV dump") {
  const Grid2D g{2, 2, 1.0, 1.0, 0.0, 0.0};
  CenterField<double> c(g);
  c(1, 1) = 0.5;
  const auto path = std::filesystem::temp_directory_path() / "relabel_test_grid" / "theta.csv";
  write_field_csv(path, g, c, "theta", 12.0);
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  CHECK(text.starts_with("# quantity=theta time=12\ni,k,x,z,value\n"));
  CHECK(text.find("1,1,1.5,1.5,0.5\n") != std::string::npos);
}
