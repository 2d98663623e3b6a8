#include "doctest.h"

#include "rvm/particles.hpp"
#include "rvm/spectral.hpp"

#include <cmath>
#include <random>

using namespace rvm;

namespace {

VectorGrid zero_vector(const Grid3& g)
{
  return {ScalarGrid::Zero(g.size()), ScalarGrid::Zero(g.size()), ScalarGrid::Zero(g.size())};
}

double max_abs(const VectorGrid& a, const VectorGrid& b)
{
  double m = 0.0;
  for (int c = 0; c < 3; ++c) m = std::max(m, (a[c] - b[c]).abs().maxCoeff());
  return m;
}

double max_abs(const SpectralVector& a, const SpectralVector& b)
{
  double m = 0.0;
  for (int c = 0; c < 3; ++c) m = std::max(m, (a[c] - b[c]).abs().maxCoeff());
  return m;
}

// Plane wave moving along +x3: E = A cos(k(x3 - t)) e1, B = A cos(k(x3 - t)) e2.
FieldState plane_wave(const Grid3& g, int mode, double t)
{
  const double k = mode * g.dxi();
  VectorGrid E = zero_vector(g), B = zero_vector(g);
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const double c = 0.7 * std::cos(k * (g.node(idx)(2) - t));
    E[0](idx) = c;
    B[1](idx) = c;
  }
  FieldState s(g, t);
  s.set_real(E, B);
  return s;
}

// Divergence-free fields built as curls of smooth random low-mode potentials.
FieldState random_solenoidal(const Grid3& g, std::uint64_t seed, int max_mode = 4)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N;
  auto lat = spectral_lattice(g);
  SpectralVector A, C;
  for (int c = 0; c < 3; ++c) {
    A[c] = SpectralGrid::Zero(g.size());
    C[c] = SpectralGrid::Zero(g.size());
  }
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const Vec3i m = g.modes(idx);
    if (m.isZero() || m.cwiseAbs().maxCoeff() > max_mode) continue;
    for (int c = 0; c < 3; ++c) {
      A[c](idx) = cd(N(rng), N(rng));
      C[c](idx) = cd(N(rng), N(rng));
    }
  }
  SpectralVector E, B;
  for (int c = 0; c < 3; ++c) {
    E[c] = SpectralGrid::Zero(g.size());
    B[c] = SpectralGrid::Zero(g.size());
  }
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const Vec3cd xi = g.wavevector(idx).cast<cd>();
    Vec3cd a(A[0](idx), A[1](idx), A[2](idx)), b(C[0](idx), C[1](idx), C[2](idx));
    const Vec3cd e = cd(0, 1) * cross(xi, a), f = cd(0, 1) * cross(xi, b);
    for (int c = 0; c < 3; ++c) {
      E[c](idx) = e(c);
      B[c](idx) = f(c);
    }
  }
  // Real parts of the synthesized fields keep them real and solenoidal.
  VectorGrid Er = fft_inverse_real(g, E), Br = fft_inverse_real(g, B);
  FieldState s(g);
  s.set_real(Er, Br);
  return s;
}

ScalarGrid gaussian_density(const Grid3& g, const Vec3d& c, double s)
{
  ScalarGrid rho(g.size());
  for (std::size_t idx = 0; idx < g.size(); ++idx)
    rho(idx) = std::exp(-(g.node(idx) - c).squaredNorm() / (s * s));
  return rho;
}

}  // namespace

TEST_CASE("transforms: forward then inverse is the identity, derivative of a sine")
{
  Grid3 g(16, 10.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1, 1);
  ScalarGrid f(g.size());
  for (auto& v : f) v = U(rng);
  CHECK((fft_inverse_real(g, fft_forward(g, f)) - f).abs().maxCoeff() < 1e-13);

  ScalarGrid s(g.size()), ds(g.size());
  const double k = 3 * g.dxi();
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    s(idx) = std::sin(k * g.node(idx)(1));
    ds(idx) = k * std::cos(k * g.node(idx)(1));
  }
  CHECK((spectral_derivative(g, s, 1) - ds).abs().maxCoeff() < 1e-12);
  // A constant integrates to L^3 in the zero mode.
  ScalarGrid one = ScalarGrid::Ones(g.size());
  CHECK(std::abs(fft_forward(g, one)(0) - cd(1000.0, 0)) < 1e-9);
}

TEST_CASE("grid: index wrapping, negation and Nyquist flags")
{
  Grid3 g(8, 4.0);
  CHECK(g.index(-1, 0, 0) == g.index(7, 0, 0));
  CHECK(g.index(0, 9, 0) == g.index(0, 1, 0));
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const Vec3i m = g.modes(idx);
    if (g.nyquist(idx)) continue;
    CHECK(g.modes(g.negated(idx)) == Vec3i(-m));
  }
  CHECK(g.nyquist(g.index(4, 0, 0)));
  CHECK_FALSE(g.nyquist(g.index(3, 5, 1)));
}

TEST_CASE("propagate_free: plane wave translates rigidly over 100 steps")
{
  Grid3 g(16, 32.0);
  FieldState s = plane_wave(g, 2, 0.0);
  const double dt = 0.5 * g.dx();
  for (int i = 0; i < 100; ++i) propagate_free(s, dt);
  CHECK(s.time == doctest::Approx(100 * dt));
  FieldState exact = plane_wave(g, 2, s.time);
  CHECK(max_abs(s.E(), exact.E()) < 1e-10);
  CHECK(max_abs(s.B(), exact.B()) < 1e-10);
}

TEST_CASE("propagate_free: vacuum stays vacuum, forward-backward is the identity")
{
  Grid3 g(16, 20.0);
  FieldState z(g);
  propagate_free(z, 0.7);
  CHECK(max_abs(z.E(), zero_vector(g)) == 0.0);

  // Arbitrary fields, including a longitudinal E part.
  std::mt19937_64 rng(11);
  std::normal_distribution<double> N;
  VectorGrid E = zero_vector(g), B = random_solenoidal(g, 5).B();
  for (int c = 0; c < 3; ++c)
    for (auto& v : E[c]) v = N(rng);
  FieldState s(g);
  s.set_real(E, B);
  SpectralVector E0 = s.E_hat(), B0 = s.B_hat();
  zero_nyquist(g, E0);
  propagate_free(s, 0.83);
  propagate_free(s, -0.83);
  CHECK(max_abs(s.E_hat(), E0) < 1e-10 * E0[0].abs().maxCoeff());
  CHECK(max_abs(s.B_hat(), B0) < 1e-10 * B0[0].abs().maxCoeff());
}

TEST_CASE("propagate_free: unitary on profiles, keeps div B zero, conserves energy")
{
  Grid3 g(16, 20.0);
  FieldState s = random_solenoidal(g, 21);
  const double W0 = field_energy(s);
  auto h0 = extract_profiles(s);
  double n0 = 0.0;
  for (int c = 0; c < 3; ++c) n0 += h0.h1[c].abs2().sum() + h0.h2[c].abs2().sum();
  for (int i = 0; i < 25; ++i) propagate_free(s, 0.4 * g.dx());
  auto h1 = extract_profiles(s);
  double n1 = 0.0;
  for (int c = 0; c < 3; ++c) n1 += h1.h1[c].abs2().sum() + h1.h2[c].abs2().sum();
  CHECK(std::abs(n1 / n0 - 1.0) < 1e-12);
  CHECK(std::abs(field_energy(s) / W0 - 1.0) < 1e-12);
  CHECK(divergence_B_residual(s) < 1e-13);
}

TEST_CASE("apply_sources: j = 0 is the identity, uniform j gives E = -j dt, CFL")
{
  Grid3 g(8, 8.0);
  FieldState s(g);
  SourceDensity src = SourceDensity::zero(g);
  apply_sources(s, src, 0.5);
  CHECK(max_abs(s.E(), zero_vector(g)) == 0.0);

  src.j[0].setConstant(0.3);
  apply_sources(s, src, 0.5);
  CHECK((s.E()[0] + 0.15).abs().maxCoeff() < 1e-14);
  CHECK(s.E()[1].abs().maxCoeff() < 1e-14);
  CHECK(max_abs(s.B(), zero_vector(g)) < 1e-14);

  CHECK_THROWS_AS(apply_sources(s, src, 1.5), std::invalid_argument);
}

TEST_CASE("Gauss law: vacuum and Coulomb initialization have zero residual")
{
  Grid3 g(32, 40.0);
  FieldState vac(g);
  CHECK(gauss_residual(vac, ScalarGrid::Zero(g.size())) == 0.0);

  FieldState s(g);
  const ScalarGrid rho = gaussian_density(g, Vec3d(20, 20, 20), 3.0);
  add_coulomb_field(s, rho);
  CHECK(gauss_residual(s, rho) < 1e-13);
  // The Coulomb field is curl-free, so free flow leaves it alone.
  const VectorGrid E0 = s.E();
  propagate_free(s, 3.0);
  CHECK(max_abs(s.E(), E0) < 1e-12);
  CHECK(gauss_residual(s, rho) < 1e-13);
}

TEST_CASE("enforce_continuity: Gauss law survives a moving Gaussian current pulse")
{
  Grid3 g(32, 40.0);
  const double dt = 0.5 * g.dx();
  const Vec3d c0(18, 20, 20), u(0.4, 0.1, 0.0);
  FieldState s(g);
  ScalarGrid rho = gaussian_density(g, c0, 3.0);
  add_coulomb_field(s, rho);
  double worst = 0.0;
  for (int step = 0; step < 20; ++step) {
    const double t0 = step * dt;
    const ScalarGrid rho_new = gaussian_density(g, c0 + u * (t0 + dt), 3.0);
    SourceDensity mid = SourceDensity::zero(g);
    const ScalarGrid rho_mid = gaussian_density(g, c0 + u * (t0 + 0.5 * dt), 3.0);
    for (int c = 0; c < 3; ++c) mid.j[c] = u(c) * rho_mid;
    mid.rho = rho_mid;
    enforce_continuity(mid, rho, rho_new, dt);
    strang_step(s, mid, dt);
    rho = rho_new;
    worst = std::max(worst, gauss_residual(s, rho));
  }
  CHECK(worst < 1e-10);
  CHECK(divergence_B_residual(s) < 1e-12);
}

TEST_CASE("profiles: vacuum gives zero, reconstruction inverts extraction")
{
  Grid3 g(16, 20.0);
  auto hz = extract_profiles(FieldState(g));
  CHECK(hz.h1[0].abs().maxCoeff() == 0.0);

  // Mean-free fields with a longitudinal E part; the profile map is invertible there.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> N;
  FieldState sol = random_solenoidal(g, 9);
  VectorGrid E = sol.E();
  ScalarGrid phi(g.size());
  for (auto& v : phi) v = N(rng);
  SpectralGrid Phi = fft_forward(g, phi);
  for (std::size_t idx = 0; idx < g.size(); ++idx)
    if (g.modes(idx).cwiseAbs().maxCoeff() > 5) Phi(idx) = 0.0;
  for (int c = 0; c < 3; ++c) E[c] += spectral_derivative(g, fft_inverse_real(g, Phi), c);
  FieldState s(g, 2.5);
  s.set_real(E, sol.B());
  auto h = extract_profiles(s);
  CHECK(h.t == 2.5);
  FieldState back = reconstruct(h);
  CHECK(back.time == 2.5);
  CHECK(max_abs(back.E(), s.E()) < 1e-10);
  CHECK(max_abs(back.B(), s.B()) < 1e-10);
}

TEST_CASE("profiles: constant under free flow, X_n norms frozen")
{
  Grid3 g(16, 32.0);
  FieldState s = random_solenoidal(g, 17);
  auto h0 = extract_profiles(s);
  const double x0 = xn_norm(g, h0.h1, 0), x1 = xn_norm(g, h0.h1, 1);
  for (int i = 0; i < 40; ++i) propagate_free(s, 0.5 * g.dx());
  auto h1 = extract_profiles(s);
  const double scale = h0.h1[0].abs().maxCoeff();
  CHECK(max_abs(h1.h1, h0.h1) < 1e-10 * scale);
  CHECK(max_abs(h1.h2, h0.h2) < 1e-10 * scale);
  CHECK(std::abs(xn_norm(g, h1.h1, 0) / x0 - 1.0) < 1e-8);
  CHECK(std::abs(xn_norm(g, h1.h1, 1) / x1 - 1.0) < 1e-8);

  FieldState pw = plane_wave(g, 3, 0.0);
  auto p0 = extract_profiles(pw);
  propagate_free(pw, 7.3);
  auto p1 = extract_profiles(pw);
  CHECK(max_abs(p1.h1, p0.h1) < 1e-10 * p0.h1[0].abs().maxCoeff());
}

TEST_CASE("profiles: one Strang step changes the vacuum profile by the Duhamel integral")
{
  // Constant transverse current on one low mode: h1 gains i int e^{is|xi|} j^ ds and h2 gains
  // i int e^{is|xi|} xi x j^ / |xi| ds.
  Grid3 g(16, 128.0);
  const double dt = 0.02, t0 = 1.3;
  SourceDensity src = SourceDensity::zero(g);
  const double k = g.dxi();
  for (std::size_t idx = 0; idx < g.size(); ++idx) src.j[1](idx) = std::cos(k * g.node(idx)(0));
  FieldState s = random_solenoidal(g, 2, 2);
  s.time = t0;
  auto h0 = extract_profiles(s);
  strang_step(s, src, dt);
  auto h1 = extract_profiles(s);
  SpectralVector J = fft_forward(g, src.j);
  double err = 0.0, size = 0.0;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const Vec3d xi = g.wavevector(idx);
    const double a = xi.norm();
    if (a == 0.0) continue;
    const cd w = (std::exp(cd(0, a * (t0 + dt))) - std::exp(cd(0, a * t0))) / a;
    const Vec3cd j(J[0](idx), J[1](idx), J[2](idx));
    const Vec3cd d1 = w * j, d2 = w * cross(xi.cast<cd>(), j) / a;
    for (int c = 0; c < 3; ++c) {
      err = std::max({err, std::abs(h1.h1[c](idx) - h0.h1[c](idx) - d1(c)),
                      std::abs(h1.h2[c](idx) - h0.h2[c](idx) - d2(c))});
      size = std::max(size, std::abs(d1(c)));
    }
  }
  REQUIRE(size > 0.0);
  CHECK(err / size < 1e-6);
}

TEST_CASE("xn_norm: shell bump, homogeneity, bad order")
{
  Grid3 g(32, 128.0);
  SpectralVector h;
  for (int c = 0; c < 3; ++c) h[c] = SpectralGrid::Zero(g.size());
  int hits = 0;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const double k = g.wavevector(idx).norm();
    if (k >= std::pow(2.0, -0.5) && k < std::pow(2.0, 0.5) &&
        g.modes(idx).cwiseAbs().maxCoeff() < g.n / 2 - 1) {
      h[0](idx) = 1.0;
      ++hits;
    }
  }
  REQUIRE(hits >= 8);
  CHECK(xn_norm(g, h, 0) == doctest::Approx(1.0).epsilon(1e-14));

  FieldState s = random_solenoidal(g, 8, 6);
  auto p = extract_profiles(s);
  for (int n = 0; n <= 3; ++n) {
    const double base = xn_norm(g, p.h1, n);
    SpectralVector scaled = p.h1;
    for (auto& c : scaled) c *= cd(-2.0, 1.5);
    CHECK(xn_norm(g, scaled, n) == doctest::Approx(2.5 * base).epsilon(1e-12));
  }
  CHECK_THROWS_AS(xn_norm(g, h, 4), std::invalid_argument);
  CHECK_THROWS_AS(xn_norm(g, h, -1), std::invalid_argument);
}

TEST_CASE("thin_profile: keeps the cube of low modes")
{
  Grid3 g(16, 20.0);
  auto p = extract_profiles(random_solenoidal(g, 1));
  auto th = thin_profile(p, 2);
  CHECK(th.modes.size() == 5 * 5 * 5 - 1);
  for (std::size_t m = 0; m < th.modes.size(); ++m) {
    CHECK(th.modes[m].cwiseAbs().maxCoeff() <= 2);
    const std::size_t idx = g.index(th.modes[m](0), th.modes[m](1), th.modes[m](2));
    CHECK(std::abs(th.h1[m](0) - p.h1[0](idx)) == 0.0);
  }
  CHECK_THROWS_AS(thin_profile(p, 8), std::invalid_argument);
  CHECK_THROWS_AS(thin_profile(p, 0), std::invalid_argument);
}

TEST_CASE("modified profile correction: empty ensemble and a rest particle")
{
  Grid3 g(16, 32.0);
  auto p = thin_profile(extract_profiles(random_solenoidal(g, 3)), 3);
  p.t = 4.0;
  ParticleEnsemble empty;
  empty.L = g.L;
  auto same = modified_profile_correction_zero_order(p, empty);
  for (std::size_t m = 0; m < p.xi.size(); ++m) CHECK((same.h1[m] - p.h1[m]).norm() == 0.0);

  ParticleEnsemble one;
  one.L = g.L;
  one.x = Eigen::Matrix3Xd::Constant(3, 1, 5.0);
  one.v = Eigen::Matrix3Xd::Zero(3, 1);
  one.w = Eigen::VectorXd::Constant(1, 0.25);
  auto corr = modified_profile_correction_zero_order(p, one);
  for (std::size_t m = 0; m < p.xi.size(); ++m) {
    const Vec3d xi = p.xi[m];
    const double k2 = xi.squaredNorm();
    const cd e = std::exp(cd(0, p.t * std::sqrt(k2) - xi.dot(Vec3d::Constant(5.0))));
    const Vec3cd expected = 0.25 * e * (-4.0 * kPi * xi / k2).cast<cd>();
    CHECK((p.h1[m] - corr.h1[m] - expected).norm() < 1e-12 * expected.norm());
    CHECK((p.h2[m] - corr.h2[m]).norm() == 0.0);
  }
}
