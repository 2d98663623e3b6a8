#include "doctest.h"

#include "rvm/binary_io.hpp"
#include "rvm/particles.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace rvm;

namespace {

ParticleEnsemble single(double L, const Vec3d& x, const Vec3d& v, double w = 1.0)
{
  ParticleEnsemble e;
  e.L = L;
  e.x = x;
  e.v = v;
  e.w = Eigen::VectorXd::Constant(1, w);
  return e;
}

Eigen::Matrix3Xd column(const Vec3d& a) { return a; }

std::string temp_path(const std::string& name)
{
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("sampling: weights, moments, determinism and sampled f values")
{
  GaussianData f0;
  f0.epsilon = 2e-3;
  f0.center = Vec3d(10, 11, 12);
  f0.sigma_x = 1.5;
  f0.sigma_v = 0.4;
  f0.drift = Vec3d(0.1, -0.2, 0.0);
  const auto e = sample_ensemble(f0, 20000, 24.0, 5);
  CHECK(e.size() == 20000);
  CHECK(e.total_charge() == doctest::Approx(f0.mass()).epsilon(1e-12));
  CHECK(f0.mass() == doctest::Approx(2e-3 * std::pow(kPi * 1.5 * 0.4, 3)));
  const Vec3d mx = e.x.rowwise().mean(), mv = e.v.rowwise().mean();
  CHECK((mx - f0.center).norm() < 1e-2);
  CHECK((mv - f0.drift).norm() < 1e-3);
  // Variance of exp(-|x|^2/s^2) per axis is s^2/2.
  const double var = (e.x.row(0).array() - mx(0)).square().mean();
  CHECK(var == doctest::Approx(1.5 * 1.5 / 2).epsilon(1e-2));
  for (Eigen::Index p = 0; p < 50; ++p)
    CHECK(e.f(p) == doctest::Approx(f0.value(e.x.col(p), e.v.col(p))).epsilon(1e-12));
  const auto again = sample_ensemble(f0, 20000, 24.0, 5);
  CHECK(again.x == e.x);
  CHECK(again.v == e.v);
  const auto other = sample_ensemble(f0, 20000, 24.0, 6);
  CHECK(other.x != e.x);
  CHECK(sample_ensemble(f0, 0, 24.0, 1).size() == 0);
  CHECK_THROWS_AS(sample_ensemble(f0, -1, 24.0, 1), std::invalid_argument);
}

TEST_CASE("Boris push: pure magnetic gyration is exact and keeps |v|")
{
  // B = e3, v = e1: gyration frequency 1/gamma, clockwise about B.
  auto e = single(10.0, Vec3d(1, 1, 1), Vec3d(1, 0, 0));
  const double gamma = std::sqrt(2.0), period = 2 * kPi * gamma;
  const int steps = 64;
  const Eigen::Matrix3Xd E = Eigen::Matrix3Xd::Zero(3, 1), B = column(Vec3d(0, 0, 1));
  push_momentum(e, E, B, period / 4);
  CHECK((e.v.col(0) - Vec3d(0, -1, 0)).norm() < 1e-14);
  e.v.col(0) = Vec3d(1, 0, 0);
  for (int i = 0; i < steps; ++i) push_momentum(e, E, B, period / steps);
  CHECK((e.v.col(0) - Vec3d(1, 0, 0)).norm() < 1e-12);

  std::mt19937_64 rng(12);
  std::normal_distribution<double> N;
  auto r = single(10.0, Vec3d::Zero(), Vec3d(N(rng), N(rng), N(rng)));
  const double g0 = std::sqrt(1.0 + r.v.squaredNorm());
  const Eigen::Matrix3Xd Br = column(Vec3d(N(rng), N(rng), N(rng)));
  for (int i = 0; i < 10000; ++i) push_momentum(r, E, Br, 0.1);
  CHECK(std::sqrt(1.0 + r.v.squaredNorm()) == doctest::Approx(g0).epsilon(1e-12));
}

TEST_CASE("Boris push: electric field alone is an exact impulse")
{
  auto e = single(10.0, Vec3d::Zero(), Vec3d(0.1, 0.2, 0.3));
  push_momentum(e, column(Vec3d(1, -2, 0.5)), Eigen::Matrix3Xd::Zero(3, 1), 0.25);
  CHECK((e.v.col(0) - Vec3d(0.35, -0.3, 0.425)).norm() < 1e-15);
  CHECK_THROWS_AS(push_momentum(e, Eigen::Matrix3Xd::Zero(3, 2), Eigen::Matrix3Xd::Zero(3, 1), 0.1),
                  std::invalid_argument);
}

TEST_CASE("push_position: moves at v^ and wraps")
{
  auto e = single(10.0, Vec3d(1, 2, 3), Vec3d(1, 0, 0));
  push_position(e, std::sqrt(2.0));
  CHECK((e.x.col(0) - Vec3d(2, 2, 3)).norm() < 1e-14);
  CHECK(e.time == doctest::Approx(std::sqrt(2.0)));
  auto w = single(10.0, Vec3d(9.5, 0.2, 3), Vec3d(0, -3, 0));
  push_position(w, 1.0);
  CHECK(w.x(0, 0) == doctest::Approx(9.5));
  CHECK(w.x(1, 0) == doctest::Approx(10.0 + 0.2 - 3.0 / std::sqrt(10.0)));
}

TEST_CASE("CIC deposit: node and cell-center particles, total charge")
{
  Grid3 g(8, 8.0);
  const double unit = 4 * kPi / std::pow(g.dx(), 3);
  auto node = deposit_charge(single(8.0, Vec3d(3, 4, 5), Vec3d::Zero(), 0.5), g);
  CHECK(node(g.index(3, 4, 5)) == doctest::Approx(0.5 * unit));
  CHECK(node.sum() == doctest::Approx(0.5 * unit));
  CHECK((node > 0.0).count() == 1);

  auto center = deposit_charge(single(8.0, Vec3d(7.5, 0.5, 0.5), Vec3d::Zero()), g);
  for (int c = 0; c < 8; ++c)
    CHECK(center(g.index(7 + (c & 1), c >> 1 & 1, c >> 2 & 1)) == doctest::Approx(unit / 8));
  CHECK(center.sum() == doctest::Approx(unit));

  GaussianData f0;
  f0.center = Vec3d(4, 4, 4);
  const auto e = sample_ensemble(f0, 5000, 8.0, 1);
  const auto rho = deposit_charge(e, g);
  CHECK(rho.sum() * std::pow(g.dx(), 3) == doctest::Approx(4 * kPi * e.total_charge()).epsilon(1e-13));
}

TEST_CASE("CIC deposit: uniform ensemble is flat within sampling noise")
{
  Grid3 g(8, 8.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0.0, 8.0);
  ParticleEnsemble e;
  e.L = 8.0;
  const int N = 200000;
  e.x.resize(3, N);
  e.v = Eigen::Matrix3Xd::Zero(3, N);
  e.w = Eigen::VectorXd::Constant(N, 1.0 / N);
  for (int p = 0; p < N; ++p) e.x.col(p) = Vec3d(U(rng), U(rng), U(rng));
  const auto rho = deposit_charge(e, g);
  const double mean = 4 * kPi / 512.0;
  // Per-node relative noise is at most 1/sqrt(particles per cell).
  const double sd = mean / std::sqrt(double(N) / g.size());
  CHECK(std::abs(rho.mean() - mean) < 1e-12);
  CHECK((rho - mean).abs().maxCoeff() < 5 * sd);
}

TEST_CASE("deposit: current carries v^, workers give identical grids")
{
  Grid3 g(8, 8.0);
  GaussianData f0;
  f0.center = Vec3d(4, 4, 4);
  f0.drift = Vec3d(0.5, 0, -0.2);
  const auto e = sample_ensemble(f0, 3001, 8.0, 9);
  DepositionScheme scheme;
  const auto s1 = deposit(e, scheme, g, 1);
  const auto s3 = deposit(e, scheme, g, 3);
  const auto s3b = deposit(e, scheme, g, 3);
  CHECK((s1.rho - s3.rho).abs().maxCoeff() < 1e-14 * s1.rho.abs().maxCoeff());
  CHECK((s3.rho == s3b.rho).all());
  for (int c = 0; c < 3; ++c) CHECK((s3.j[c] == s3b.j[c]).all());

  double jx = 0.0;
  for (Eigen::Index p = 0; p < e.size(); ++p) jx += e.w(p) * hat_v<double>(e.v.col(p))(0);
  CHECK(s1.j[0].sum() * std::pow(g.dx(), 3) == doctest::Approx(4 * kPi * jx).epsilon(1e-12));

  DepositionScheme quadratic;
  quadratic.shape_order = 2;
  CHECK_THROWS_AS(deposit(e, quadratic, g), std::invalid_argument);
  CHECK_THROWS_AS(deposit_charge(e, g, 0), std::invalid_argument);
}

TEST_CASE("interpolate_fields: uniform and affine fields gather exactly")
{
  Grid3 g(8, 8.0);
  FieldState s(g);
  VectorGrid E, B;
  for (int c = 0; c < 3; ++c) {
    E[c] = ScalarGrid::Constant(g.size(), 0.1 * (c + 1));
    B[c] = ScalarGrid::Zero(g.size());
  }
  // Affine B1 = 2 + 0.3 x1 - 0.1 x2 on nodes away from the periodic seam.
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const Vec3d x = g.node(idx);
    B[0](idx) = 2 + 0.3 * x(0) - 0.1 * x(1);
  }
  s.set_real(E, B);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(0.5, 6.5);
  ParticleEnsemble e;
  e.L = 8.0;
  e.x.resize(3, 100);
  e.v = Eigen::Matrix3Xd::Zero(3, 100);
  e.w = Eigen::VectorXd::Ones(100);
  for (int p = 0; p < 100; ++p) e.x.col(p) = Vec3d(U(rng), U(rng), U(rng));
  const auto [Ep, Bp] = interpolate_fields(s, e);
  for (int p = 0; p < 100; ++p) {
    CHECK((Ep.col(p) - Vec3d(0.1, 0.2, 0.3)).norm() < 1e-14);
    CHECK(Bp(0, p) == doctest::Approx(2 + 0.3 * e.x(0, p) - 0.1 * e.x(1, p)).epsilon(1e-13));
  }
}

TEST_CASE("interpolate_fields: second order on a plane wave")
{
  auto gather_error = [](int n) {
    Grid3 g(n, 16.0);
    const double k0 = 2 * 2 * kPi / 16.0;
    VectorGrid E, B;
    for (int c = 0; c < 3; ++c) {
      E[c] = ScalarGrid::Zero(g.size());
      B[c] = ScalarGrid::Zero(g.size());
    }
    for (std::size_t idx = 0; idx < g.size(); ++idx) E[1](idx) = std::sin(k0 * g.node(idx)(0));
    FieldState s(g);
    s.set_real(E, B);
    ParticleEnsemble e;
    e.L = 16.0;
    e.x.resize(3, 200);
    e.v = Eigen::Matrix3Xd::Zero(3, 200);
    e.w = Eigen::VectorXd::Ones(200);
    for (int p = 0; p < 200; ++p) e.x.col(p) = Vec3d(16.0 * (p + 0.37) / 200, 1.1, 2.3);
    const auto [Ep, Bp] = interpolate_fields(s, e);
    double err = 0.0;
    for (int p = 0; p < 200; ++p) err = std::max(err, std::abs(Ep(1, p) - std::sin(k0 * e.x(0, p))));
    return err;
  };
  const double ratio = gather_error(16) / gather_error(32);
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("free-transport oracle: t = 0, t^-3 tail, gradient, CIC smoothing")
{
  GaussianData f0;
  f0.epsilon = 1.0;
  f0.center = Vec3d(64, 64, 64);
  f0.sigma_x = 2.0;
  f0.sigma_v = 1.0;
  f0.drift = Vec3d(0.5, 0, 0);
  const Vec3d x = f0.center + Vec3d(1.0, -0.5, 0.3);
  const auto m0 = free_transport_moment(f0, 0.0, x);
  const double s = std::exp(-(x - f0.center).squaredNorm() / 4.0);
  CHECK(m0.density == doctest::Approx(std::pow(kPi, 1.5) * s).epsilon(1e-7));
  CHECK(m0.gradient(0) == doctest::Approx(-2 * 1.0 / 4.0 * std::pow(kPi, 1.5) * s).epsilon(1e-7));
  CHECK(free_transport_density(f0, 0.0, x) == doctest::Approx(m0.density));

  // Values cross-checked against direct quadrature in momentum variables.
  CHECK(free_transport_density(f0, 0.5, f0.center) == doctest::Approx(5.380891702865).epsilon(1e-9));
  CHECK(free_transport_density(f0, 5.0, f0.center) == doctest::Approx(0.4220240360014).epsilon(1e-9));
  const auto late = free_transport_moment(f0, 40.0, f0.center);
  CHECK(late.density == doctest::Approx(5.454882890672e-4).epsilon(1e-9));
  // Symmetry about the drift axis.
  CHECK(std::abs(late.gradient(1)) < 1e-12 * late.density);
  CHECK(std::abs(late.gradient(2)) < 1e-12 * late.density);

  // t^3 rho(t, x_c) -> int f0(y, 0) dy = eps (pi sx^2)^{3/2} exp(-|u|^2/sv^2).
  const double limit = std::pow(kPi, 1.5) * 8.0 * std::exp(-0.25);
  const double r80 = std::pow(80.0, 3) * free_transport_density(f0, 80.0, f0.center);
  const double r160 = std::pow(160.0, 3) * free_transport_density(f0, 160.0, f0.center);
  CHECK(std::abs(r160 / limit - 1) < std::abs(r80 / limit - 1));
  CHECK(std::abs(r160 / limit - 1) < 1e-2);

  // Gradient by centered differences of the oracle itself.
  const double h = 1e-3;
  const auto c = free_transport_moment(f0, 3.0, x);
  const double fd = (free_transport_density(f0, 3.0, x + Vec3d(0, h, 0)) -
                     free_transport_density(f0, 3.0, x - Vec3d(0, h, 0))) / (2 * h);
  CHECK(c.gradient(1) == doctest::Approx(fd).epsilon(1e-6));

  // The tent average of a node value: h -> 0 recovers the point value; known value at h = 2.
  CHECK(free_transport_moment(f0, 40.0, f0.center, 1e-3).density ==
        doctest::Approx(late.density).epsilon(1e-6));
  CHECK(free_transport_moment(f0, 40.0, f0.center, 2.0).density ==
        doctest::Approx(5.466353115788e-4).epsilon(1e-9));
  CHECK(free_transport_moment(f0, 0.5, f0.center, 2.0).density ==
        doctest::Approx(3.472271106698).epsilon(1e-9));
}

TEST_CASE("free-transport oracle agrees with a deposited Sobol ensemble")
{
  GaussianData f0;
  f0.epsilon = 1.0;
  f0.center = Vec3d(32, 32, 32);
  f0.sigma_x = 1.0;
  f0.sigma_v = 0.5;
  f0.drift = Vec3d(0.25, 0, 0);
  Grid3 g(32, 64.0);
  auto e = sample_ensemble(f0, 200000, g.L, 3);
  push_position(e, 12.0);
  const ScalarGrid rho = deposit_charge(e, g);
  const double node = rho(g.index(16, 16, 16)) / (4 * kPi);
  const double exact = free_transport_moment(f0, 12.0, f0.center, g.dx()).density;
  CHECK(std::abs(node / exact - 1) < 0.03);
}

TEST_CASE("binary dumps: field and ensemble round trips, bad magic")
{
  Grid3 g(4, 3.0);
  VectorGrid E, B;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> N;
  for (int c = 0; c < 3; ++c) {
    E[c] = ScalarGrid(g.size());
    B[c] = ScalarGrid(g.size());
    for (auto& v : E[c]) v = N(rng);
    for (auto& v : B[c]) v = N(rng);
  }
  FieldState s(g, 1.25);
  s.set_real(E, B);
  const std::string fp = temp_path("rvm_test_field.bin");
  write_field_dump(fp, s);
  CHECK(std::filesystem::file_size(fp) == 4 + 4 + 12 + 8 + 8 + 6 * 64 * 8);
  const FieldState r = read_field_dump(fp);
  CHECK(r.grid() == g);
  CHECK(r.time == 1.25);
  for (int c = 0; c < 3; ++c) {
    CHECK((r.E()[c] == E[c]).all());
    CHECK((r.B()[c] == B[c]).all());
  }

  GaussianData f0;
  f0.center = Vec3d(1.5, 1.5, 1.5);
  auto e = sample_ensemble(f0, 17, 3.0, 2);
  e.time = 0.75;
  const std::string ep = temp_path("rvm_test_ensemble.bin");
  write_ensemble_dump(ep, e);
  CHECK(std::filesystem::file_size(ep) == 4 + 4 + 8 + 8 + 7 * 17 * 8);
  const auto back = read_ensemble_dump(ep, 3.0);
  CHECK(back.time == 0.75);
  CHECK(back.x == e.x);
  CHECK(back.v == e.v);
  CHECK(back.w == e.w);

  {
    std::ofstream bad(fp, std::ios::binary | std::ios::trunc);
    bad << "NOPE and some bytes";
  }
  CHECK_THROWS_AS(read_field_dump(fp), FormatError);
  CHECK_THROWS_AS(read_ensemble_dump(ep + ".missing", 3.0), std::runtime_error);
  std::filesystem::remove(fp);
  std::filesystem::remove(ep);
}
