#include "rvm/particles.hpp"

#include <Eigen/Geometry>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/random/sobol.hpp>

#include <cmath>
#include <random>
#include <thread>
#include <vector>

namespace rvm {

namespace {

// Splits [0, count) into `workers` contiguous ranges and runs body(begin, end, worker).
template <typename Body>
void for_each_range(Eigen::Index count, int workers, Body&& body)
{
  if (workers < 1) throw std::invalid_argument("worker count must be positive");
  if (workers == 1) {
    body(Eigen::Index(0), count, 0);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    const Eigen::Index b = count * w / workers, e = count * (w + 1) / workers;
    pool.emplace_back([&body, b, e, w] { body(b, e, w); });
  }
  for (auto& t : pool) t.join();
}

struct CicStencil {
  std::array<int, 3> base;
  std::array<double, 3> frac;
};

CicStencil cic_stencil(const Grid3& g, const Vec3d& x)
{
  CicStencil s;
  for (int a = 0; a < 3; ++a) {
    const double u = x(a) / g.dx();
    const double f = std::floor(u);
    s.base[a] = int(f);
    s.frac[a] = u - f;
  }
  return s;
}

template <typename Visit>
void visit_corners(const Grid3& g, const CicStencil& s, Visit&& visit)
{
  for (int c = 0; c < 8; ++c) {
    double weight = 1.0;
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      const int up = (c >> a) & 1;
      weight *= up ? s.frac[a] : 1.0 - s.frac[a];
      idx[a] = s.base[a] + up;
    }
    visit(g.index(idx[0], idx[1], idx[2]), weight);
  }
}

double normal_quantile(double u)
{
  return std::sqrt(2.0) * boost::math::erf_inv(2.0 * u - 1.0);
}

// Gaussian exp(-(y-c)^2/s^2) along one axis, optionally averaged against the unit-mass tent of
// half-width h; value and derivative in z.
struct AxisFactor {
  double c = 0.0, s = 1.0, h = 0.0;

  // Second antiderivative of the Gaussian; `linear` keeps the ramp term, which has zero second
  // difference away from the origin.
  double ramp2(double u, bool linear) const
  {
    const double a = std::abs(u);
    const double even = 0.5 * s * std::sqrt(kPi) *
                        (-a * std::erfc(a / s) + s / std::sqrt(kPi) * std::exp(-u * u / (s * s)));
    return (linear && u > 0.0 ? s * std::sqrt(kPi) * u : 0.0) + even;
  }
  // First antiderivative, shifted by a constant on the far side so the tails do not cancel.
  double ramp1(double u, double side) const
  {
    const double k = 0.5 * s * std::sqrt(kPi);
    if (side > 0.0) return -k * std::erfc(u / s);
    if (side < 0.0) return k * std::erfc(-u / s);
    return k * (1.0 + std::erf(u / s));
  }

  // Tent average int_0^1 (g(u - h y) + g(u + h y)) (1 - y) dy by Gauss-Legendre; the closed
  // form cancels catastrophically when h << s.
  template <typename G>
  double narrow(G&& g, double u) const
  {
    using Rule = boost::math::quadrature::gauss<double, 10>;
    return Rule::integrate([&](double y) { return (g(u - h * y) + g(u + h * y)) * (1.0 - y); },
                           0.0, 1.0);
  }

  double value(double z) const
  {
    const double u = z - c;
    if (h == 0.0) return std::exp(-u * u / (s * s));
    if (h < 0.25 * s) return narrow([&](double y) { return std::exp(-y * y / (s * s)); }, u);
    const bool near = std::abs(u) < h;
    return (ramp2(u + h, near) - 2.0 * ramp2(u, near) + ramp2(u - h, near)) / (h * h);
  }
  double derivative(double z) const
  {
    const double u = z - c;
    auto slope = [&](double y) { return -2.0 * y / (s * s) * std::exp(-y * y / (s * s)); };
    if (h == 0.0) return slope(u);
    if (h < 0.25 * s) return narrow(slope, u);
    const double side = u > h ? 1.0 : (u < -h ? -1.0 : 0.0);
    return (ramp1(u + h, side) - 2.0 * ramp1(u, side) + ramp1(u - h, side)) / (h * h);
  }
};

using Moments = Eigen::Vector4d;

// Adaptive G7-K15 for a vector-valued integrand with an absolute tolerance on the max norm.
template <typename F>
Moments kronrod(F&& f, double a, double b, double tol, int depth, double& error)
{
  using Rule = boost::math::quadrature::gauss_kronrod<double, 15>;
  using Gauss = boost::math::quadrature::gauss<double, 7>;
  static const auto& nodes = Rule::abscissa();
  static const auto& wk = Rule::weights();
  static const auto& wg = Gauss::weights();
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  Moments k = wk[0] * f(mid);
  Moments g = wg[0] * k / wk[0];
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    const Moments sum = f(mid - half * nodes[i]) + f(mid + half * nodes[i]);
    k += wk[i] * sum;
    if (i % 2 == 0) g += wg[i / 2] * sum;
  }
  k *= half;
  g *= half;
  const double e = (k - g).cwiseAbs().maxCoeff();
  if (e <= tol || depth == 0) {
    error += e;
    return k;
  }
  return kronrod(f, a, mid, 0.5 * tol, depth - 1, error) +
         kronrod(f, mid, b, 0.5 * tol, depth - 1, error);
}

// Integral over the unit ball of f(w) in spherical coordinates about `pole`: adaptive
// Gauss-Kronrod in radius and polar angle, doubling trapezoid in azimuth.
template <typename F>
Moments integrate_ball(F&& f, const Vec3d& pole, double tol, double& error)
{
  const Vec3d e1 = pole.unitOrthogonal();
  const Vec3d e2 = pole.cross(e1);
  double inner = 0.0;
  auto shell = [&](double r) -> Moments {
    if (r == 0.0) return Moments::Zero();
    auto ring = [&](double theta) -> Moments {
      const double st = std::sin(theta), ct = std::cos(theta);
      auto at = [&](double phi) {
        return f(r * (ct * pole + st * (std::cos(phi) * e1 + std::sin(phi) * e2)));
      };
      int count = 8;
      Moments sum = Moments::Zero();
      for (int i = 0; i < count; ++i) sum += at(2.0 * kPi * i / count);
      Moments value = sum * (2.0 * kPi / count);
      for (int level = 0; level < 10; ++level) {
        for (int i = 0; i < count; ++i) sum += at(2.0 * kPi * (i + 0.5) / count);
        count *= 2;
        const Moments next = sum * (2.0 * kPi / count);
        const double e = (next - value).cwiseAbs().maxCoeff();
        value = next;
        if (e <= 0.1 * tol) break;
        if (level == 9) inner = std::max(inner, e);
      }
      return value * st;
    };
    double e = 0.0;
    const Moments v = kronrod(ring, 0.0, kPi, tol, 12, e);
    inner = std::max(inner, e);
    return v * r * r;
  };
  double e = 0.0;
  const Moments v = kronrod(shell, 0.0, 1.0, tol, 14, e);
  error = e + 4.0 * kPi * inner;
  return v;
}

}  // namespace

double ParticleEnsemble::kinetic_energy() const
{
  double sum = 0.0;
  for (Eigen::Index p = 0; p < size(); ++p) sum += w(p) * std::sqrt(1.0 + v.col(p).squaredNorm());
  return sum;
}

void ParticleEnsemble::wrap()
{
  for (Eigen::Index p = 0; p < x.cols(); ++p)
    for (int a = 0; a < 3; ++a) {
      double& c = x(a, p);
      c -= L * std::floor(c / L);
      if (c >= L) c = 0.0;
    }
}

double GaussianData::value(const Vec3d& x, const Vec3d& v) const
{
  return epsilon * std::exp(-(x - center).squaredNorm() / (sigma_x * sigma_x) -
                            (v - drift).squaredNorm() / (sigma_v * sigma_v));
}

double GaussianData::mass() const
{
  return epsilon * std::pow(kPi, 3) * std::pow(sigma_x * sigma_v, 3);
}

ParticleEnsemble sample_ensemble(const GaussianData& f0, std::int64_t count, double L,
                                 std::uint64_t seed)
{
  if (count < 0) throw std::invalid_argument("particle count must be non-negative");
  if (!(L > 0.0)) throw std::invalid_argument("box length must be positive");
  ParticleEnsemble ens;
  ens.L = L;
  ens.x.resize(3, count);
  ens.v.resize(3, count);
  ens.w = Eigen::VectorXd::Constant(count, count > 0 ? f0.mass() / double(count) : 0.0);
  ens.f.resize(count);

  std::mt19937_64 rng(seed);
  std::array<double, 6> shift;
  for (auto& s : shift) s = std::generate_canonical<double, 53>(rng);

  boost::random::sobol qrng(6);
  const double sx = f0.sigma_x / std::sqrt(2.0), sv = f0.sigma_v / std::sqrt(2.0);
  for (std::int64_t p = 0; p < count; ++p) {
    std::array<double, 6> u;
    for (int d = 0; d < 6; ++d) {
      double q = std::ldexp(double(qrng()), -64) + shift[d];
      q -= std::floor(q);
      u[d] = std::clamp(q, 1e-15, 1.0 - 1e-15);
    }
    for (int a = 0; a < 3; ++a) {
      ens.x(a, p) = f0.center(a) + sx * normal_quantile(u[a]);
      ens.v(a, p) = f0.drift(a) + sv * normal_quantile(u[3 + a]);
    }
    ens.f(p) = f0.value(ens.x.col(p), ens.v.col(p));
  }
  ens.wrap();
  return ens;
}

void push_momentum(ParticleEnsemble& ens, const Eigen::Matrix3Xd& E, const Eigen::Matrix3Xd& B,
                   double dt)
{
  if (E.cols() != ens.size() || B.cols() != ens.size())
    throw std::invalid_argument("field samples do not match the ensemble");
  for (Eigen::Index p = 0; p < ens.size(); ++p) {
    Vec3d v = ens.v.col(p) + 0.5 * dt * E.col(p);
    const double b = B.col(p).norm();
    if (b > 0.0) {
      const double theta = dt * b / lorentz_factor(v);
      v = Eigen::AngleAxisd(-theta, B.col(p) / b) * v;
    }
    ens.v.col(p) = v + 0.5 * dt * E.col(p);
  }
}

void push_position(ParticleEnsemble& ens, double dt)
{
  for (Eigen::Index p = 0; p < ens.size(); ++p) ens.x.col(p) += hat_v<double>(ens.v.col(p)) * dt;
  ens.wrap();
  ens.time += dt;
}

ScalarGrid deposit_weights(const ParticleEnsemble& ens, const Eigen::VectorXd& weights,
                           const Grid3& g, int workers)
{
  if (weights.size() != ens.size()) throw std::invalid_argument("one weight per particle");
  std::vector<ScalarGrid> partial(std::max(workers, 1), ScalarGrid());
  const double scale = 1.0 / std::pow(g.dx(), 3);
  for_each_range(ens.size(), workers, [&](Eigen::Index b, Eigen::Index e, int w) {
    ScalarGrid rho = ScalarGrid::Zero(g.size());
    for (Eigen::Index p = b; p < e; ++p) {
      const double q = scale * weights(p);
      visit_corners(g, cic_stencil(g, ens.x.col(p)),
                    [&](std::size_t idx, double wt) { rho(idx) += q * wt; });
    }
    partial[w] = std::move(rho);
  });
  ScalarGrid out = std::move(partial[0]);
  for (std::size_t w = 1; w < partial.size(); ++w) out += partial[w];
  return out;
}

ScalarGrid deposit_charge(const ParticleEnsemble& ens, const Grid3& g, int workers)
{
  return deposit_weights(ens, 4.0 * kPi * ens.w, g, workers);
}

VectorGrid deposit_current(const ParticleEnsemble& ens, const Eigen::Matrix3Xd& velocity,
                           const Grid3& g, int workers)
{
  if (velocity.cols() != ens.size())
    throw std::invalid_argument("velocity samples do not match the ensemble");
  std::vector<VectorGrid> partial(std::max(workers, 1));
  const double scale = 4.0 * kPi / std::pow(g.dx(), 3);
  for_each_range(ens.size(), workers, [&](Eigen::Index b, Eigen::Index e, int w) {
    VectorGrid j;
    for (auto& c : j) c = ScalarGrid::Zero(g.size());
    for (Eigen::Index p = b; p < e; ++p) {
      const Vec3d q = scale * ens.w(p) * velocity.col(p);
      visit_corners(g, cic_stencil(g, ens.x.col(p)), [&](std::size_t idx, double wt) {
        for (int c = 0; c < 3; ++c) j[c](idx) += q(c) * wt;
      });
    }
    partial[w] = std::move(j);
  });
  VectorGrid out = std::move(partial[0]);
  for (std::size_t w = 1; w < partial.size(); ++w)
    for (int c = 0; c < 3; ++c) out[c] += partial[w][c];
  return out;
}

SourceDensity deposit(const ParticleEnsemble& ens, const DepositionScheme& scheme, const Grid3& g,
                      int workers)
{
  if (scheme.shape_order != 1) throw std::invalid_argument("only cloud-in-cell is supported");
  SourceDensity s;
  s.grid = g;
  s.rho = deposit_charge(ens, g, workers);
  Eigen::Matrix3Xd vh(3, ens.size());
  for (Eigen::Index p = 0; p < ens.size(); ++p) vh.col(p) = hat_v<double>(ens.v.col(p));
  s.j = deposit_current(ens, vh, g, workers);
  return s;
}

std::pair<Eigen::Matrix3Xd, Eigen::Matrix3Xd> interpolate_fields(const FieldState& state,
                                                                 const ParticleEnsemble& ens)
{
  const Grid3& g = state.grid();
  const VectorGrid& E = state.E();
  const VectorGrid& B = state.B();
  Eigen::Matrix3Xd Ep = Eigen::Matrix3Xd::Zero(3, ens.size());
  Eigen::Matrix3Xd Bp = Eigen::Matrix3Xd::Zero(3, ens.size());
  for (Eigen::Index p = 0; p < ens.size(); ++p) {
    visit_corners(g, cic_stencil(g, ens.x.col(p)), [&](std::size_t idx, double wt) {
      for (int c = 0; c < 3; ++c) {
        Ep(c, p) += wt * E[c](idx);
        Bp(c, p) += wt * B[c](idx);
      }
    });
  }
  return {Ep, Bp};
}

TransportMoment free_transport_moment(const GaussianData& f0, double t, const Vec3d& x,
                                      double cic_width, double tolerance)
{
  std::array<AxisFactor, 3> axis;
  for (int a = 0; a < 3; ++a) axis[a] = AxisFactor{f0.center(a), f0.sigma_x, cic_width};
  // velocity w = v^ in the unit ball: dv = (1-|w|^2)^{-5/2} dw
  auto momentum_factor = [&](const Vec3d& w) {
    const double w2 = w.squaredNorm();
    if (w2 >= 1.0) return 0.0;
    const Vec3d v = w / std::sqrt(1.0 - w2);
    const double g = std::exp(-(v - f0.drift).squaredNorm() / (f0.sigma_v * f0.sigma_v));
    return g == 0.0 ? 0.0 : f0.epsilon * g * std::pow(1.0 - w2, -2.5);
  };
  Vec3d pole = x - f0.center;
  if (pole.norm() == 0.0) pole = f0.drift;
  pole = pole.norm() > 0.0 ? Vec3d(pole.normalized()) : Vec3d::UnitZ();

  auto integrand = [&](const Vec3d& w) -> Moments {
    const double h = momentum_factor(w);
    if (h == 0.0) return Moments::Zero();
    const Vec3d z = x - w * t;
    Vec3d val, der;
    for (int a = 0; a < 3; ++a) {
      val(a) = axis[a].value(z(a));
      der(a) = axis[a].derivative(z(a));
    }
    return h * Moments(val.prod(), der(0) * val(1) * val(2), val(0) * der(1) * val(2),
                       val(0) * val(1) * der(2));
  };
  // A coarse pass fixes the absolute tolerance.
  double coarse_err = 0.0;
  const Moments coarse = integrate_ball(integrand, pole, 1e-3 * f0.epsilon, coarse_err);
  const double scale = std::abs(coarse(0)) + f0.epsilon * 1e-300;
  double err = 0.0;
  const Moments r = integrate_ball(integrand, pole, tolerance * scale, err);
  if (!r.allFinite() || !std::isfinite(err) || err > 100.0 * tolerance * std::abs(r(0))) {
    throw QuadratureFailure("free-transport quadrature did not converge at t=" +
                            std::to_string(t) + " (error " + std::to_string(err) + ")");
  }
  TransportMoment m;
  m.density = r(0);
  m.gradient = r.tail<3>();
  m.error = err;
  return m;
}

double free_transport_density(const GaussianData& f0, double t, const Vec3d& x)
{
  return free_transport_moment(f0, t, x).density;
}

}  // namespace rvm
