#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace rvm {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
using Vec3d = Vec3<double>;

inline constexpr double kPi = 3.14159265358979323846;

// Desk-scale replacement for the derivative budget N0 in the weights.
inline constexpr int kDeskN = 3;
inline constexpr int kDeskOrderTruncation = 2;

namespace detail {

template <typename Scalar>
Scalar smooth_zero(const Scalar& r)
{
  using std::exp;
  if (r <= 0.0) return Scalar(0.0);
  return exp(-1.0 / r);
}

// 1 for u <= 0, 0 for u >= 1, smooth and monotone in between.
template <typename Scalar>
Scalar smooth_descent(const Scalar& u)
{
  if (u <= 0.0) return Scalar(1.0);
  if (u >= 1.0) return Scalar(0.0);
  const Scalar a = smooth_zero<Scalar>(1.0 - u);
  const Scalar b = smooth_zero<Scalar>(u);
  return a / (a + b);
}

}  // namespace detail

/// Even plateau profile: 1 on |s| <= 5/4, 0 on |s| >= 3/2.
template <typename Scalar>
Scalar cutoff_profile(const Scalar& s)
{
  using std::abs;
  const Scalar a = abs(s);
  return detail::smooth_descent<Scalar>((a - 1.25) * 4.0);
}

template <typename Scalar>
Scalar psi_le(int k, const Scalar& x)
{
  return cutoff_profile<Scalar>(x / std::ldexp(1.0, k));
}

template <typename Scalar>
Scalar psi_ge(int k, const Scalar& x)
{
  return 1.0 - psi_le<Scalar>(k - 1, x);
}

/// Dyadic piece psi_k = psi_{<=k} - psi_{<=k-1}.
template <typename Scalar>
Scalar psi_k(int k, const Scalar& x)
{
  return psi_le<Scalar>(k, x) - psi_le<Scalar>(k - 1, x);
}

template <typename Scalar>
Scalar lorentz_factor(const Vec3<Scalar>& v)
{
  using std::sqrt;
  return sqrt(1.0 + v.squaredNorm());
}

/// Relativistic velocity v / sqrt(1+|v|^2).
template <typename Scalar>
Vec3<Scalar> hat_v(const Vec3<Scalar>& v)
{
  return v / lorentz_factor(v);
}

/// Jacobian d(hat v)_j / d v_i (symmetric).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> grad_hat_v(const Vec3<Scalar>& v)
{
  const Scalar g = lorentz_factor(v);
  Eigen::Matrix<Scalar, 3, 3> m = Eigen::Matrix<Scalar, 3, 3>::Identity() / g;
  m -= v * v.transpose() / (g * g * g);
  return m;
}

template <typename Scalar>
struct Frame {
  Vec3<Scalar> v_tilde;
  std::array<Vec3<Scalar>, 3> V_tilde;
};

/// Unit direction v/|v| and the rotated vectors e_i x v/|v|.
template <typename Scalar>
Frame<Scalar> frame_vectors(const Vec3<Scalar>& v)
{
  using std::sqrt;
  const Scalar n = sqrt(v.squaredNorm());
  if (!(n > 0.0)) throw std::domain_error("frame_vectors: direction of v = 0 is undefined");
  Frame<Scalar> f;
  f.v_tilde = v / n;
  for (int i = 0; i < 3; ++i) f.V_tilde[i] = Vec3<Scalar>::Unit(i).cross(f.v_tilde);
  return f;
}

/// Residual of u = v~(v~.u) + sum_i V~_i(V~_i.u).
template <typename Scalar>
Scalar frame_reconstruction_residual(const Vec3<Scalar>& v, const Vec3<Scalar>& u)
{
  const Frame<Scalar> f = frame_vectors(v);
  Vec3<Scalar> r = f.v_tilde * f.v_tilde.dot(u);
  for (const auto& V : f.V_tilde) r += V * V.dot(u);
  return (r - u).norm();
}

namespace detail {

// x.v + sqrt((x.v)^2+|x|^2) and x.v - sqrt(...), free of cancellation.
template <typename Scalar>
std::pair<Scalar, Scalar> cone_roots(const Vec3<Scalar>& x, const Vec3<Scalar>& v)
{
  using std::sqrt;
  const Scalar a = x.dot(v);
  const Scalar x2 = x.squaredNorm();
  const Scalar b = sqrt(a * a + x2);
  if (a >= 0.0) {
    const Scalar plus = a + b;
    const Scalar minus = plus > 0.0 ? Scalar(-x2 / plus) : Scalar(0.0);
    return {plus, minus};
  }
  const Scalar minus = a - b;
  return {Scalar(-x2 / minus), minus};
}

}  // namespace detail

template <typename Scalar>
Scalar omega_xv(const Vec3<Scalar>& x, const Vec3<Scalar>& v)
{
  const Scalar a = x.dot(v);
  const Scalar cut = psi_ge<Scalar>(0, x.squaredNorm() + a * a);
  if (cut == 0.0) return Scalar(0.0);
  return cut * detail::cone_roots(x, v).first;
}

template <typename Scalar>
Scalar modulation_d(const Scalar& t, const Vec3<Scalar>& x, const Vec3<Scalar>& v)
{
  const Scalar g2 = 1.0 + v.squaredNorm();
  using std::sqrt;
  return t / g2 - detail::cone_roots(x, v).first / sqrt(g2);
}

template <typename Scalar>
Scalar modulation_d_tilde(const Scalar& t, const Vec3<Scalar>& x, const Vec3<Scalar>& v)
{
  const Scalar g2 = 1.0 + v.squaredNorm();
  using std::sqrt;
  return t / g2 - omega_xv(x, v) / sqrt(g2);
}

/// |t|^2 - |x + v^ t|^2.
template <typename Scalar>
Scalar cone_quadratic(const Scalar& t, const Vec3<Scalar>& x, const Vec3<Scalar>& v)
{
  return t * t - (x + hat_v(v) * t).squaredNorm();
}

template <typename Scalar>
Scalar cone_identity_residual(const Scalar& t, const Vec3<Scalar>& x, const Vec3<Scalar>& v)
{
  const Scalar g = lorentz_factor(v);
  const Scalar rhs = modulation_d(t, x, v) * (t - g * detail::cone_roots(x, v).second);
  return cone_quadratic(t, x, v) - rhs;
}

/// Magnitude scale of the terms entering the cone identity.
template <typename Scalar>
Scalar cone_identity_scale(const Scalar& t, const Vec3<Scalar>& x, const Vec3<Scalar>& v)
{
  using std::abs;
  const Scalar g = lorentz_factor(v);
  return t * t + (x + hat_v(v) * t).squaredNorm() +
         abs(modulation_d(t, x, v) * (t - g * detail::cone_roots(x, v).second));
}

/// Bump f(s) = exp(-1/(1-2^5 s)) on [0, 2^-5), 0 elsewhere.
template <typename Scalar>
Scalar weight_bump(const Scalar& s)
{
  using std::exp;
  if (s < 0.0) return Scalar(0.0);
  const Scalar r = 1.0 - 32.0 * s;
  if (r <= 0.0) return Scalar(0.0);
  return exp(-1.0 / r);
}

/// Mollified step: 1 on (-inf,-20], 0 on [-10,inf).
template <typename Scalar>
Scalar weight_step(const Scalar& s)
{
  return detail::smooth_descent<Scalar>((s + 20.0) / 10.0);
}

template <typename Scalar>
Scalar weight_phi(const Scalar& t, const Vec3<Scalar>& x, const Vec3<Scalar>& v)
{
  using std::abs;
  using std::sqrt;
  const Scalar vn = sqrt(v.squaredNorm());
  const Scalar high = psi_ge<Scalar>(1, vn);
  if (high == 0.0) return Scalar(1.0);
  const Scalar xn = sqrt(x.squaredNorm());
  const Scalar xv = x.dot(v);
  const Scalar eta = weight_step<Scalar>(xv / vn);
  if (eta == 0.0) return Scalar(1.0);
  const Scalar f = weight_bump<Scalar>((1.0 + abs(t)) / (xn * vn));
  return 1.0 - xv / (1.0 + xn) * f * eta * high;
}

struct WeightOrder {
  int alpha = 0;
  int beta = 0;
  int c_index = 0;
  int i_index = 0;
};

inline void validate_weight_order(const WeightOrder& o)
{
  if (o.alpha < 0 || o.beta < 0 || o.c_index < 0 || o.i_index < 0)
    throw std::invalid_argument("weight order: negative index");
  if (o.alpha + o.beta > kDeskOrderTruncation)
    throw std::invalid_argument("weight order: |alpha|+|beta| exceeds desk truncation");
  if (o.beta - o.i_index < 0) throw std::invalid_argument("weight order: negative phi exponent");
  if (20 * kDeskN - 10 * (o.alpha + o.beta) < 0)
    throw std::invalid_argument("weight order: negative base exponent");
}

/// Natural log of the weight omega^alpha_beta.
template <typename Scalar>
Scalar log_weight_omega(const WeightOrder& o, const Scalar& t, const Vec3<Scalar>& x,
                        const Vec3<Scalar>& v)
{
  using std::log;
  using std::pow;
  using std::sqrt;
  validate_weight_order(o);
  const Scalar xv = x.dot(v);
  const Scalar base = 1.0 + x.squaredNorm() + xv * xv + pow(v.squaredNorm(), 10);
  const Scalar vn = sqrt(v.squaredNorm());
  Scalar out = double(20 * kDeskN - 10 * (o.alpha + o.beta)) * log(base);
  if (o.c_index != 0) out += double(o.c_index) * log(1.0 + vn);
  if (o.beta != o.i_index) out += double(o.beta - o.i_index) * log(weight_phi(t, x, v));
  return out;
}

template <typename Scalar>
Scalar weight_omega(const WeightOrder& o, const Scalar& t, const Vec3<Scalar>& x,
                    const Vec3<Scalar>& v)
{
  using std::exp;
  return exp(log_weight_omega(o, t, x, v));
}

/// |xi| - mu v^.xi.
inline double null_phase(const Vec3d& v, const Vec3d& xi, int mu)
{
  if (xi.squaredNorm() == 0.0) throw std::domain_error("null_phase: xi = 0");
  if (mu != 1 && mu != -1) throw std::invalid_argument("null_phase: mu must be +1 or -1");
  return xi.norm() - mu * hat_v(v).dot(xi);
}

/// Phase over |xi|(1/(1+|v|^2) + sum_i (V~_i.xi/|xi|)^2), worst sign of mu.
inline double null_phase_ratio(const Vec3d& v, const Vec3d& xi)
{
  const double phase = std::min(null_phase(v, xi, 1), null_phase(v, xi, -1));
  const double xn = xi.norm();
  double angular = 0.0;
  if (v.squaredNorm() > 0.0) {
    const Frame<double> f = frame_vectors(v);
    for (const auto& V : f.V_tilde) angular += std::pow(V.dot(xi) / xn, 2);
  }
  return phase / (xn * (1.0 / (1.0 + v.squaredNorm()) + angular));
}

}  // namespace rvm
