#include "rvm/vector_fields.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace rvm {

namespace {

PhaseVector pack(double ct, const Vec3d& cx, const Vec3d& cv)
{
  PhaseVector c;
  c << ct, cx, cv;
  return c;
}

double zero_factor(const PhasePoint&) { return 0.0; }

void check_axis(int i)
{
  if (i < 0 || i > 2) throw std::out_of_range("axis index must be 0, 1 or 2");
}

DifferentialOperator make(std::string name, std::function<PhaseVector(const PhasePoint&)> c,
                          std::function<double(const PhasePoint&)> lambda = zero_factor)
{
  return {std::move(name), std::move(c), std::move(lambda)};
}

std::string indexed(const char* base, int i)
{
  std::ostringstream s;
  s << base << (i + 1);
  return s.str();
}

// Coefficient vectors of the profile family without std::function overhead.
PhaseVector profile_coefficients(int rho, const PhasePoint& p)
{
  if (rho < 1 || rho > kProfileFieldCount) throw std::out_of_range("profile field index 1..17");
  const double vn = p.v.norm();
  if (rho >= 15) {
    const int i = rho - 15;
    return pack(0.0, Vec3d::Unit(i).cross(p.x), Vec3d::Unit(i).cross(p.v));
  }
  if (rho >= 9) {
    const double low = psi_le(0, vn);
    if (low == 0.0) return PhaseVector::Zero();
    if (rho >= 12) return pack(0.0, low * Vec3d::Unit(rho - 12), Vec3d::Zero());
    const int i = rho - 9;
    const double g = lorentz_factor(p.v);
    const Vec3d cx = -g * omega_xv(p.x, p.v) * grad_hat_v(p.v).row(i).transpose();
    return low * pack(0.0, cx, Vec3d::Unit(i));
  }
  const double high = psi_ge(1, vn);
  if (high == 0.0) return PhaseVector::Zero();
  const Frame<double> fr = frame_vectors(p.v);
  const double w = omega_xv(p.x, p.v);
  switch (rho) {
    case 1:
      return high * pack(0.0, -w / (1.0 + p.v.squaredNorm()) * fr.v_tilde, fr.v_tilde);
    case 2:
      return high * pack(0.0, fr.v_tilde, Vec3d::Zero());
    case 3:
    case 4:
    case 5: {
      const Vec3d& V = fr.V_tilde[rho - 3];
      return high * pack(0.0, -w * V, V);
    }
    default: {
      const Vec3d& V = fr.V_tilde[rho - 6];
      return high * pack(0.0, V, Vec3d::Zero());
    }
  }
}

PhaseVector dv_coefficients(int i, const PhasePoint& p)
{
  return pack(0.0, -p.t * grad_hat_v(p.v).row(i).transpose(), Vec3d::Unit(i));
}

// 4th-order centered first derivative of g at 0.
template <typename G>
double centered_derivative(G&& g, double h)
{
  return (-g(2.0 * h) + 8.0 * g(h) - 8.0 * g(-h) + g(-2.0 * h)) / (12.0 * h);
}

PhasePoint shifted(const PhasePoint& p, const PhaseVector& dir, double s)
{
  return to_phase_point(to_phase_vector(p) + s * dir);
}

PhaseVector transport_direction(const PhasePoint& p)
{
  return pack(1.0, hat_v(p.v), Vec3d::Zero());
}

}  // namespace

TestFunction gaussian_test_function(const PhaseVector& center, const PhaseVector& widths,
                                    double amplitude)
{
  const PhaseVector inv2 = widths.array().square().inverse().matrix();
  auto value = [=](const PhasePoint& p) {
    const PhaseVector d = to_phase_vector(p) - center;
    return amplitude * std::exp(-0.5 * d.cwiseProduct(d).dot(inv2));
  };
  auto gradient = [=](const PhasePoint& p) -> PhaseVector {
    const PhaseVector d = to_phase_vector(p) - center;
    const double g = amplitude * std::exp(-0.5 * d.cwiseProduct(d).dot(inv2));
    return -g * d.cwiseProduct(inv2);
  };
  return {"gaussian", value, gradient};
}

TestFunction poly_gaussian_test_function(const PhaseVector& center, const PhaseVector& widths,
                                         const PhaseVector& slope, double offset)
{
  const TestFunction gauss = gaussian_test_function(center, widths);
  auto value = [=](const PhasePoint& p) {
    return (offset + slope.dot(to_phase_vector(p) - center)) * gauss.value(p);
  };
  auto gradient = [=](const PhasePoint& p) -> PhaseVector {
    const double poly = offset + slope.dot(to_phase_vector(p) - center);
    return slope * gauss.value(p) + poly * gauss.gradient(p);
  };
  return {"poly_gaussian", value, gradient};
}

TestFunction affine_test_function(const PhaseVector& coefficients, double offset)
{
  auto value = [=](const PhasePoint& p) { return coefficients.dot(to_phase_vector(p)) + offset; };
  auto gradient = [=](const PhasePoint&) -> PhaseVector { return coefficients; };
  return {"affine", value, gradient};
}

TestFunction radial_test_function(std::function<double(double)> g,
                                  std::function<double(double)> dg)
{
  auto value = [=](const PhasePoint& p) { return g(p.x.norm()); };
  auto gradient = [=](const PhasePoint& p) -> PhaseVector {
    const double r = p.x.norm();
    PhaseVector out = PhaseVector::Zero();
    if (r > 0.0) out.segment<3>(1) = dg(r) * p.x / r;
    return out;
  };
  return {"radial", value, gradient};
}

std::vector<CorpusEntry> test_function_corpus(std::uint64_t seed, int count)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> width(0.5, 2.0);
  std::uniform_real_distribution<double> time(1.0, 4.0);
  std::uniform_real_distribution<double> pos(-2.0, 2.0);
  std::uniform_real_distribution<double> mom(-2.5, 2.5);
  std::vector<CorpusEntry> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    PhaseVector c, w;
    c(0) = time(rng);
    for (int i = 1; i < 4; ++i) c(i) = pos(rng);
    for (int i = 4; i < 7; ++i) c(i) = mom(rng);
    for (int i = 0; i < 7; ++i) w(i) = width(rng);
    TestFunction f = gaussian_test_function(c, w);
    f.name = indexed("corpus", k);
    out.push_back({std::move(f), c, w});
  }
  return out;
}

double apply(const DifferentialOperator& op, const TestFunction& f, const PhasePoint& p)
{
  return op.coefficients(p).dot(f.gradient(p));
}

namespace ops {

DifferentialOperator transport()
{
  return make("T", transport_direction);
}

DifferentialOperator scaling()
{
  return make(
      "S", [](const PhasePoint& p) { return pack(p.t, p.x, Vec3d::Zero()); },
      [](const PhasePoint&) { return 1.0; });
}

DifferentialOperator d_t()
{
  return make("d_t", [](const PhasePoint&) { return pack(1.0, Vec3d::Zero(), Vec3d::Zero()); });
}

DifferentialOperator d_x(int i)
{
  check_axis(i);
  return make(indexed("d_x", i),
              [i](const PhasePoint&) { return pack(0.0, Vec3d::Unit(i), Vec3d::Zero()); });
}

DifferentialOperator d_v(int i)
{
  check_axis(i);
  return make(indexed("d_v", i),
              [i](const PhasePoint&) { return pack(0.0, Vec3d::Zero(), Vec3d::Unit(i)); });
}

DifferentialOperator boost(int i)
{
  check_axis(i);
  return make(indexed("L", i), [i](const PhasePoint& p) {
    return pack(p.x(i), p.t * Vec3d::Unit(i), Vec3d::Zero());
  });
}

DifferentialOperator rotation(int i, int j)
{
  check_axis(i);
  check_axis(j);
  std::ostringstream name;
  name << "Omega" << i + 1 << j + 1;
  return make(name.str(), [i, j](const PhasePoint& p) {
    Vec3d c = Vec3d::Zero();
    c(i) += p.x(j);
    c(j) -= p.x(i);
    return pack(0.0, c, Vec3d::Zero());
  });
}

DifferentialOperator rotation_lifted(int i)
{
  check_axis(i);
  return make(indexed("Omega~", i), [i](const PhasePoint& p) {
    return pack(0.0, Vec3d::Unit(i).cross(p.x), Vec3d::Unit(i).cross(p.v));
  });
}

DifferentialOperator boost_lifted(int i)
{
  check_axis(i);
  return make(
      indexed("L~", i),
      [i](const PhasePoint& p) {
        return pack(p.x(i), p.t * Vec3d::Unit(i), lorentz_factor(p.v) * Vec3d::Unit(i));
      },
      [i](const PhasePoint& p) { return hat_v(p.v)(i); });
}

DifferentialOperator K_v(int i)
{
  check_axis(i);
  return make(indexed("K_v", i), [i](const PhasePoint& p) {
    const double g = lorentz_factor(p.v);
    const Vec3d cx = -g * omega_xv(p.x, p.v) * grad_hat_v(p.v).row(i).transpose();
    return pack(0.0, cx, Vec3d::Unit(i));
  });
}

DifferentialOperator K_tilde_v(int i)
{
  check_axis(i);
  return make(indexed("K~_v", i), [i](const PhasePoint& p) {
    const double g = lorentz_factor(p.v);
    const Vec3d y = p.x - hat_v(p.v) * p.t;
    const double a = p.t - g * omega_xv(y, p.v);
    return pack(0.0, a * grad_hat_v(p.v).row(i).transpose(), Vec3d::Unit(i));
  });
}

DifferentialOperator D_v(int i)
{
  check_axis(i);
  return make(indexed("D_v", i), [i](const PhasePoint& p) { return dv_coefficients(i, p); });
}

DifferentialOperator S_v()
{
  return make("S^v", [](const PhasePoint& p) {
    return pack(0.0, Vec3d::Zero(), frame_vectors(p.v).v_tilde);
  });
}

DifferentialOperator S_x()
{
  return make("S^x", [](const PhasePoint& p) {
    return pack(0.0, frame_vectors(p.v).v_tilde, Vec3d::Zero());
  });
}

DifferentialOperator Omega_v(int i)
{
  check_axis(i);
  return make(indexed("Omega^v_", i), [i](const PhasePoint& p) {
    return pack(0.0, Vec3d::Zero(), frame_vectors(p.v).V_tilde[i]);
  });
}

DifferentialOperator Omega_x(int i)
{
  check_axis(i);
  return make(indexed("Omega^x_", i), [i](const PhasePoint& p) {
    return pack(0.0, frame_vectors(p.v).V_tilde[i], Vec3d::Zero());
  });
}

DifferentialOperator S_hat_v()
{
  return make("S^hat_v", [](const PhasePoint& p) {
    const Vec3d vt = frame_vectors(p.v).v_tilde;
    const double w = omega_xv(p.x, p.v);
    return pack(0.0, -w / (1.0 + p.v.squaredNorm()) * vt, vt);
  });
}

DifferentialOperator Omega_hat_v(int i)
{
  check_axis(i);
  return make(indexed("Omega^hat_v", i), [i](const PhasePoint& p) {
    const Vec3d V = frame_vectors(p.v).V_tilde[i];
    return pack(0.0, -omega_xv(p.x, p.v) * V, V);
  });
}

DifferentialOperator profile_field(int rho)
{
  if (rho < 1 || rho > kProfileFieldCount) throw std::out_of_range("profile field index 1..17");
  return make(indexed("Gamma", rho - 1),
              [rho](const PhasePoint& p) { return profile_coefficients(rho, p); });
}

std::vector<DifferentialOperator> first_family()
{
  std::vector<DifferentialOperator> out{scaling()};
  for (int i = 0; i < 3; ++i) out.push_back(rotation_lifted(i));
  for (int i = 0; i < 3; ++i) out.push_back(boost_lifted(i));
  for (int i = 0; i < 3; ++i) out.push_back(d_x(i));
  return out;
}

std::vector<DifferentialOperator> profile_family()
{
  std::vector<DifferentialOperator> out;
  for (int rho = 1; rho <= kProfileFieldCount; ++rho) out.push_back(profile_field(rho));
  return out;
}

std::vector<DifferentialOperator> transport_commuting()
{
  std::vector<DifferentialOperator> out;
  for (int i = 0; i < 3; ++i) out.push_back(K_tilde_v(i));
  auto first = first_family();
  out.insert(out.end(), first.begin(), first.end());
  return out;
}

}  // namespace ops

int good_derivative_count(int rho)
{
  if (rho < 1 || rho > kProfileFieldCount) throw std::out_of_range("profile field index 1..17");
  return (rho == 1 || (rho >= 6 && rho <= 8)) ? 1 : 0;
}

int good_rotation_count(int rho)
{
  if (rho < 1 || rho > kProfileFieldCount) throw std::out_of_range("profile field index 1..17");
  return (rho >= 6 && rho <= 8) ? 1 : 0;
}

Vec3d decomposition_coefficient(Decomposition which, int rho, const PhasePoint& p)
{
  if (rho < 1 || rho > kProfileFieldCount) throw std::out_of_range("profile field index 1..17");
  const double vn = p.v.norm();
  const double g = lorentz_factor(p.v);
  if (rho >= 9 && rho <= 14) {
    const double low = psi_le(2, vn);
    if (rho <= 11) return low * Vec3d::Unit(rho - 9);
    const double dt = modulation_d_tilde(p.t, p.x, p.v);
    return -low * g * g * dt * grad_hat_v(p.v).col(rho - 12);
  }
  const double high = psi_ge(-1, vn);
  if (high == 0.0) return Vec3d::Zero();
  const Frame<double> fr = frame_vectors(p.v);
  const double dt = modulation_d_tilde(p.t, p.x, p.v);
  if (rho == 1) return high * fr.v_tilde;
  if (which == Decomposition::First) {
    if (rho == 2) return -high * dt / g * fr.v_tilde;
    if (rho <= 5) return high * fr.V_tilde[rho - 3];
    if (rho <= 8) return -high * g * dt * fr.V_tilde[rho - 6];
    return Vec3d::Zero();
  }
  if (rho == 2) {
    Vec3d c = dt / g * fr.v_tilde;
    for (int i = 0; i < 3; ++i)
      c += fr.V_tilde[i] * Vec3d::Unit(i).cross(p.x).dot(fr.v_tilde) / vn;
    return -high * c;
  }
  if (rho <= 5) return Vec3d::Zero();
  if (rho <= 8) {
    const Vec3d& Vj = fr.V_tilde[rho - 6];
    const Vec3d vh = hat_v(p.v);
    Vec3d c = Vec3d::Zero();
    for (int i = 0; i < 3; ++i) {
      const Vec3d Xi = Vec3d::Unit(i).cross(p.x);
      const Vec3d Vhat_i = Vec3d::Unit(i).cross(vh);
      c += fr.V_tilde[i] * (Xi + Vhat_i * p.t).dot(Vj);
    }
    return -high / vn * c;
  }
  return psi_ge(1, vn) / vn * fr.V_tilde[rho - 15];
}

std::array<Vec3d, kProfileFieldCount> coefficient_table(Decomposition which, const PhasePoint& p)
{
  std::array<Vec3d, kProfileFieldCount> out;
  for (int rho = 1; rho <= kProfileFieldCount; ++rho)
    out[rho - 1] = decomposition_coefficient(which, rho, p);
  return out;
}

double decompose_Dv_residual(Decomposition which, const TestFunction& f, const PhasePoint& p)
{
  const PhaseVector grad = f.gradient(p);
  Vec3d lhs;
  for (int i = 0; i < 3; ++i) lhs(i) = dv_coefficients(i, p).dot(grad);
  Vec3d rhs = Vec3d::Zero();
  for (int rho = 1; rho <= kProfileFieldCount; ++rho) {
    const Vec3d c = decomposition_coefficient(which, rho, p);
    if (c.squaredNorm() == 0.0) continue;
    rhs += c * profile_coefficients(rho, p).dot(grad);
  }
  return (lhs - rhs).norm();
}

double good_derivative_residual(const TestFunction& f, const PhasePoint& p)
{
  const double lhs = apply(ops::S_hat_v(), f, p);
  const double w = omega_xv(p.x, p.v);
  const double rhs = apply(ops::S_v(), f, p) - w / (1.0 + p.v.squaredNorm()) * apply(ops::S_x(), f, p);
  return std::abs(lhs - rhs);
}

double trading_identity_residual(int i, const TestFunction& f, double t, const Vec3d& x)
{
  check_axis(i);
  const double at = std::abs(t);
  const double ax = x.norm();
  if (at + ax == 0.0) throw std::domain_error("trading identity: t = x = 0");
  const PhasePoint p{t, x, Vec3d::Zero()};
  const PhaseVector grad = f.gradient(p);
  const double s = at + ax;
  double rhs = 0.0;
  for (int j = 0; j < 3; ++j)
    if (j != i) rhs += -x(j) / s * ops::rotation(i, j).coefficients(p).dot(grad);
  rhs += t / s * ops::boost(i).coefficients(p).dot(grad);
  rhs -= x(i) / s * ops::scaling().coefficients(p).dot(grad);
  return std::abs((at - ax) * grad(1 + i) - rhs);
}

namespace {

double cone_distance_weight(const PhasePoint& p)
{
  return 1.0 + std::abs(std::abs(p.t) - (p.x + hat_v(p.v) * p.t).norm());
}

}  // namespace

double lambda_rho_dtilde_ratio(int rho, const PhasePoint& p)
{
  const PhaseVector grad = phase_gradient(
      [](const auto& t, const auto& x, const auto& v) { return modulation_d_tilde(t, x, v); }, p);
  const double value = modulation_d_tilde(p.t, p.x, p.v);
  return std::abs(profile_coefficients(rho, p).dot(grad)) / (1.0 + std::abs(value));
}

double coefficient_table_ratio(Decomposition which, const PhasePoint& p)
{
  const double vn = p.v.norm();
  double sum = 0.0;
  for (int rho = 1; rho <= kProfileFieldCount; ++rho)
    sum += decomposition_coefficient(which, rho, p).norm() *
           std::pow(1.0 + vn, -good_derivative_count(rho));
  return sum / (1.0 + std::abs(modulation_d_tilde(p.t, p.x, p.v)));
}

double weight_ratio(const WeightOrder& order, const PhasePoint& p)
{
  const PhaseVector grad = phase_gradient(
      [&order](const auto& t, const auto& x, const auto& v) {
        return log_weight_omega(order, t, x, v);
      },
      p);
  Vec3d dv;
  for (int i = 0; i < 3; ++i) dv(i) = dv_coefficients(i, p).dot(grad);
  return dv.norm() / cone_distance_weight(p);
}

double dtilde_phi_ratio(const PhasePoint& p)
{
  return std::abs(modulation_d_tilde(p.t, p.x, p.v) * weight_phi(p.t, p.x, p.v)) /
         cone_distance_weight(p);
}

double dtilde_cone_ratio(const PhasePoint& p)
{
  return std::abs(modulation_d_tilde(p.t, p.x, p.v)) / cone_distance_weight(p);
}

double div_v_force_residual(const VectorField& E, const VectorField& B, double t, const Vec3d& x,
                            const Vec3d& v)
{
  const Vec3d e = E(t, x);
  const Vec3d b = B(t, x);
  Vec3<AD3> va;
  for (int i = 0; i < 3; ++i) va(i) = AD3(v(i), 3, i);
  const Vec3<AD3> force = e.cast<AD3>() + hat_v(va).cross(b.cast<AD3>());
  double div = 0.0;
  for (int i = 0; i < 3; ++i)
    if (force(i).derivatives().size() == 3) div += force(i).derivatives()(i);
  return std::abs(div);
}

double commutator_fd(const DifferentialOperator& A, const DifferentialOperator& B,
                     const TestFunction& f, const PhasePoint& p, double h)
{
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  const PhaseVector a = A.coefficients(p);
  const PhaseVector b = B.coefficients(p);
  const double outer_A =
      centered_derivative([&](double s) { return apply(B, f, shifted(p, a, s)); }, h);
  const double outer_B =
      centered_derivative([&](double s) { return apply(A, f, shifted(p, b, s)); }, h);
  return outer_A - outer_B;
}

double transport_commutator_fd(const DifferentialOperator& op, const TestFunction& f,
                               const PhasePoint& p, double h)
{
  const DifferentialOperator T = ops::transport();
  return commutator_fd(T, op, f, p, h) - op.transport_factor(p) * apply(T, f, p);
}

ConvergenceStudy transport_commutator_study(const DifferentialOperator& op, const TestFunction& f,
                                            const PhasePoint& p, double h, double tolerance)
{
  ConvergenceStudy s;
  for (int k = 0; k < 3; ++k) {
    s.steps[k] = h / double(1 << k);
    s.residuals[k] = transport_commutator_fd(op, f, p, s.steps[k]);
  }
  const DifferentialOperator T = ops::transport();
  const double scale = std::abs(apply(op, f, p)) + std::abs(apply(T, f, p)) +
                       op.coefficients(p).norm() * f.gradient(p).norm() +
                       std::abs(f.value(p));
  const double eps = std::numeric_limits<double>::epsilon();
  s.roundoff_level = 30.0 * eps * std::max(scale, 1e-300) / s.steps[2];
  if (s.roundoff_level > tolerance) {
    std::ostringstream msg;
    msg << "step h=" << h << " is roundoff-dominated for " << op.name << ": noise level "
        << s.roundoff_level << " exceeds tolerance " << tolerance;
    throw RoundoffDominated(msg.str());
  }
  const double d1 = s.residuals[0] - s.residuals[1];
  const double d2 = s.residuals[1] - s.residuals[2];
  if (std::abs(d1) <= s.roundoff_level && std::abs(d2) <= s.roundoff_level) {
    s.at_roundoff = true;
    s.order = std::numeric_limits<double>::quiet_NaN();
    s.extrapolated = s.residuals[2];
    return s;
  }
  if (std::abs(d2) >= std::abs(d1)) {
    std::ostringstream msg;
    msg << "non-monotone refinement sequence for " << op.name << " (differences " << d1 << ", "
        << d2 << ")";
    throw RoundoffDominated(msg.str());
  }
  s.order = std::log2(std::abs(d1) / std::abs(d2));
  const double p_used = std::clamp(s.order, 1.0, 6.0);
  s.extrapolated = s.residuals[2] - d2 / (std::pow(2.0, p_used) - 1.0);
  return s;
}

double transport_commutator_residual(const DifferentialOperator& op, const TestFunction& f,
                                     const PhasePoint& p, double h)
{
  return transport_commutator_study(op, f, p, h).extrapolated;
}

}  // namespace rvm
