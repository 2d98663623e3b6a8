#pragma once

#include "rvm/autodiff.hpp"
#include "rvm/geometry.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvm {

/// Scalar function of (t, x, v) with its exact gradient.
struct TestFunction {
  std::string name;
  std::function<double(const PhasePoint&)> value;
  std::function<PhaseVector(const PhasePoint&)> gradient;
};

TestFunction gaussian_test_function(const PhaseVector& center, const PhaseVector& widths,
                                    double amplitude = 1.0);
/// (offset + slope.(z - center)) times a Gaussian.
TestFunction poly_gaussian_test_function(const PhaseVector& center, const PhaseVector& widths,
                                         const PhaseVector& slope, double offset);
TestFunction affine_test_function(const PhaseVector& coefficients, double offset = 0.0);
/// f = g(|x|).
TestFunction radial_test_function(std::function<double(double)> g,
                                  std::function<double(double)> dg);

inline constexpr std::uint64_t kCorpusSeed = 20240917;

struct CorpusEntry {
  TestFunction f;
  PhaseVector center;
  PhaseVector widths;
};

/// Anisotropic Gaussians with seeded centers and widths in [1/2, 2].
std::vector<CorpusEntry> test_function_corpus(std::uint64_t seed = kCorpusSeed, int count = 12);

/// First-order operator c_t d_t + c_x.grad_x + c_v.grad_v.
struct DifferentialOperator {
  std::string name;
  std::function<PhaseVector(const PhasePoint&)> coefficients;
  /// lambda with [d_t + v^.grad_x, op] = lambda (d_t + v^.grad_x).
  std::function<double(const PhasePoint&)> transport_factor;
};

double apply(const DifferentialOperator& op, const TestFunction& f, const PhasePoint& p);

namespace ops {

DifferentialOperator transport();
DifferentialOperator scaling();
DifferentialOperator d_t();
DifferentialOperator d_x(int i);
DifferentialOperator d_v(int i);
/// Classical fields acting on (t, x).
DifferentialOperator boost(int i);
DifferentialOperator rotation(int i, int j);
/// Lifted fields of the first family.
DifferentialOperator rotation_lifted(int i);
DifferentialOperator boost_lifted(int i);
DifferentialOperator K_v(int i);
DifferentialOperator K_tilde_v(int i);
DifferentialOperator D_v(int i);
DifferentialOperator S_v();
DifferentialOperator S_x();
DifferentialOperator Omega_v(int i);
DifferentialOperator Omega_x(int i);
DifferentialOperator S_hat_v();
DifferentialOperator Omega_hat_v(int i);
/// Gamma_rho of the profile family, rho = 1..17.
DifferentialOperator profile_field(int rho);

std::vector<DifferentialOperator> first_family();
std::vector<DifferentialOperator> profile_family();
/// Operators whose commutator with the transport vanishes modulo the transport.
std::vector<DifferentialOperator> transport_commuting();

}  // namespace ops

inline constexpr int kProfileFieldCount = 17;

/// Good-derivative count c(rho) and rotation count i(rho) of Gamma_rho.
int good_derivative_count(int rho);
int good_rotation_count(int rho);

enum class Decomposition { First = 1, Second = 2 };

Vec3d decomposition_coefficient(Decomposition which, int rho, const PhasePoint& p);
std::array<Vec3d, kProfileFieldCount> coefficient_table(Decomposition which, const PhasePoint& p);

double decompose_Dv_residual(Decomposition which, const TestFunction& f, const PhasePoint& p);
/// S^hat_v f - (S^v - omega/(1+|v|^2) S^x) f.
double good_derivative_residual(const TestFunction& f, const PhasePoint& p);
double trading_identity_residual(int i, const TestFunction& f, double t, const Vec3d& x);
double lambda_rho_dtilde_ratio(int rho, const PhasePoint& p);
/// sum_rho |d_rho| (1+|v|)^{-c(rho)} / (1 + |d~|).
double coefficient_table_ratio(Decomposition which, const PhasePoint& p);
/// |D_v omega^alpha_beta / omega^alpha_beta| / (1 + ||t| - |x+v^t||).
double weight_ratio(const WeightOrder& order, const PhasePoint& p);
/// |d~ phi| / (1 + ||t| - |x+v^t||).
double dtilde_phi_ratio(const PhasePoint& p);
/// |d~| / (1 + ||t| - |x+v^t||).
double dtilde_cone_ratio(const PhasePoint& p);

using VectorField = std::function<Vec3d(double, const Vec3d&)>;
double div_v_force_residual(const VectorField& E, const VectorField& B, double t, const Vec3d& x,
                            const Vec3d& v);

class RoundoffDominated : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// [A, B] f = A(B f) - B(A f), outer derivatives by 4th-order centered differences.
double commutator_fd(const DifferentialOperator& A, const DifferentialOperator& B,
                     const TestFunction& f, const PhasePoint& p, double h);

/// One finite-difference level of [d_t + v^.grad_x, op] f - lambda (d_t + v^.grad_x) f.
double transport_commutator_fd(const DifferentialOperator& op, const TestFunction& f,
                               const PhasePoint& p, double h);

struct ConvergenceStudy {
  std::array<double, 3> steps{};
  std::array<double, 3> residuals{};
  double order = 0.0;
  double extrapolated = 0.0;
  double roundoff_level = 0.0;
  bool at_roundoff = false;
};

inline constexpr double kDefaultCommutatorStep = 0.02;

/// Levels h, h/2, h/4; throws RoundoffDominated when the sequence is noise.
ConvergenceStudy transport_commutator_study(const DifferentialOperator& op, const TestFunction& f,
                                            const PhasePoint& p,
                                            double h = kDefaultCommutatorStep,
                                            double tolerance = 1e-8);

double transport_commutator_residual(const DifferentialOperator& op, const TestFunction& f,
                                     const PhasePoint& p, double h = kDefaultCommutatorStep);

}  // namespace rvm
