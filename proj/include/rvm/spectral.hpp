#pragma once

#include "rvm/geometry.hpp"

#include <Eigen/Core>

#include <array>
#include <complex>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace rvm {

using cd = std::complex<double>;
using Vec3cd = Eigen::Matrix<cd, 3, 1>;
using Vec3i = Eigen::Vector3i;
using ScalarGrid = Eigen::ArrayXd;
using SpectralGrid = Eigen::ArrayXcd;
using VectorGrid = std::array<ScalarGrid, 3>;
using SpectralVector = std::array<SpectralGrid, 3>;

/// a x b for complex vectors. Eigen's vectorized cross conjugates complex operands.
inline Vec3cd cross(const Vec3cd& a, const Vec3cd& b)
{
  return Vec3cd(a(1) * b(2) - a(2) * b(1), a(2) * b(0) - a(0) * b(2), a(0) * b(1) - a(1) * b(0));
}

/// Periodic n^3 box of side L; flat index i + n(j + n k), x1 fastest.
struct Grid3 {
  int n = 0;
  double L = 0.0;

  Grid3() = default;
  Grid3(int n, double L);

  double dx() const { return L / n; }
  double dxi() const { return 2.0 * kPi / L; }
  std::size_t size() const { return std::size_t(n) * n * n; }
  std::size_t index(int i, int j, int k) const;
  Vec3i cell(std::size_t idx) const;
  /// Signed lattice index in (-n/2, n/2].
  int mode(int i) const { return i <= n / 2 ? i : i - n; }
  Vec3i modes(std::size_t idx) const;
  Vec3d wavevector(std::size_t idx) const;
  Vec3d node(std::size_t idx) const;
  bool nyquist(std::size_t idx) const;
  /// Flat index of -xi.
  std::size_t negated(std::size_t idx) const;
  bool operator==(const Grid3& o) const { return n == o.n && L == o.L; }
};

/// Wavevector components and |xi| for every lattice point.
struct SpectralLattice {
  std::array<ScalarGrid, 3> xi;
  ScalarGrid norm;
  Eigen::Array<bool, Eigen::Dynamic, 1> nyquist;
};

std::shared_ptr<const SpectralLattice> spectral_lattice(const Grid3& g);

/// Forward: dx^3 sum f e^{-i xi.x}; inverse: L^-3 sum F e^{i xi.x}.
SpectralGrid fft_forward(const Grid3& g, const ScalarGrid& f);
SpectralGrid fft_forward(const Grid3& g, const SpectralGrid& f);
SpectralGrid fft_inverse(const Grid3& g, const SpectralGrid& F);
ScalarGrid fft_inverse_real(const Grid3& g, const SpectralGrid& F);

SpectralVector fft_forward(const Grid3& g, const VectorGrid& f);
VectorGrid fft_inverse_real(const Grid3& g, const SpectralVector& F);

void zero_nyquist(const Grid3& g, SpectralGrid& F);
void zero_nyquist(const Grid3& g, SpectralVector& F);

/// Electromagnetic field on the box; real and spectral forms are converted on demand.
class FieldState {
 public:
  FieldState() = default;
  explicit FieldState(const Grid3& g, double t = 0.0);

  const Grid3& grid() const { return grid_; }
  double time = 0.0;

  const VectorGrid& E() const;
  const VectorGrid& B() const;
  const SpectralVector& E_hat() const;
  const SpectralVector& B_hat() const;

  void set_real(VectorGrid E, VectorGrid B);
  void set_spectral(SpectralVector E_hat, SpectralVector B_hat);

 private:
  void ensure_real() const;
  void ensure_spectral() const;

  Grid3 grid_;
  mutable VectorGrid E_, B_;
  mutable SpectralVector E_hat_, B_hat_;
  mutable bool real_valid_ = true;
  mutable bool spectral_valid_ = true;
};

/// rho = 4 pi int f dv and j = 4 pi int v^ f dv on the grid.
struct SourceDensity {
  Grid3 grid;
  ScalarGrid rho;
  VectorGrid j;

  static SourceDensity zero(const Grid3& g);
};

/// Exact vacuum Maxwell flow over dt: transverse modes rotate, longitudinal E and the
/// zero mode are held, Nyquist modes are zeroed. Advances state.time.
void propagate_free(FieldState& state, double dt);

/// E -= j dt. Throws std::invalid_argument when dt > dx.
void apply_sources(FieldState& state, const SourceDensity& src, double dt);

/// Half free flow, source kick, half free flow.
void strang_step(FieldState& state, const SourceDensity& src_mid, double dt);

/// Replaces the longitudinal part of j so that d_t rho + div j = 0 holds exactly:
/// j^_L = i xi (rho^_new - rho^_old) / (dt |xi|^2).
void enforce_continuity(SourceDensity& mid, const ScalarGrid& rho_old, const ScalarGrid& rho_new,
                        double dt);

/// E^ += -i xi rho^ / |xi|^2.
void add_coulomb_field(FieldState& state, const ScalarGrid& rho);

struct HalfWaveProfile {
  Grid3 grid;
  SpectralVector h1, h2;
  double t = 0.0;
};

/// h_i = e^{it|xi|} |xi|^-1 (d_t - i|xi|) F^_i with F_1 = E, F_2 = B; j enters d_t E.
HalfWaveProfile extract_profiles(const FieldState& state, const SourceDensity* src = nullptr);

/// Inverse of extract_profiles; the zero mode comes back as 0.
FieldState reconstruct(const HalfWaveProfile& profile);

struct ThinnedProfile {
  std::vector<Vec3i> modes;
  std::vector<Vec3d> xi;
  std::vector<Vec3cd> h1, h2;
  double t = 0.0;
};

/// Nonzero lattice modes with every |index| <= max_mode.
ThinnedProfile thin_profile(const HalfWaveProfile& profile, int max_mode);

struct ParticleEnsemble;

/// Zeroth-order modified profiles on the thinned lattice of `profile`:
/// h~ = h - sum_p w e^{it|xi| - i xi.x_p} a~(v) xi / (|xi| (|xi| - v^.xi)).
ThinnedProfile modified_profile_correction_zero_order(const ThinnedProfile& profile,
                                                      const ParticleEnsemble& ensemble);

/// sup_k 2^{(n+1)k} max_{shell k} |grad_xi^n h|, shells |xi| in [2^{k-1/2}, 2^{k+1/2}).
double xn_norm(const Grid3& g, const SpectralVector& h, int n);

/// ||i xi.E^ - rho^||_2 / max(||rho^||_2, eps) over nonzero modes.
double gauss_residual(const FieldState& state, const ScalarGrid& rho);
/// ||xi.B^||_2 / max(||xi|| B^||_2, eps).
double divergence_B_residual(const FieldState& state);
/// (1/8pi) int |E|^2 + |B|^2 dx.
double field_energy(const FieldState& state);

/// Spectral derivative d_{x_axis} of a real grid function.
ScalarGrid spectral_derivative(const Grid3& g, const ScalarGrid& f, int axis);

}  // namespace rvm
