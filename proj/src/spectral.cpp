#include "rvm/spectral.hpp"

#include "rvm/particles.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>

namespace rvm {

namespace {

constexpr cd kI(0.0, 1.0);

std::mutex& planner_mutex()
{
  static std::mutex m;
  return m;
}

// FFTW plans for one n with their own aligned buffers.
class FftPlan {
 public:
  explicit FftPlan(int n) : size_(std::size_t(n) * n * n)
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    buffer_ = fftw_alloc_complex(size_);
    forward_ = fftw_plan_dft_3d(n, n, n, buffer_, buffer_, FFTW_FORWARD, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_3d(n, n, n, buffer_, buffer_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
  ~FftPlan()
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
    fftw_free(buffer_);
  }

  template <typename Load>
  SpectralGrid run(bool forward, Load&& load, double scale)
  {
    auto* data = reinterpret_cast<cd*>(buffer_);
    load(data);
    fftw_execute(forward ? forward_ : backward_);
    SpectralGrid out(size_);
    for (std::size_t i = 0; i < size_; ++i) out(i) = data[i] * scale;
    return out;
  }

 private:
  std::size_t size_;
  fftw_complex* buffer_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

FftPlan& plan_for(int n)
{
  thread_local std::map<int, std::unique_ptr<FftPlan>> plans;
  auto& p = plans[n];
  if (!p) p = std::make_unique<FftPlan>(n);
  return *p;
}

void check_size(const Grid3& g, Eigen::Index size)
{
  if (std::size_t(size) != g.size()) throw std::invalid_argument("grid array has the wrong size");
}

Vec3cd at(const SpectralVector& F, std::size_t idx)
{
  return Vec3cd(F[0](idx), F[1](idx), F[2](idx));
}

void put(SpectralVector& F, std::size_t idx, const Vec3cd& value)
{
  for (int c = 0; c < 3; ++c) F[c](idx) = value(c);
}

SpectralVector zero_spectral(const Grid3& g)
{
  SpectralVector F;
  for (auto& c : F) c = SpectralGrid::Zero(g.size());
  return F;
}

}  // namespace

Grid3::Grid3(int n_, double L_) : n(n_), L(L_)
{
  if (n < 2 || (n & (n - 1)) != 0) throw std::invalid_argument("grid size must be a power of two");
  if (!(L > 0.0)) throw std::invalid_argument("box length must be positive");
}

std::size_t Grid3::index(int i, int j, int k) const
{
  auto wrap = [this](int a) { return ((a % n) + n) % n; };
  return std::size_t(wrap(i)) + std::size_t(n) * (std::size_t(wrap(j)) + std::size_t(n) * wrap(k));
}

Vec3i Grid3::cell(std::size_t idx) const
{
  const int i = int(idx % n);
  const int j = int((idx / n) % n);
  const int k = int(idx / (std::size_t(n) * n));
  return {i, j, k};
}

Vec3i Grid3::modes(std::size_t idx) const
{
  const Vec3i c = cell(idx);
  return {mode(c(0)), mode(c(1)), mode(c(2))};
}

Vec3d Grid3::wavevector(std::size_t idx) const
{
  return modes(idx).cast<double>() * dxi();
}

Vec3d Grid3::node(std::size_t idx) const
{
  return cell(idx).cast<double>() * dx();
}

bool Grid3::nyquist(std::size_t idx) const
{
  const Vec3i c = cell(idx);
  return c(0) == n / 2 || c(1) == n / 2 || c(2) == n / 2;
}

std::size_t Grid3::negated(std::size_t idx) const
{
  const Vec3i c = cell(idx);
  return index(-c(0), -c(1), -c(2));
}

std::shared_ptr<const SpectralLattice> spectral_lattice(const Grid3& g)
{
  static std::mutex m;
  static std::map<std::pair<int, double>, std::shared_ptr<const SpectralLattice>> cache;
  std::lock_guard<std::mutex> lock(m);
  auto& slot = cache[{g.n, g.L}];
  if (!slot) {
    auto lat = std::make_shared<SpectralLattice>();
    for (auto& c : lat->xi) c.resize(g.size());
    lat->norm.resize(g.size());
    lat->nyquist.resize(g.size());
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
      const Vec3d xi = g.wavevector(idx);
      for (int c = 0; c < 3; ++c) lat->xi[c](idx) = xi(c);
      lat->norm(idx) = xi.norm();
      lat->nyquist(idx) = g.nyquist(idx);
    }
    slot = lat;
  }
  return slot;
}

SpectralGrid fft_forward(const Grid3& g, const ScalarGrid& f)
{
  check_size(g, f.size());
  const double dx = g.dx();
  return plan_for(g.n).run(
      true,
      [&](cd* data) {
        for (std::size_t i = 0; i < g.size(); ++i) data[i] = f(i);
      },
      dx * dx * dx);
}

SpectralGrid fft_forward(const Grid3& g, const SpectralGrid& f)
{
  check_size(g, f.size());
  const double dx = g.dx();
  return plan_for(g.n).run(
      true, [&](cd* data) { std::copy(f.data(), f.data() + g.size(), data); }, dx * dx * dx);
}

SpectralGrid fft_inverse(const Grid3& g, const SpectralGrid& F)
{
  check_size(g, F.size());
  return plan_for(g.n).run(
      false, [&](cd* data) { std::copy(F.data(), F.data() + g.size(), data); },
      1.0 / (g.L * g.L * g.L));
}

ScalarGrid fft_inverse_real(const Grid3& g, const SpectralGrid& F)
{
  return fft_inverse(g, F).real();
}

SpectralVector fft_forward(const Grid3& g, const VectorGrid& f)
{
  return {fft_forward(g, f[0]), fft_forward(g, f[1]), fft_forward(g, f[2])};
}

VectorGrid fft_inverse_real(const Grid3& g, const SpectralVector& F)
{
  return {fft_inverse_real(g, F[0]), fft_inverse_real(g, F[1]), fft_inverse_real(g, F[2])};
}

void zero_nyquist(const Grid3& g, SpectralGrid& F)
{
  const auto lat = spectral_lattice(g);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (lat->nyquist(i)) F(i) = 0.0;
}

void zero_nyquist(const Grid3& g, SpectralVector& F)
{
  for (auto& c : F) zero_nyquist(g, c);
}

FieldState::FieldState(const Grid3& g, double t) : time(t), grid_(g)
{
  for (int c = 0; c < 3; ++c) {
    E_[c] = ScalarGrid::Zero(g.size());
    B_[c] = ScalarGrid::Zero(g.size());
    E_hat_[c] = SpectralGrid::Zero(g.size());
    B_hat_[c] = SpectralGrid::Zero(g.size());
  }
}

void FieldState::ensure_real() const
{
  if (real_valid_) return;
  E_ = fft_inverse_real(grid_, E_hat_);
  B_ = fft_inverse_real(grid_, B_hat_);
  real_valid_ = true;
}

void FieldState::ensure_spectral() const
{
  if (spectral_valid_) return;
  E_hat_ = fft_forward(grid_, E_);
  B_hat_ = fft_forward(grid_, B_);
  spectral_valid_ = true;
}

const VectorGrid& FieldState::E() const
{
  ensure_real();
  return E_;
}

const VectorGrid& FieldState::B() const
{
  ensure_real();
  return B_;
}

const SpectralVector& FieldState::E_hat() const
{
  ensure_spectral();
  return E_hat_;
}

const SpectralVector& FieldState::B_hat() const
{
  ensure_spectral();
  return B_hat_;
}

void FieldState::set_real(VectorGrid E, VectorGrid B)
{
  for (int c = 0; c < 3; ++c) {
    check_size(grid_, E[c].size());
    check_size(grid_, B[c].size());
  }
  E_ = std::move(E);
  B_ = std::move(B);
  real_valid_ = true;
  spectral_valid_ = false;
}

void FieldState::set_spectral(SpectralVector E_hat, SpectralVector B_hat)
{
  for (int c = 0; c < 3; ++c) {
    check_size(grid_, E_hat[c].size());
    check_size(grid_, B_hat[c].size());
  }
  E_hat_ = std::move(E_hat);
  B_hat_ = std::move(B_hat);
  spectral_valid_ = true;
  real_valid_ = false;
}

SourceDensity SourceDensity::zero(const Grid3& g)
{
  SourceDensity s;
  s.grid = g;
  s.rho = ScalarGrid::Zero(g.size());
  for (auto& c : s.j) c = ScalarGrid::Zero(g.size());
  return s;
}

void propagate_free(FieldState& state, double dt)
{
  const Grid3& g = state.grid();
  const auto lat = spectral_lattice(g);
  SpectralVector E = state.E_hat();
  SpectralVector B = state.B_hat();
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    if (lat->nyquist(idx)) {
      put(E, idx, Vec3cd::Zero());
      put(B, idx, Vec3cd::Zero());
      continue;
    }
    const double k = lat->norm(idx);
    if (k == 0.0) continue;
    const Vec3cd nh(lat->xi[0](idx) / k, lat->xi[1](idx) / k, lat->xi[2](idx) / k);
    const Vec3cd e = at(E, idx), b = at(B, idx);
    const Vec3cd eL = nh * nh.dot(e);
    const Vec3cd bL = nh * nh.dot(b);
    const Vec3cd eT = e - eL, bT = b - bL;
    const double c = std::cos(k * dt), s = std::sin(k * dt);
    put(E, idx, eL + c * eT + s * kI * cross(nh, bT));
    put(B, idx, bL + c * bT - s * kI * cross(nh, eT));
  }
  state.set_spectral(std::move(E), std::move(B));
  state.time += dt;
}

void apply_sources(FieldState& state, const SourceDensity& src, double dt)
{
  const Grid3& g = state.grid();
  if (!(src.grid == g)) throw std::invalid_argument("source grid does not match the field grid");
  if (std::abs(dt) > g.dx())
    throw std::invalid_argument("CFL violation: |dt| exceeds the grid spacing");
  SpectralVector J = fft_forward(g, src.j);
  zero_nyquist(g, J);
  SpectralVector E = state.E_hat();
  for (int c = 0; c < 3; ++c) E[c] -= dt * J[c];
  SpectralVector B = state.B_hat();
  state.set_spectral(std::move(E), std::move(B));
}

void strang_step(FieldState& state, const SourceDensity& src_mid, double dt)
{
  propagate_free(state, 0.5 * dt);
  apply_sources(state, src_mid, dt);
  propagate_free(state, 0.5 * dt);
}

void enforce_continuity(SourceDensity& mid, const ScalarGrid& rho_old, const ScalarGrid& rho_new,
                        double dt)
{
  const Grid3& g = mid.grid;
  const auto lat = spectral_lattice(g);
  SpectralVector J = fft_forward(g, mid.j);
  const SpectralGrid drho = fft_forward(g, ScalarGrid(rho_new - rho_old));
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    if (lat->nyquist(idx)) {
      put(J, idx, Vec3cd::Zero());
      continue;
    }
    const double k2 = lat->norm(idx) * lat->norm(idx);
    if (k2 == 0.0) continue;
    const Vec3cd xi(lat->xi[0](idx), lat->xi[1](idx), lat->xi[2](idx));
    const Vec3cd j = at(J, idx);
    const Vec3cd jT = j - xi * (xi.dot(j) / k2);
    put(J, idx, jT + kI * xi * drho(idx) / (dt * k2));
  }
  mid.j = fft_inverse_real(g, J);
}

void add_coulomb_field(FieldState& state, const ScalarGrid& rho)
{
  const Grid3& g = state.grid();
  const auto lat = spectral_lattice(g);
  const SpectralGrid R = fft_forward(g, rho);
  SpectralVector E = state.E_hat();
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const double k2 = lat->norm(idx) * lat->norm(idx);
    if (k2 == 0.0 || lat->nyquist(idx)) continue;
    for (int c = 0; c < 3; ++c) E[c](idx) += -kI * lat->xi[c](idx) * R(idx) / k2;
  }
  SpectralVector B = state.B_hat();
  state.set_spectral(std::move(E), std::move(B));
}

HalfWaveProfile extract_profiles(const FieldState& state, const SourceDensity* src)
{
  const Grid3& g = state.grid();
  const auto lat = spectral_lattice(g);
  const SpectralVector& E = state.E_hat();
  const SpectralVector& B = state.B_hat();
  SpectralVector J = zero_spectral(g);
  if (src) J = fft_forward(g, src->j);
  HalfWaveProfile p;
  p.grid = g;
  p.t = state.time;
  p.h1 = zero_spectral(g);
  p.h2 = zero_spectral(g);
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const double k = lat->norm(idx);
    if (k == 0.0 || lat->nyquist(idx)) continue;
    const Vec3cd xi(lat->xi[0](idx), lat->xi[1](idx), lat->xi[2](idx));
    const Vec3cd e = at(E, idx), b = at(B, idx);
    const Vec3cd dE = kI * cross(xi, b) - at(J, idx);
    const Vec3cd dB = -kI * cross(xi, e);
    const cd phase = std::exp(kI * (state.time * k));
    put(p.h1, idx, phase * (dE - kI * k * e) / k);
    put(p.h2, idx, phase * (dB - kI * k * b) / k);
  }
  return p;
}

FieldState reconstruct(const HalfWaveProfile& profile)
{
  const Grid3& g = profile.grid;
  const auto lat = spectral_lattice(g);
  SpectralVector E = zero_spectral(g), B = zero_spectral(g);
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const double k = lat->norm(idx);
    if (k == 0.0 || lat->nyquist(idx)) continue;
    const std::size_t neg = g.negated(idx);
    const cd phase = std::exp(-kI * (profile.t * k));
    for (int c = 0; c < 3; ++c) {
      const cd u1 = phase * profile.h1[c](idx), u1n = phase * profile.h1[c](neg);
      const cd u2 = phase * profile.h2[c](idx), u2n = phase * profile.h2[c](neg);
      E[c](idx) = (-u1 + std::conj(u1n)) / (2.0 * kI);
      B[c](idx) = (-u2 + std::conj(u2n)) / (2.0 * kI);
    }
  }
  FieldState s(g, profile.t);
  s.set_spectral(std::move(E), std::move(B));
  return s;
}

ThinnedProfile thin_profile(const HalfWaveProfile& profile, int max_mode)
{
  const Grid3& g = profile.grid;
  if (max_mode < 1 || max_mode >= g.n / 2)
    throw std::invalid_argument("thinned lattice must satisfy 1 <= max_mode < n/2");
  ThinnedProfile out;
  out.t = profile.t;
  for (int k = -max_mode; k <= max_mode; ++k)
    for (int j = -max_mode; j <= max_mode; ++j)
      for (int i = -max_mode; i <= max_mode; ++i) {
        if (i == 0 && j == 0 && k == 0) continue;
        const std::size_t idx = g.index(i, j, k);
        out.modes.emplace_back(i, j, k);
        out.xi.push_back(g.wavevector(idx));
        out.h1.push_back(at(profile.h1, idx));
        out.h2.push_back(at(profile.h2, idx));
      }
  return out;
}

ThinnedProfile modified_profile_correction_zero_order(const ThinnedProfile& profile,
                                                      const ParticleEnsemble& ensemble)
{
  ThinnedProfile out = profile;
  const double t = profile.t;
  const Eigen::Index np = ensemble.size();
  for (std::size_t m = 0; m < profile.xi.size(); ++m) {
    const Vec3d& xi = profile.xi[m];
    const double k = xi.norm();
    Vec3cd c1 = Vec3cd::Zero(), c2 = Vec3cd::Zero();
    for (Eigen::Index p = 0; p < np; ++p) {
      const Vec3d v = ensemble.v.col(p);
      const Vec3d vh = hat_v(v);
      const double phase_gap = k - vh.dot(xi);
      const cd e = ensemble.w(p) * std::exp(kI * (t * k - xi.dot(ensemble.x.col(p))));
      const double denom = k * phase_gap;
      const Vec3d a1 = 4.0 * kPi * (vh * vh.dot(xi) - xi);
      const Vec3d a2 = -4.0 * kPi * vh.cross(xi);
      c1 += e * (a1 / denom).cast<cd>();
      c2 += e * (a2 / denom).cast<cd>();
    }
    out.h1[m] = profile.h1[m] - c1;
    out.h2[m] = profile.h2[m] - c2;
  }
  return out;
}

namespace {

// Norm of the n-th centered-difference tensor of h at lattice cell c.
double difference_tensor_norm(const Grid3& g, const SpectralVector& h, const Vec3i& c, int n)
{
  if (n == 0) return at(h, g.index(c(0), c(1), c(2))).norm();
  const double dxi = g.dxi();
  const double scale = std::pow(2.0 * dxi, -n);
  double total = 0.0;
  int axes_count = 1;
  for (int q = 0; q < n; ++q) axes_count *= 3;
  for (int axes = 0; axes < axes_count; ++axes) {
    Vec3cd acc = Vec3cd::Zero();
    for (int signs = 0; signs < (1 << n); ++signs) {
      Vec3i off = c;
      int a = axes;
      double sign = 1.0;
      for (int q = 0; q < n; ++q) {
        const int s = (signs >> q) & 1 ? 1 : -1;
        off(a % 3) += s;
        sign *= s;
        a /= 3;
      }
      acc += sign * at(h, g.index(off(0), off(1), off(2)));
    }
    total += (acc * scale).squaredNorm();
  }
  return std::sqrt(total);
}

}  // namespace

double xn_norm(const Grid3& g, const SpectralVector& h, int n)
{
  if (n < 0 || n > 3) throw std::invalid_argument("X_n norm needs 0 <= n <= 3");
  const int reach = g.n / 2 - 1 - n;
  std::map<int, std::pair<int, double>> shells;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const Vec3i m = g.modes(idx);
    if (m.cwiseAbs().maxCoeff() > reach || m.isZero()) continue;
    const double k = m.cast<double>().norm() * g.dxi();
    const int shell = int(std::floor(std::log2(k) + 0.5));
    auto& s = shells[shell];
    s.first += 1;
    s.second = std::max(s.second, difference_tensor_norm(g, h, m, n));
  }
  double out = 0.0;
  for (const auto& [k, s] : shells) {
    if (s.first < 8) continue;
    out = std::max(out, std::ldexp(1.0, (n + 1) * k) * s.second);
  }
  return out;
}

double gauss_residual(const FieldState& state, const ScalarGrid& rho)
{
  const Grid3& g = state.grid();
  const auto lat = spectral_lattice(g);
  const SpectralGrid R = fft_forward(g, rho);
  const SpectralVector& E = state.E_hat();
  double num = 0.0, den = 0.0;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    if (lat->norm(idx) == 0.0 || lat->nyquist(idx)) continue;
    cd div = 0.0;
    for (int c = 0; c < 3; ++c) div += kI * lat->xi[c](idx) * E[c](idx);
    num += std::norm(div - R(idx));
    den += std::norm(R(idx));
  }
  return std::sqrt(num) / std::max(std::sqrt(den), std::numeric_limits<double>::min());
}

double divergence_B_residual(const FieldState& state)
{
  const Grid3& g = state.grid();
  const auto lat = spectral_lattice(g);
  const SpectralVector& B = state.B_hat();
  double num = 0.0, den = 0.0;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    if (lat->nyquist(idx)) continue;
    cd div = 0.0;
    double mag = 0.0;
    for (int c = 0; c < 3; ++c) {
      div += lat->xi[c](idx) * B[c](idx);
      mag += std::norm(B[c](idx));
    }
    num += std::norm(div);
    den += lat->norm(idx) * lat->norm(idx) * mag;
  }
  return std::sqrt(num) / std::max(std::sqrt(den), std::numeric_limits<double>::min());
}

double field_energy(const FieldState& state)
{
  const Grid3& g = state.grid();
  double sum = 0.0;
  for (int c = 0; c < 3; ++c) sum += state.E()[c].square().sum() + state.B()[c].square().sum();
  const double dx = g.dx();
  return sum * dx * dx * dx / (8.0 * kPi);
}

ScalarGrid spectral_derivative(const Grid3& g, const ScalarGrid& f, int axis)
{
  if (axis < 0 || axis > 2) throw std::invalid_argument("axis must be 0, 1 or 2");
  const auto lat = spectral_lattice(g);
  SpectralGrid F = fft_forward(g, f);
  F *= kI * lat->xi[axis].cast<cd>();
  zero_nyquist(g, F);
  return fft_inverse_real(g, F);
}

}  // namespace rvm
