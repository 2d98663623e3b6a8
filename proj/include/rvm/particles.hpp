#pragma once

#include "rvm/spectral.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <utility>

namespace rvm {

/// Macro-particles: positions in [0,L)^3, momenta, weights, and the sampled f value
/// carried along each characteristic (optional, empty when unknown).
struct ParticleEnsemble {
  double L = 0.0;
  double time = 0.0;
  Eigen::Matrix3Xd x;
  Eigen::Matrix3Xd v;
  Eigen::VectorXd w;
  Eigen::VectorXd f;

  Eigen::Index size() const { return w.size(); }
  double total_charge() const { return w.sum(); }
  /// Sum_p w sqrt(1+|v_p|^2).
  double kinetic_energy() const;
  void wrap();
};

/// Cloud-in-cell only.
struct DepositionScheme {
  int shape_order = 1;
  bool charge_conserving = true;
};

/// f0(x,v) = eps exp(-|x-xc|^2/sx^2 - |v-u|^2/sv^2).
struct GaussianData {
  double epsilon = 1e-3;
  Vec3d center = Vec3d::Zero();
  double sigma_x = 1.0;
  double sigma_v = 1.0;
  Vec3d drift = Vec3d::Zero();

  double value(const Vec3d& x, const Vec3d& v) const;
  /// int f0 dx dv.
  double mass() const;
};

/// Sobol points with a seeded Cranley-Patterson shift, mapped through the normal quantile.
ParticleEnsemble sample_ensemble(const GaussianData& f0, std::int64_t count, double L,
                                 std::uint64_t seed);

/// Boris: half kick, exact rotation about B by dt|B|/sqrt(1+|v|^2), half kick.
void push_momentum(ParticleEnsemble& ens, const Eigen::Matrix3Xd& E, const Eigen::Matrix3Xd& B,
                   double dt);

/// x += v^ dt, wrapped into [0,L)^3.
void push_position(ParticleEnsemble& ens, double dt);

/// sum_p weights_p W(x - x_p) / dx^3 with trilinear W.
ScalarGrid deposit_weights(const ParticleEnsemble& ens, const Eigen::VectorXd& weights,
                           const Grid3& g, int workers = 1);

/// rho = 4 pi sum w W / dx^3 with trilinear W; private grids per worker, summed in order.
ScalarGrid deposit_charge(const ParticleEnsemble& ens, const Grid3& g, int workers = 1);

/// j = 4 pi sum w u W / dx^3 with per-particle velocities u.
VectorGrid deposit_current(const ParticleEnsemble& ens, const Eigen::Matrix3Xd& velocity,
                           const Grid3& g, int workers = 1);

/// Charge and current v^ at the current positions.
SourceDensity deposit(const ParticleEnsemble& ens, const DepositionScheme& scheme, const Grid3& g,
                      int workers = 1);

/// Trilinear gather of E and B at particle positions.
std::pair<Eigen::Matrix3Xd, Eigen::Matrix3Xd> interpolate_fields(const FieldState& state,
                                                                 const ParticleEnsemble& ens);

class QuadratureFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exact free-transport moments of Gaussian data: nested adaptive quadrature over the
/// velocity ball in spherical coordinates.
/// With cic_width > 0 the spatial factor is averaged against the CIC tent of that width,
/// which is the expectation of a deposited node value.
struct TransportMoment {
  double density = 0.0;
  Vec3d gradient = Vec3d::Zero();
  double error = 0.0;
};

TransportMoment free_transport_moment(const GaussianData& f0, double t, const Vec3d& x,
                                      double cic_width = 0.0, double tolerance = 1e-8);

/// int f0(x - v^ t, v) dv.
double free_transport_density(const GaussianData& f0, double t, const Vec3d& x);

}  // namespace rvm
