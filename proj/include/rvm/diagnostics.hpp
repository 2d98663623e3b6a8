#pragma once

#include "rvm/geometry.hpp"
#include "rvm/particles.hpp"
#include "rvm/spectral.hpp"

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvm {

class FitError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Samples of one observable; times strictly increasing.
struct DecaySeries {
  std::string observable;
  std::vector<double> times;
  std::vector<double> values;

  void push(double t, double value);
  std::size_t size() const { return times.size(); }
};

struct DecayFit {
  double exponent = 0.0;
  double standard_error = 0.0;
  double intercept = 0.0;
  double window_begin = 0.0;
  double window_end = 0.0;
  int samples = 0;
  /// Largest |log value - fitted line| over the window.
  double max_residual = 0.0;
};

inline constexpr int kMinFitSamples = 8;

/// Least squares on (log t, log value) over samples with t in [t_begin, t_end].
/// Throws FitError on fewer than 8 samples or a nonpositive value inside the window.
DecayFit fit_decay_exponent(const DecaySeries& series, double t_begin, double t_end);

/// Largest exponent shift when the window is cut by 25% of its length at either end.
double window_sensitivity(const DecaySeries& series, double t_begin, double t_end);

/// Sample points x = origin + (t - delta) n with delta = offset + fraction t.
struct ConeSampler {
  Vec3d origin = Vec3d::Zero();
  std::vector<Vec3d> directions;
  std::vector<double> offsets;
  double fraction = 0.0;
  /// Trilinear instead of exact trigonometric interpolation along grid lines.
  bool trilinear = false;

  /// The six coordinate directions, offsets -band..band in steps of `step`.
  static ConeSampler on_cone(const Vec3d& origin, double band, double step);
  /// The six coordinate directions at |x - origin| = (1 - fraction) t - offset.
  static ConeSampler interior(const Vec3d& origin, double fraction, double offset = 0.0);

  double delta(double offset, double t) const { return offset + fraction * t; }
};

/// A sample is usable while no periodic image of data of radius R can reach it and it stays
/// inside the fundamental cell: r + t < L - R and r < L/2 - dx.
bool cone_sample_valid(const Grid3& g, double radius, double t, double data_radius);

struct ConeSample {
  /// Per offset: max over directions of |E| + |B|; missing when every direction was invalid.
  std::map<double, double> by_offset;
  int skipped = 0;

  double max() const;
};

ConeSample sample_field(const FieldState& state, const ConeSampler& sampler, double data_radius);

/// |E| + |B| at a point by trigonometric interpolation when the point lies on a grid line
/// through a node, trilinear otherwise.
double field_magnitude_at(const FieldState& state, const Vec3d& x, bool trilinear = false);

/// One series per offset from a sequence of snapshots.
std::map<double, DecaySeries> sample_field_decay(const std::vector<FieldState>& snapshots,
                                                 const ConeSampler& sampler, double data_radius,
                                                 std::vector<std::string>* warnings = nullptr);

/// |int grad^alpha |f|^p dv|^{1/p} at a node, from the ensemble: weights w f^{p-1} deposited by
/// CIC, derivative by centered differences along `axis`.
struct DensityMoment {
  int alpha = 0;
  int p = 1;
  int axis = 0;
};

double density_moment(const ParticleEnsemble& ens, const Grid3& g, const DensityMoment& m,
                      const Vec3d& point, int workers = 1);

/// Same observable on snapshots of an ensemble.
DecaySeries density_moment_series(const std::vector<ParticleEnsemble>& snapshots, const Grid3& g,
                                  const DensityMoment& m, const Vec3d& point);

struct EnergySurrogates {
  /// sum over i = 1,2 and n = 0,1 of X_n(h_i).
  double low_eb = 0.0;
  /// sum over i of ||h_i||_2 + || |xi| h_i ||_2 (Parseval, L^-3 sum over modes).
  double high_eb = 0.0;
  /// log sum_p w omega^2 f_p with the order-zero desk weight about `center`; 0 when there are
  /// no particles.
  double log_weighted_l2_f = 0.0;
};

EnergySurrogates energy_surrogates(const HalfWaveProfile& profile, const ParticleEnsemble* ens,
                                   const Vec3d& center);

/// Running maxima of the four monitors.
struct ConservationReport {
  double charge_drift = 0.0;
  double energy_drift = 0.0;
  double gauss_max = 0.0;
  double divB_max = 0.0;

  double charge0 = 0.0;
  double energy0 = 0.0;
  bool started = false;

  /// charge = sum w, energy = field + particle energy.
  void observe(double charge, double energy, double gauss, double divB);
};

/// Field energy plus sum_p w sqrt(1 + |v_p|^2).
double total_energy(const FieldState& state, const ParticleEnsemble* ens);

/// CSV rows `t,observable,value`.
void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, double t, const std::string& observable, double value);
std::map<std::string, DecaySeries> read_csv(std::istream& in);

/// Flat key = value report.
std::string format_fit(const DecayFit& fit, const std::string& observable);

}  // namespace rvm
