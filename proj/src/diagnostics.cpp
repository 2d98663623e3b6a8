#include "rvm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace rvm {

void DecaySeries::push(double t, double value)
{
  if (!times.empty() && !(t > times.back()))
    throw std::invalid_argument("decay series times must increase strictly");
  times.push_back(t);
  values.push_back(value);
}

DecayFit fit_decay_exponent(const DecaySeries& series, double t_begin, double t_end)
{
  if (series.times.size() != series.values.size())
    throw FitError("decay series has mismatched columns");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double t = series.times[i];
    if (t < t_begin || t > t_end) continue;
    const double v = series.values[i];
    if (!(v > 0.0) || !std::isfinite(v))
      throw FitError("nonpositive value " + std::to_string(v) + " at t=" + std::to_string(t) +
                     " in series '" + series.observable + "'");
    if (!(t > 0.0)) throw FitError("fit window must lie in t > 0");
    x.push_back(std::log(t));
    y.push_back(std::log(v));
  }
  if (int(x.size()) < kMinFitSamples)
    throw FitError("window [" + std::to_string(t_begin) + ", " + std::to_string(t_end) +
                   "] holds " + std::to_string(x.size()) + " samples of '" + series.observable +
                   "', need " + std::to_string(kMinFitSamples));
  const Eigen::Map<const Eigen::ArrayXd> X(x.data(), Eigen::Index(x.size()));
  const Eigen::Map<const Eigen::ArrayXd> Y(y.data(), Eigen::Index(y.size()));
  const double xm = X.mean(), ym = Y.mean();
  const double sxx = (X - xm).square().sum();
  if (!(sxx > 0.0)) throw FitError("fit window spans a single time");
  DecayFit fit;
  fit.exponent = ((X - xm) * (Y - ym)).sum() / sxx;
  fit.intercept = ym - fit.exponent * xm;
  const Eigen::ArrayXd residual = Y - (fit.intercept + fit.exponent * X);
  fit.samples = int(x.size());
  fit.standard_error = std::sqrt(residual.square().sum() / (fit.samples - 2) / sxx);
  fit.max_residual = residual.abs().maxCoeff();
  fit.window_begin = t_begin;
  fit.window_end = t_end;
  return fit;
}

double window_sensitivity(const DecaySeries& series, double t_begin, double t_end)
{
  const double base = fit_decay_exponent(series, t_begin, t_end).exponent;
  const double cut = 0.25 * (t_end - t_begin);
  double worst = 0.0;
  bool any = false;
  for (const auto& [a, b] : {std::pair{t_begin + cut, t_end}, std::pair{t_begin, t_end - cut}}) {
    try {
      worst = std::max(worst, std::abs(fit_decay_exponent(series, a, b).exponent - base));
      any = true;
    } catch (const FitError&) {
    }
  }
  if (!any) throw FitError("shrunken windows hold too few samples");
  return worst;
}

namespace {

std::vector<Vec3d> axis_directions()
{
  return {Vec3d::UnitX(), -Vec3d::UnitX(), Vec3d::UnitY(),
          -Vec3d::UnitY(), Vec3d::UnitZ(), -Vec3d::UnitZ()};
}

// Component c of E (c < 3) or B (c >= 3).
const ScalarGrid& component(const FieldState& s, int c) { return c < 3 ? s.E()[c] : s.B()[c - 3]; }

double wrap(double u, double L) { return u - L * std::floor(u / L); }

// Trigonometric interpolation of the n samples of a grid line at fractional index u.
double line_interpolate(const Eigen::ArrayXd& line, double u)
{
  const int n = int(line.size());
  double out = 0.0;
  for (int k = -n / 2 + 1; k < n / 2; ++k) {
    cd c = 0.0;
    for (int m = 0; m < n; ++m) c += line(m) * std::polar(1.0, -2.0 * kPi * k * m / n);
    out += (c * std::polar(1.0, 2.0 * kPi * k * u / n)).real();
  }
  return out / n;
}

double trilinear_at(const FieldState& s, int c, const Vec3d& x)
{
  const Grid3& g = s.grid();
  const ScalarGrid& f = component(s, c);
  int base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double u = wrap(x(a), g.L) / g.dx();
    base[a] = int(std::floor(u));
    frac[a] = u - base[a];
  }
  double out = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      const int up = (corner >> a) & 1;
      w *= up ? frac[a] : 1.0 - frac[a];
      idx[a] = base[a] + up;
    }
    out += w * f(g.index(idx[0], idx[1], idx[2]));
  }
  return out;
}

}  // namespace

ConeSampler ConeSampler::on_cone(const Vec3d& origin, double band, double step)
{
  if (!(step > 0.0) || band < 0.0) throw std::invalid_argument("cone band needs step > 0");
  ConeSampler s;
  s.origin = origin;
  s.directions = axis_directions();
  const int k = int(std::floor(band / step + 1e-9));
  for (int i = -k; i <= k; ++i) s.offsets.push_back(i * step);
  return s;
}

ConeSampler ConeSampler::interior(const Vec3d& origin, double fraction, double offset)
{
  if (!(fraction >= 0.0 && fraction < 1.0)) throw std::invalid_argument("fraction in [0, 1)");
  ConeSampler s;
  s.origin = origin;
  s.directions = axis_directions();
  s.offsets = {offset};
  s.fraction = fraction;
  return s;
}

bool cone_sample_valid(const Grid3& g, double radius, double t, double data_radius)
{
  return radius >= 0.0 && radius + t < g.L - data_radius && radius < 0.5 * g.L - g.dx();
}

double ConeSample::max() const
{
  double m = 0.0;
  for (const auto& [o, v] : by_offset) m = std::max(m, v);
  return m;
}

double field_magnitude_at(const FieldState& state, const Vec3d& x, bool trilinear)
{
  const Grid3& g = state.grid();
  std::array<double, 6> comp{};
  int line_axis = -1;
  Vec3i node = Vec3i::Zero();
  if (!trilinear) {
    int on_node = 0, free_axis = 0;
    for (int a = 0; a < 3; ++a) {
      const double u = wrap(x(a), g.L) / g.dx();
      const double r = std::round(u);
      if (std::abs(u - r) < 1e-9) {
        ++on_node;
        node(a) = int(r);
      } else {
        free_axis = a;
      }
    }
    if (on_node >= 2) line_axis = on_node == 3 ? 0 : free_axis;
  }
  if (line_axis < 0) {
    for (int c = 0; c < 6; ++c) comp[c] = trilinear_at(state, c, x);
  } else {
    const double u = wrap(x(line_axis), g.L) / g.dx();
    Eigen::ArrayXd line(g.n);
    for (int c = 0; c < 6; ++c) {
      const ScalarGrid& f = component(state, c);
      for (int m = 0; m < g.n; ++m) {
        Vec3i p = node;
        p(line_axis) = m;
        line(m) = f(g.index(p(0), p(1), p(2)));
      }
      comp[c] = line_interpolate(line, u);
    }
  }
  return Vec3d(comp[0], comp[1], comp[2]).norm() + Vec3d(comp[3], comp[4], comp[5]).norm();
}

ConeSample sample_field(const FieldState& state, const ConeSampler& sampler, double data_radius)
{
  const Grid3& g = state.grid();
  const double t = state.time;
  ConeSample out;
  for (double offset : sampler.offsets) {
    const double r = t - sampler.delta(offset, t);
    if (!cone_sample_valid(g, r, t, data_radius)) {
      out.skipped += int(sampler.directions.size());
      continue;
    }
    double best = 0.0;
    for (const Vec3d& n : sampler.directions)
      best = std::max(best, field_magnitude_at(state, sampler.origin + r * n, sampler.trilinear));
    out.by_offset[offset] = best;
  }
  return out;
}

std::map<double, DecaySeries> sample_field_decay(const std::vector<FieldState>& snapshots,
                                                 const ConeSampler& sampler, double data_radius,
                                                 std::vector<std::string>* warnings)
{
  std::map<double, DecaySeries> out;
  for (const FieldState& s : snapshots) {
    const ConeSample c = sample_field(s, sampler, data_radius);
    if (c.skipped > 0 && warnings)
      warnings->push_back("t=" + std::to_string(s.time) + ": " + std::to_string(c.skipped) +
                          " samples outside the valid region");
    for (const auto& [offset, value] : c.by_offset) {
      auto& series = out[offset];
      series.observable = "field_offset_" + std::to_string(offset);
      series.push(s.time, value);
    }
  }
  return out;
}

double density_moment(const ParticleEnsemble& ens, const Grid3& g, const DensityMoment& m,
                      const Vec3d& point, int workers)
{
  if (m.alpha < 0 || m.alpha > 1) throw std::invalid_argument("density moment needs |alpha| <= 1");
  if (m.p < 1 || m.p > 2) throw std::invalid_argument("density moment needs p in {1, 2}");
  if (m.axis < 0 || m.axis > 2) throw std::invalid_argument("axis must be 0, 1 or 2");
  Eigen::VectorXd weights = ens.w;
  if (m.p > 1) {
    if (ens.f.size() != ens.size())
      throw std::invalid_argument("p > 1 needs the sampled f values of the ensemble");
    weights = weights.cwiseProduct(ens.f.cwiseAbs().array().pow(m.p - 1).matrix());
  }
  const ScalarGrid rho = deposit_weights(ens, weights, g, workers);
  Vec3i node;
  for (int a = 0; a < 3; ++a) node(a) = int(std::lround(wrap(point(a), g.L) / g.dx()));
  double value = 0.0;
  if (m.alpha == 0) {
    value = rho(g.index(node(0), node(1), node(2)));
  } else {
    Vec3i up = node, down = node;
    up(m.axis) += 1;
    down(m.axis) -= 1;
    value = (rho(g.index(up(0), up(1), up(2))) - rho(g.index(down(0), down(1), down(2)))) /
            (2.0 * g.dx());
  }
  return std::pow(std::abs(value), 1.0 / m.p);
}

DecaySeries density_moment_series(const std::vector<ParticleEnsemble>& snapshots, const Grid3& g,
                                  const DensityMoment& m, const Vec3d& point)
{
  DecaySeries s;
  s.observable = "density_alpha" + std::to_string(m.alpha) + "_p" + std::to_string(m.p);
  for (const auto& e : snapshots) s.push(e.time, density_moment(e, g, m, point));
  return s;
}

EnergySurrogates energy_surrogates(const HalfWaveProfile& profile, const ParticleEnsemble* ens,
                                   const Vec3d& center)
{
  const Grid3& g = profile.grid;
  const auto lat = spectral_lattice(g);
  EnergySurrogates out;
  const double volume = g.L * g.L * g.L;
  for (const SpectralVector* h : {&profile.h1, &profile.h2}) {
    out.low_eb += xn_norm(g, *h, 0) + xn_norm(g, *h, 1);
    double l2 = 0.0, h1 = 0.0;
    for (int c = 0; c < 3; ++c) {
      const Eigen::ArrayXd a = (*h)[c].abs2();
      l2 += a.sum();
      h1 += (a * lat->norm.square()).sum();
    }
    out.high_eb += std::sqrt(l2 / volume) + std::sqrt(h1 / volume);
  }
  if (ens && ens->size() > 0) {
    // log-sum-exp of log w + 2 log omega + log f.
    std::vector<double> terms;
    terms.reserve(std::size_t(ens->size()));
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index p = 0; p < ens->size(); ++p) {
      const double f = ens->f.size() == ens->size() ? ens->f(p) : 1.0;
      if (!(f > 0.0) || !(ens->w(p) > 0.0)) continue;
      const Vec3d x = ens->x.col(p) - center;
      const double lw = log_weight_omega<double>(WeightOrder{}, profile.t, x, ens->v.col(p));
      terms.push_back(std::log(ens->w(p)) + 2.0 * lw + std::log(f));
      top = std::max(top, terms.back());
    }
    if (!terms.empty()) {
      double sum = 0.0;
      for (double v : terms) sum += std::exp(v - top);
      out.log_weighted_l2_f = top + std::log(sum);
    }
  }
  return out;
}

void ConservationReport::observe(double charge, double energy, double gauss, double divB)
{
  if (!started) {
    charge0 = charge;
    energy0 = energy;
    started = true;
  }
  const double qs = std::abs(charge0) > 0.0 ? std::abs(charge0) : 1.0;
  const double es = std::abs(energy0) > 0.0 ? std::abs(energy0) : 1.0;
  charge_drift = std::max(charge_drift, std::abs(charge - charge0) / qs);
  energy_drift = std::max(energy_drift, std::abs(energy - energy0) / es);
  gauss_max = std::max(gauss_max, gauss);
  divB_max = std::max(divB_max, divB);
}

double total_energy(const FieldState& state, const ParticleEnsemble* ens)
{
  return field_energy(state) + (ens ? ens->kinetic_energy() : 0.0);
}

void write_csv_header(std::ostream& out) { out << "t,observable,value\n"; }

void write_csv_row(std::ostream& out, double t, const std::string& observable, double value)
{
  std::ostringstream row;
  row << std::setprecision(17) << t << ',' << observable << ',' << value << '\n';
  out << row.str();
}

std::map<std::string, DecaySeries> read_csv(std::istream& in)
{
  std::map<std::string, DecaySeries> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || (number == 1 && line.rfind("t,", 0) == 0)) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b)
      throw std::invalid_argument("CSV line " + std::to_string(number) + " is malformed");
    const std::string name = line.substr(a + 1, b - a - 1);
    auto& s = out[name];
    s.observable = name;
    try {
      s.push(std::stod(line.substr(0, a)), std::stod(line.substr(b + 1)));
    } catch (const std::logic_error& e) {
      throw std::invalid_argument("CSV line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

std::string format_fit(const DecayFit& fit, const std::string& observable)
{
  std::ostringstream out;
  out << std::setprecision(6);
  out << "observable = " << observable << '\n'
      << "exponent = " << fit.exponent << '\n'
      << "stderr = " << fit.standard_error << '\n'
      << "window_begin = " << fit.window_begin << '\n'
      << "window_end = " << fit.window_end << '\n'
      << "samples = " << fit.samples << '\n'
      << "max_log_residual = " << fit.max_residual << '\n';
  return out.str();
}

}  // namespace rvm
