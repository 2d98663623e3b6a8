#pragma once

#include "rvm/geometry.hpp"

#include <unsupported/Eigen/AutoDiff>

namespace rvm {

/// Phase-space point (t, x, v).
struct PhasePoint {
  double t = 0.0;
  Vec3d x = Vec3d::Zero();
  Vec3d v = Vec3d::Zero();
};

/// Components ordered (t, x1, x2, x3, v1, v2, v3).
using PhaseVector = Eigen::Matrix<double, 7, 1>;
using AD7 = Eigen::AutoDiffScalar<PhaseVector>;
using AD3 = Eigen::AutoDiffScalar<Eigen::Vector3d>;

inline PhaseVector to_phase_vector(const PhasePoint& p)
{
  PhaseVector z;
  z << p.t, p.x, p.v;
  return z;
}

inline PhasePoint to_phase_point(const PhaseVector& z)
{
  return {z(0), z.segment<3>(1), z.segment<3>(4)};
}

/// Exact gradient in (t, x, v) of a Scalar-templated phase-space function.
template <typename F>
PhaseVector phase_gradient(F&& f, const PhasePoint& p)
{
  const AD7 t(p.t, 7, 0);
  Vec3<AD7> x, v;
  for (int i = 0; i < 3; ++i) {
    x(i) = AD7(p.x(i), 7, 1 + i);
    v(i) = AD7(p.v(i), 7, 4 + i);
  }
  const AD7 r = f(t, x, v);
  if (r.derivatives().size() == 0) return PhaseVector::Zero();
  return r.derivatives();
}

}  // namespace rvm
