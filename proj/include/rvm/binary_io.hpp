#pragma once

#include "rvm/particles.hpp"
#include "rvm/spectral.hpp"

#include <stdexcept>
#include <string>

namespace rvm {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kFieldDumpVersion = 1;
inline constexpr std::uint32_t kEnsembleDumpVersion = 1;

/// "RVMF", version, n n n, L, t, then E1 E2 E3 B1 B2 B3 as little-endian f64, x fastest.
void write_field_dump(const std::string& path, const FieldState& state);
FieldState read_field_dump(const std::string& path);

/// "RVMP", version, N_p, t, then columns x1 x2 x3 v1 v2 v3 w as little-endian f64.
/// The box length is not stored; it is supplied on reading.
void write_ensemble_dump(const std::string& path, const ParticleEnsemble& ens);
ParticleEnsemble read_ensemble_dump(const std::string& path, double L);

}  // namespace rvm
