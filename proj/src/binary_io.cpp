#include "rvm/binary_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace rvm {

namespace {

template <typename T>
void put_le(std::ostream& out, T value)
{
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T get_le(std::istream& in)
{
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw FormatError("unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void expect_magic(std::istream& in, const char* magic)
{
  char m[4];
  if (!in.read(m, 4) || std::memcmp(m, magic, 4) != 0)
    throw FormatError(std::string("bad magic, expected ") + magic);
}

std::ofstream open_out(const std::string& path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

std::ifstream open_in(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

}  // namespace

void write_field_dump(const std::string& path, const FieldState& state)
{
  const Grid3& g = state.grid();
  auto out = open_out(path);
  out.write("RVMF", 4);
  put_le<std::uint32_t>(out, kFieldDumpVersion);
  for (int a = 0; a < 3; ++a) put_le<std::uint32_t>(out, std::uint32_t(g.n));
  put_le<double>(out, g.L);
  put_le<double>(out, state.time);
  for (const VectorGrid* F : {&state.E(), &state.B()})
    for (const auto& c : *F)
      for (Eigen::Index i = 0; i < c.size(); ++i) put_le<double>(out, c(i));
  if (!out) throw std::runtime_error("write failed for " + path);
}

FieldState read_field_dump(const std::string& path)
{
  auto in = open_in(path);
  expect_magic(in, "RVMF");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kFieldDumpVersion) throw FormatError("unsupported field dump version");
  std::uint32_t dims[3];
  for (auto& d : dims) d = get_le<std::uint32_t>(in);
  if (dims[0] != dims[1] || dims[1] != dims[2]) throw FormatError("field dump is not cubic");
  const double L = get_le<double>(in);
  const double t = get_le<double>(in);
  const Grid3 g(int(dims[0]), L);
  VectorGrid E, B;
  for (VectorGrid* F : {&E, &B})
    for (auto& c : *F) {
      c.resize(g.size());
      for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = get_le<double>(in);
    }
  FieldState s(g, t);
  s.set_real(std::move(E), std::move(B));
  return s;
}

void write_ensemble_dump(const std::string& path, const ParticleEnsemble& ens)
{
  auto out = open_out(path);
  out.write("RVMP", 4);
  put_le<std::uint32_t>(out, kEnsembleDumpVersion);
  put_le<std::uint64_t>(out, std::uint64_t(ens.size()));
  put_le<double>(out, ens.time);
  for (const Eigen::Matrix3Xd* m : {&ens.x, &ens.v})
    for (int a = 0; a < 3; ++a)
      for (Eigen::Index p = 0; p < ens.size(); ++p) put_le<double>(out, (*m)(a, p));
  for (Eigen::Index p = 0; p < ens.size(); ++p) put_le<double>(out, ens.w(p));
  if (!out) throw std::runtime_error("write failed for " + path);
}

ParticleEnsemble read_ensemble_dump(const std::string& path, double L)
{
  auto in = open_in(path);
  expect_magic(in, "RVMP");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kEnsembleDumpVersion) throw FormatError("unsupported ensemble dump version");
  const auto count = Eigen::Index(get_le<std::uint64_t>(in));
  ParticleEnsemble ens;
  ens.L = L;
  ens.time = get_le<double>(in);
  ens.x.resize(3, count);
  ens.v.resize(3, count);
  ens.w.resize(count);
  for (Eigen::Matrix3Xd* m : {&ens.x, &ens.v})
    for (int a = 0; a < 3; ++a)
      for (Eigen::Index p = 0; p < count; ++p) (*m)(a, p) = get_le<double>(in);
  for (Eigen::Index p = 0; p < count; ++p) ens.w(p) = get_le<double>(in);
  return ens;
}

}  // namespace rvm
