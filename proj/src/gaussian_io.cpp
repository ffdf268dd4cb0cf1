#include "bfl/gaussian_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace bfl {

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> buf{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(buf.data(), buf.size());
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw FormatError(std::string("gaussian binary truncated while reading ") + what);
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
  return value;
}

void put_vector(std::ostream& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put_le(out, std::bit_cast<std::uint64_t>(v[i]));
}

Vector get_vector(std::istream& in, std::uint64_t n, const char* what) {
  Vector v(static_cast<Eigen::Index>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    v[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(get_le<std::uint64_t>(in, what));
  }
  return v;
}

}  // namespace

void write_binary(std::ostream& out, const DiagGaussian& g) {
  out.write(kGaussianMagic, sizeof(kGaussianMagic));
  put_le<std::uint32_t>(out, kGaussianFormatVersion);
  put_le<std::uint64_t>(out, g.dim());
  put_vector(out, g.mean());
  put_vector(out, g.var());
}

DiagGaussian read_binary(std::istream& in) {
  char magic[4] = {};
  in.read(magic, sizeof(magic));
  if (in.gcount() != 4) throw FormatError("gaussian binary truncated while reading magic");
  if (std::memcmp(magic, kGaussianMagic, sizeof(magic)) != 0) {
    throw FormatError("gaussian binary: bad magic (expected BFLG)");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kGaussianFormatVersion) {
    throw FormatError("gaussian binary: unsupported version " + std::to_string(version));
  }
  const auto dim = get_le<std::uint64_t>(in, "dim");
  if (dim == 0 || dim > (std::uint64_t{1} << 40)) {
    throw FormatError("gaussian binary: implausible dimension " + std::to_string(dim));
  }
  Vector mean = get_vector(in, dim, "mean");
  Vector var = get_vector(in, dim, "var");
  return DiagGaussian(std::move(mean), std::move(var));
}

std::string to_bytes(const DiagGaussian& g) {
  std::ostringstream os(std::ios::binary);
  write_binary(os, g);
  return os.str();
}

DiagGaussian from_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_binary(is);
}

void save_binary(const std::filesystem::path& path, const DiagGaussian& g) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_binary(out, g);
}

DiagGaussian load_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_binary(in);
}

nlohmann::json to_json(const DiagGaussian& g) {
  return {{"mean", std::vector<double>(g.mean().begin(), g.mean().end())},
          {"var", std::vector<double>(g.var().begin(), g.var().end())}};
}

DiagGaussian gaussian_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("mean") || !j.contains("var")) {
    throw FormatError("gaussian json: expected object with 'mean' and 'var'");
  }
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto var = j.at("var").get<std::vector<double>>();
  return DiagGaussian(Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                      Eigen::Map<const Vector>(var.data(), static_cast<Eigen::Index>(var.size())));
}

}  // namespace bfl
