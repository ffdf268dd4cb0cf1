#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "bfl/diag_gaussian.hpp"

namespace bfl {

/// Malformed or truncated serialized input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary wire format, all integers and floats little-endian:
//   "BFLG" | version:u32 | dim:u64 | mean:f64[dim] | var:f64[dim]
inline constexpr char kGaussianMagic[4] = {'B', 'F', 'L', 'G'};
inline constexpr std::uint32_t kGaussianFormatVersion = 1;

void write_binary(std::ostream& out, const DiagGaussian& g);
DiagGaussian read_binary(std::istream& in);

std::string to_bytes(const DiagGaussian& g);
DiagGaussian from_bytes(const std::string& bytes);

void save_binary(const std::filesystem::path& path, const DiagGaussian& g);
DiagGaussian load_binary(const std::filesystem::path& path);

/// {"mean": [...], "var": [...]}
nlohmann::json to_json(const DiagGaussian& g);
DiagGaussian gaussian_from_json(const nlohmann::json& j);

}  // namespace bfl
