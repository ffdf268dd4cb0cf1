#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace bfl {

using Vector = Eigen::VectorXd;

/// Raised whenever a caller violates an input contract (dimension mismatch,
/// non-positive variance, bad weights, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mean-field Gaussian over a flat parameter vector: N(mean, diag(var)).
class DiagGaussian {
 public:
  DiagGaussian(Vector mean, Vector var);

  /// Isotropic N(mean, var * I) of dimension `dim`.
  static DiagGaussian isotropic(std::size_t dim, double mean, double var);

  const Vector& mean() const noexcept { return mean_; }
  const Vector& var() const noexcept { return var_; }
  Vector stddev() const { return var_.cwiseSqrt(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean_.size()); }

  friend bool operator==(const DiagGaussian& a, const DiagGaussian& b) {
    return a.mean_.size() == b.mean_.size() && a.mean_ == b.mean_ && a.var_ == b.var_;
  }

 private:
  Vector mean_;
  Vector var_;
};

inline void require_same_dim(const DiagGaussian& a, const DiagGaussian& b,
                             const char* where) {
  if (a.dim() != b.dim()) {
    throw ContractError(std::string(where) + ": dimension mismatch (" +
                        std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) + ")");
  }
}

}  // namespace bfl
