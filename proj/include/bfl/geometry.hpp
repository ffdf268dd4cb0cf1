#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bfl/diag_gaussian.hpp"

namespace bfl {

// Divergences between mean-field Gaussians. All three take the candidate
// distribution in the first slot, which is the slot the barycenter and
// projection problems optimise over.
//
//   KL    E_q[ln q - ln p]                      (used for the ELBO)
//   RKL   same closed form; its barycenter is precision-weighted fusion
//   W2SQ  squared 2-Wasserstein distance
enum class Divergence { KL, RKL, W2SQ };

// Server-side aggregation rules.
//   EAA   weighted average of means and variances
//   W2B   Wasserstein-2 barycenter (weighted average of standard deviations)
//   RKLB  reverse-KL barycenter (weighted average of precisions)
enum class AggregationMethod { EAA, W2B, RKLB };

std::string_view to_string(Divergence d);
std::string_view to_string(AggregationMethod m);
Divergence parse_divergence(std::string_view s);
AggregationMethod parse_aggregation(std::string_view s);

/// The aggregation rule whose barycenter coincides with the projection
/// under divergence `d`. Throws for KL, which has no Gaussian-preserving
/// closed form here.
AggregationMethod barycenter_method_of(Divergence d);

/// Lagrange multiplier trading global alignment (0) against local
/// alignment (infinity). Infinity is a sentinel, not a large float.
class Lambda {
 public:
  explicit Lambda(double value);
  static Lambda infinity() noexcept { return Lambda(); }

  bool is_infinite() const noexcept { return infinite_; }
  /// Finite value; throws on the infinity sentinel.
  double value() const;
  std::string str() const;

  static Lambda parse(std::string_view s);

  friend bool operator<(const Lambda& a, const Lambda& b) {
    if (a.infinite_) return false;
    if (b.infinite_) return true;
    return a.value_ < b.value_;
  }
  friend bool operator==(const Lambda& a, const Lambda& b) {
    return a.infinite_ == b.infinite_ && (a.infinite_ || a.value_ == b.value_);
  }

 private:
  Lambda() : value_(0.0), infinite_(true) {}
  double value_;
  bool infinite_;
};

struct ProjectionWeights {
  double global;  // 1 / (lambda + 1)
  double local;   // lambda / (lambda + 1)

  static ProjectionWeights from(const Lambda& lambda);
};

/// D(q || p) in closed form.
double divergence(Divergence d, const DiagGaussian& q, const DiagGaussian& p);

/// Weighted aggregation of posteriors. Weights must be non-negative and sum
/// to 1 within 1e-9 (they are renormalised); variances are floored at 1e-12.
DiagGaussian aggregate(AggregationMethod method, std::span<const DiagGaussian> posteriors,
                       std::span<const double> weights);

/// Closed-form projection of the global posterior onto the divergence
/// sphere around the local posterior, expressed as a two-point barycenter.
/// lambda = 0 returns `global` and lambda = infinity returns `local`, both
/// bit-exactly.
DiagGaussian project(Divergence d, const DiagGaussian& global, const DiagGaussian& local,
                     const Lambda& lambda);

/// project() over an ascending lambda grid.
std::vector<DiagGaussian> geodesic_sweep(Divergence d, const DiagGaussian& global,
                                         const DiagGaussian& local,
                                         std::span<const Lambda> lambdas);

/// Brute-force 1-D solution of
///   min_p D(p || global)  subject to  D(p || local) <= radius
/// that never touches the closed-form barycenter code. Used to validate the
/// projection/barycenter equivalence.
DiagGaussian numeric_projection_oracle(Divergence d, const DiagGaussian& global,
                                       const DiagGaussian& local, double radius);

/// Objective minimised by each aggregation rule:
///   sum_k w_k cost(q, p_k)
/// EAA uses squared Euclidean distance in (mean, variance) coordinates.
double barycenter_objective(AggregationMethod method, const DiagGaussian& q,
                            std::span<const DiagGaussian> posteriors,
                            std::span<const double> weights);

}  // namespace bfl
