#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bfl/data.hpp"
#include "bfl/diag_gaussian.hpp"
#include "bfl/mlp.hpp"

namespace bfl {

struct MetricsReport {
  double accuracy = 0.0;  // percent
  double ece = 0.0;
  double nll = 0.0;
  std::size_t n_examples = 0;
  int mc_samples = 0;
  int bins = 0;
  std::string setting;  // PM-LD, PM-GD, GM-LD, GM-GD (or empty)
};

/// Accuracy (argmax, ties to the lowest class), NLL of the predictive
/// probabilities (floored at 1e-12) and equal-width-bin ECE on max-prob.
MetricsReport metrics_from_probs(const Matrix& probs, std::span<const int> labels, int bins);

MetricsReport evaluate(const MlpSpec& spec, const DiagGaussian& posterior, const Dataset& ds,
                       int mc_samples, int bins, std::uint64_t seed);

/// Raised when every paired difference is zero.
class DegenerateSample : public std::domain_error {
 public:
  DegenerateSample() : std::domain_error("degenerate-sample: all paired differences are zero") {}
};

enum class WilcoxonMethod { Auto, Exact, Normal };

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_two_sided = 1.0;
  std::size_t n_effective = 0;
  bool exact = false;
};

/// Paired Wilcoxon signed-rank test. Zero differences are dropped, tied
/// magnitudes get average ranks. Auto uses the exact null distribution for
/// n <= 20 and a tie-corrected normal approximation (with continuity
/// correction) above.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                    WilcoxonMethod method = WilcoxonMethod::Auto);

struct PairwiseP {
  std::string method_a;
  std::string method_b;
  std::optional<double> p;  // empty when the comparison is degenerate
  std::optional<double> statistic;
};

/// Lower-triangular pairwise Wilcoxon p-values: one entry per (a, b) with
/// a listed after b. Score lists must be paired (equal length).
std::vector<PairwiseP> compare_aggregations(
    const std::vector<std::pair<std::string, std::vector<double>>>& scores);

}  // namespace bfl
