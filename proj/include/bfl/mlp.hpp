#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "bfl/diag_gaussian.hpp"

namespace bfl {

using Matrix = Eigen::MatrixXd;

/// Fully connected classifier: ReLU on hidden layers, softmax at the output.
/// Parameters live in one flat vector, layer by layer, each layer stored as
/// its weight matrix (out x in, row-major) followed by its bias (out).
struct MlpSpec {
  std::vector<int> layer_sizes;  // input, hidden..., classes

  void validate() const;
  int inputs() const { return layer_sizes.front(); }
  int classes() const { return layer_sizes.back(); }
};

std::size_t param_count(const MlpSpec& spec);

/// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights and zero biases.
Vector glorot_init(const MlpSpec& spec, std::uint64_t seed);

/// Logits, one row per input row.
Matrix forward(const MlpSpec& spec, const Vector& theta, const Matrix& inputs);

struct LossGrad {
  double nll;   // mean cross-entropy over the batch
  Vector grad;  // d nll / d theta
};

LossGrad loss_and_grad(const MlpSpec& spec, const Vector& theta, const Matrix& inputs,
                       std::span<const int> labels);

/// Row-wise max-shifted softmax.
Matrix softmax_rows(const Matrix& logits);

/// Posterior predictive: softmax averaged over `samples` draws from
/// `posterior`.
Matrix predict_proba_mc(const MlpSpec& spec, const DiagGaussian& posterior, const Matrix& inputs,
                        int samples, std::uint64_t seed);

/// Number of forward/backward evaluations performed process-wide.
std::uint64_t model_call_count();

}  // namespace bfl
