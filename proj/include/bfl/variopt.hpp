#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>

#include "bfl/diag_gaussian.hpp"

namespace bfl {

/// Hyperparameters of the variational online Newton optimizer. Defaults
/// follow the FashionMNIST column of the published IVON setup.
struct IvonHyper {
  double lr = 0.1;
  double weight_decay = 2e-4;
  std::int64_t ess = 1;  // effective sample size N (client shard size)
  double beta1 = 0.9;
  double beta2 = 0.99999;
  double h0 = 5.0;
  std::optional<double> clip_radius;
  // Deterministic-training switches used by the FedAvg baseline.
  bool freeze_hessian = false;
  bool sample_noise = true;

  void validate() const;
};

struct IvonState {
  Vector mean;
  Vector hess;
  Vector grad_momentum;
  IvonHyper hyper;
  std::int64_t step_count = 0;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
};

/// Produces the initial mean for `dim` parameters from a seed.
using MeanInitializer = std::function<Vector(std::size_t dim, std::uint64_t seed)>;

IvonState ivon_init(std::size_t dim, const IvonHyper& hyper, std::uint64_t seed,
                    const MeanInitializer& init = {});

/// var[i] = 1 / (N * (hess[i] + delta)).
DiagGaussian posterior_of(const IvonState& state);

/// Inverse of posterior_of: h[i] = 1 / (N * var[i]) - delta, rectified at 0.
Vector hessian_of(const DiagGaussian& posterior, std::int64_t ess, double weight_decay);

/// theta = mean + sigma * eps with eps ~ N(0, I).
Vector sample_params(const IvonState& state, std::mt19937_64& rng);

/// One optimizer step given a gradient evaluated at `theta_sampled`.
void ivon_step(IvonState& state, const Vector& grad, const Vector& theta_sampled);

/// Multi-sample step: gradient and Hessian estimates are averaged over the
/// Monte-Carlo draws.
void ivon_step(IvonState& state, std::span<const Vector> grads,
               std::span<const Vector> thetas_sampled);

/// Monte-Carlo NLL plus KL(posterior || prior).
double negative_elbo(const IvonState& state, const DiagGaussian& prior, double mc_nll);

/// Default prior: N(0, 1 / (N * delta)) per coordinate.
DiagGaussian default_prior(std::size_t dim, std::int64_t ess, double weight_decay);

/// Learning-rate schedule across training epochs.
struct LrSchedule {
  enum class Kind { Linear, Constant };
  Kind kind = Kind::Linear;
  double initial = 0.1;
  double final_lr = 0.01;

  /// Rate for epoch `epoch` of `total` (0-based); linear hits both endpoints.
  double at(std::int64_t epoch, std::int64_t total) const;
  static Kind parse_kind(const std::string& s);
};

}  // namespace bfl
