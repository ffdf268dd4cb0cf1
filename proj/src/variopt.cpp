#include "bfl/variopt.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "bfl/geometry.hpp"

namespace bfl {

void IvonHyper::validate() const {
  if (!(lr > 0.0)) throw ContractError("ivon: lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ContractError("ivon: weight_decay must be >= 0");
  if (ess < 1) throw ContractError("ivon: ess must be a positive integer");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ContractError("ivon: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ContractError("ivon: beta2 must be in [0, 1)");
  if (!(h0 > 0.0)) throw ContractError("ivon: h0 must be > 0");
  if (clip_radius && !(*clip_radius > 0.0)) throw ContractError("ivon: clip_radius must be > 0");
}

IvonState ivon_init(std::size_t dim, const IvonHyper& hyper, std::uint64_t seed,
                    const MeanInitializer& init) {
  if (dim < 1) throw ContractError("ivon_init: dim must be >= 1");
  hyper.validate();
  const auto n = static_cast<Eigen::Index>(dim);
  IvonState state;
  state.mean = init ? init(dim, seed) : Vector::Zero(n);
  if (state.mean.size() != n) throw ContractError("ivon_init: initializer returned wrong length");
  state.hess = Vector::Constant(n, hyper.h0);
  state.grad_momentum = Vector::Zero(n);
  state.hyper = hyper;
  return state;
}

DiagGaussian posterior_of(const IvonState& state) {
  const double n = static_cast<double>(state.hyper.ess);
  Vector var = ((state.hess.array() + state.hyper.weight_decay) * n).inverse().matrix();
  return DiagGaussian(state.mean, std::move(var));
}

Vector hessian_of(const DiagGaussian& posterior, std::int64_t ess, double weight_decay) {
  if (ess < 1) throw ContractError("hessian_of: ess must be a positive integer");
  const double n = static_cast<double>(ess);
  Vector h = (posterior.var().array() * n).inverse().matrix();
  h.array() -= weight_decay;
  Eigen::Index rectified = 0;
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    if (h[i] < 0.0) {
      h[i] = 0.0;
      ++rectified;
    }
  }
  if (rectified > 0) {
    spdlog::warn("hessian_of: rectified {} negative Hessian entr{} to 0", rectified,
                 rectified == 1 ? "y" : "ies");
  }
  return h;
}

Vector sample_params(const IvonState& state, std::mt19937_64& rng) {
  if (!state.hyper.sample_noise) return state.mean;
  const double n = static_cast<double>(state.hyper.ess);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector theta(state.mean.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double sigma = 1.0 / std::sqrt(n * (state.hess[i] + state.hyper.weight_decay));
    theta[i] = state.mean[i] + sigma * normal(rng);
  }
  return theta;
}

void ivon_step(IvonState& state, const Vector& grad, const Vector& theta_sampled) {
  ivon_step(state, std::span<const Vector>(&grad, 1), std::span<const Vector>(&theta_sampled, 1));
}

void ivon_step(IvonState& state, std::span<const Vector> grads,
               std::span<const Vector> thetas_sampled) {
  const Eigen::Index d = state.mean.size();
  if (grads.empty() || grads.size() != thetas_sampled.size()) {
    throw ContractError("ivon_step: need one sampled parameter vector per gradient");
  }
  for (std::size_t s = 0; s < grads.size(); ++s) {
    if (grads[s].size() != d || thetas_sampled[s].size() != d) {
      throw ContractError("ivon_step: gradient/sample dimension mismatch");
    }
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!std::isfinite(grads[s][i])) {
        throw std::runtime_error("ivon_step: non-finite gradient at coordinate " +
                                 std::to_string(i));
      }
    }
  }
  const IvonHyper& hp = state.hyper;
  const double n = static_cast<double>(hp.ess);
  const double samples = static_cast<double>(grads.size());

  Vector grad = Vector::Zero(d);
  for (const Vector& g : grads) grad += g;
  grad /= samples;

  if (!hp.freeze_hessian) {
    // Reparameterisation estimate of the diagonal Hessian:
    //   h_hat = g * (theta - mean) / sigma^2
    const Vector var_inv = ((state.hess.array() + hp.weight_decay) * n).matrix();
    Vector h_hat = Vector::Zero(d);
    for (std::size_t s = 0; s < grads.size(); ++s) {
      h_hat += grads[s].cwiseProduct(thetas_sampled[s] - state.mean).cwiseProduct(var_inv);
    }
    h_hat /= samples;
    state.hess = hp.beta2 * state.hess + (1.0 - hp.beta2) * h_hat;
    state.hess = state.hess.cwiseMax(0.0);
  }

  state.grad_momentum = hp.beta1 * state.grad_momentum + (1.0 - hp.beta1) * grad;
  state.step_count += 1;
  const double bias = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step_count));
  const Vector g_bar = state.grad_momentum / bias;

  Vector update = ((g_bar + hp.weight_decay * state.mean).array() /
                   (state.hess.array() + hp.weight_decay))
                      .matrix();
  if (hp.clip_radius) {
    const double norm = update.norm();
    if (norm > *hp.clip_radius) update *= *hp.clip_radius / norm;
  }
  state.mean -= hp.lr * update;
}

double negative_elbo(const IvonState& state, const DiagGaussian& prior, double mc_nll) {
  const DiagGaussian q = posterior_of(state);
  require_same_dim(q, prior, "negative_elbo");
  return mc_nll + divergence(Divergence::KL, q, prior);
}

DiagGaussian default_prior(std::size_t dim, std::int64_t ess, double weight_decay) {
  if (!(weight_decay > 0.0)) throw ContractError("default_prior: weight_decay must be > 0");
  return DiagGaussian::isotropic(dim, 0.0, 1.0 / (static_cast<double>(ess) * weight_decay));
}

double LrSchedule::at(std::int64_t epoch, std::int64_t total) const {
  if (kind == Kind::Constant || total <= 1) return initial;
  const double t = static_cast<double>(epoch) / static_cast<double>(total - 1);
  return initial + (final_lr - initial) * std::min(1.0, std::max(0.0, t));
}

LrSchedule::Kind LrSchedule::parse_kind(const std::string& s) {
  if (s == "linear") return Kind::Linear;
  if (s == "constant") return Kind::Constant;
  throw ContractError("unknown lr schedule '" + s + "' (expected linear or constant)");
}

}  // namespace bfl
