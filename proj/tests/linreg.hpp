#pragma once

// Conjugate Bayesian linear regression used to check the optimizer against
// the exact posterior. Feature columns are orthogonal, so the exact posterior
// has a diagonal covariance and the mean-field optimum coincides with it.

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "bfl/variopt.hpp"

namespace bfl::test {

struct LinReg {
  Eigen::MatrixXd x;  // 20 x 2
  Vector y;
  double noise_var = 0.25;
  double delta = 0.05;  // prior precision is N * delta
  int n = 20;

  Vector mean_grad(const Vector& w) const {
    return -(x.transpose() * (y - x * w)) / (noise_var * n);
  }

  // Exact posterior N(m, S) with S diagonal here.
  DiagGaussian exact() const {
    const Eigen::MatrixXd prec =
        x.transpose() * x / noise_var + n * delta * Eigen::MatrixXd::Identity(2, 2);
    const Eigen::MatrixXd cov = prec.inverse();
    const Vector m = cov * (x.transpose() * y) / noise_var;
    return DiagGaussian(m, cov.diagonal());
  }
};

inline LinReg make_linreg(std::uint64_t seed) {
  LinReg p;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  p.x.resize(p.n, 2);
  for (int i = 0; i < p.n; ++i) p.x(i, 0) = z(rng), p.x(i, 1) = z(rng);
  // Gram-Schmidt, then scale so the columns have squared norms 20 and 10.
  p.x.col(0).normalize();
  p.x.col(1) -= p.x.col(0).dot(p.x.col(1)) * p.x.col(0);
  p.x.col(1).normalize();
  p.x.col(0) *= std::sqrt(20.0);
  p.x.col(1) *= std::sqrt(10.0);
  Vector w(2);
  w << 1.0, -2.0;
  p.y = p.x * w;
  for (int i = 0; i < p.n; ++i) p.y[i] += std::sqrt(p.noise_var) * z(rng);
  return p;
}

// Runs `steps` single-sample IVON steps with a linearly decaying learning
// rate and returns the final state.
inline IvonState fit_linreg(const LinReg& p, int steps, std::uint64_t seed) {
  IvonHyper h;
  h.lr = 0.2;
  h.weight_decay = p.delta;
  h.ess = p.n;
  h.beta1 = 0.9;
  h.beta2 = 0.995;
  h.h0 = 1.0;
  IvonState s = ivon_init(2, h, seed, [](std::size_t d, std::uint64_t) { return Vector::Zero(d); });
  std::mt19937_64 rng(seed);
  const LrSchedule sched{LrSchedule::Kind::Linear, 0.2, 0.01};
  for (int t = 0; t < steps; ++t) {
    s.hyper.lr = sched.at(t, steps);
    const Vector theta = sample_params(s, rng);
    ivon_step(s, p.mean_grad(theta), theta);
  }
  return s;
}

}  // namespace bfl::test
