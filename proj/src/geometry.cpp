#include "bfl/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include <spdlog/spdlog.h>

namespace bfl {

namespace {

constexpr double kVarianceFloor = 1e-12;
constexpr double kWeightTolerance = 1e-9;

// Per-coordinate closed forms.
double kl_1d(double mq, double vq, double mp, double vp) {
  const double dm = mp - mq;
  return 0.5 * (vq / vp + dm * dm / vp - 1.0 + std::log(vp / vq));
}

double w2sq_1d(double mq, double vq, double mp, double vp) {
  const double dm = mq - mp;
  const double ds = std::sqrt(vq) - std::sqrt(vp);
  return dm * dm + ds * ds;
}

double eaa_cost_1d(double mq, double vq, double mp, double vp) {
  const double dm = mq - mp;
  const double dv = vq - vp;
  return dm * dm + dv * dv;
}

double divergence_1d(Divergence d, double mq, double vq, double mp, double vp) {
  switch (d) {
    case Divergence::KL:
    case Divergence::RKL:
      return kl_1d(mq, vq, mp, vp);
    case Divergence::W2SQ:
      return w2sq_1d(mq, vq, mp, vp);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> normalized_weights(std::span<const double> weights, std::size_t n) {
  if (weights.size() != n) {
    throw ContractError("aggregate: " + std::to_string(n) + " posteriors but " +
                        std::to_string(weights.size()) + " weights");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw ContractError("aggregate: weight " + std::to_string(i) +
                          " is negative or non-finite");
    }
    sum += weights[i];
  }
  if (std::abs(sum - 1.0) > kWeightTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "aggregate: weights sum to " << sum << ", expected 1";
    throw ContractError(msg.str());
  }
  std::vector<double> w(weights.begin(), weights.end());
  for (double& x : w) x /= sum;
  return w;
}

// Golden-section search for the minimiser of a unimodal f on [a, b].
template <typename F>
double golden_argmin(F&& f, double a, double b, double tol = 1e-12) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > tol * (1.0 + std::abs(a) + std::abs(b))) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc <= fd ? c : d;
}

// Root of a monotone g between `inside` (g <= 0) and `outside` (g > 0).
template <typename G>
double bisect_boundary(G&& g, double inside, double outside) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (inside + outside);
    if (mid == inside || mid == outside) break;
    if (g(mid) <= 0.0) {
      inside = mid;
    } else {
      outside = mid;
    }
  }
  return inside;
}

}  // namespace

std::string_view to_string(Divergence d) {
  switch (d) {
    case Divergence::KL: return "KL";
    case Divergence::RKL: return "RKL";
    case Divergence::W2SQ: return "W2SQ";
  }
  return "?";
}

std::string_view to_string(AggregationMethod m) {
  switch (m) {
    case AggregationMethod::EAA: return "EAA";
    case AggregationMethod::W2B: return "W2B";
    case AggregationMethod::RKLB: return "RKLB";
  }
  return "?";
}

Divergence parse_divergence(std::string_view s) {
  if (s == "KL") return Divergence::KL;
  if (s == "RKL") return Divergence::RKL;
  if (s == "W2SQ" || s == "W2") return Divergence::W2SQ;
  throw ContractError("unknown divergence '" + std::string(s) + "' (expected KL, RKL, W2SQ)");
}

AggregationMethod parse_aggregation(std::string_view s) {
  if (s == "EAA") return AggregationMethod::EAA;
  if (s == "W2B" || s == "WB") return AggregationMethod::W2B;
  if (s == "RKLB") return AggregationMethod::RKLB;
  throw ContractError("unknown aggregation method '" + std::string(s) +
                      "' (expected EAA, W2B, RKLB)");
}

AggregationMethod barycenter_method_of(Divergence d) {
  switch (d) {
    case Divergence::W2SQ: return AggregationMethod::W2B;
    case Divergence::RKL: return AggregationMethod::RKLB;
    case Divergence::KL: break;
  }
  throw ContractError(
      "unsupported divergence KL for projection: no Gaussian-preserving closed form; use RKL or W2SQ");
}

Lambda::Lambda(double value) : value_(value), infinite_(false) {
  if (!std::isfinite(value) || value < 0.0) {
    throw ContractError("lambda must be finite and >= 0 (use Lambda::infinity() for the local endpoint)");
  }
}

double Lambda::value() const {
  if (infinite_) throw ContractError("lambda is the infinity sentinel");
  return value_;
}

std::string Lambda::str() const {
  if (infinite_) return "inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value_);
  return std::string(buf, res.ptr);
}

Lambda Lambda::parse(std::string_view s) {
  if (s == "inf" || s == "Inf" || s == "INF") return Lambda::infinity();
  std::string owned(s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(owned, &used);
  } catch (const std::exception&) {
    throw ContractError("cannot parse lambda '" + owned + "'");
  }
  if (used != owned.size()) throw ContractError("cannot parse lambda '" + owned + "'");
  return Lambda(v);
}

ProjectionWeights ProjectionWeights::from(const Lambda& lambda) {
  if (lambda.is_infinite()) return {0.0, 1.0};
  const double l = lambda.value();
  return {1.0 / (l + 1.0), l / (l + 1.0)};
}

double divergence(Divergence d, const DiagGaussian& q, const DiagGaussian& p) {
  require_same_dim(q, p, "divergence");
  const Vector& mq = q.mean();
  const Vector& vq = q.var();
  const Vector& mp = p.mean();
  const Vector& vp = p.var();
  double total = 0.0;
  for (Eigen::Index i = 0; i < mq.size(); ++i) {
    total += divergence_1d(d, mq[i], vq[i], mp[i], vp[i]);
  }
  // Rounding in log(vp/vq) can leave a tiny negative residue.
  return std::max(total, 0.0);
}

DiagGaussian aggregate(AggregationMethod method, std::span<const DiagGaussian> posteriors,
                       std::span<const double> weights) {
  if (posteriors.empty()) throw ContractError("aggregate: empty posterior list");
  const std::vector<double> w = normalized_weights(weights, posteriors.size());
  const std::size_t dim = posteriors.front().dim();
  for (const auto& p : posteriors) require_same_dim(posteriors.front(), p, "aggregate");

  std::size_t support = 0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k] > 0.0) {
      ++support;
      last_positive = k;
    }
  }
  if (support == 1) return posteriors[last_positive];

  const auto n = static_cast<Eigen::Index>(dim);
  Vector mean = Vector::Zero(n);
  Vector var = Vector::Zero(n);
  switch (method) {
    case AggregationMethod::EAA:
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (w[k] == 0.0) continue;
        mean += w[k] * posteriors[k].mean();
        var += w[k] * posteriors[k].var();
      }
      break;
    case AggregationMethod::W2B: {
      Vector sd = Vector::Zero(n);
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (w[k] == 0.0) continue;
        mean += w[k] * posteriors[k].mean();
        sd += w[k] * posteriors[k].var().cwiseSqrt();
      }
      var = sd.cwiseProduct(sd);
      break;
    }
    case AggregationMethod::RKLB: {
      Vector precision = Vector::Zero(n);
      Vector weighted = Vector::Zero(n);
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (w[k] == 0.0) continue;
        const Vector prec_k = posteriors[k].var().cwiseInverse();
        precision += w[k] * prec_k;
        weighted += w[k] * prec_k.cwiseProduct(posteriors[k].mean());
      }
      var = precision.cwiseInverse();
      mean = var.cwiseProduct(weighted);
      break;
    }
  }

  Eigen::Index clamped = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(var[i] >= kVarianceFloor)) {
      var[i] = kVarianceFloor;
      ++clamped;
    }
  }
  if (clamped > 0) {
    spdlog::warn("aggregate({}): clamped {} variance(s) to {}", to_string(method), clamped,
                 kVarianceFloor);
  }
  return DiagGaussian(std::move(mean), std::move(var));
}

DiagGaussian project(Divergence d, const DiagGaussian& global, const DiagGaussian& local,
                     const Lambda& lambda) {
  const AggregationMethod method = barycenter_method_of(d);
  require_same_dim(global, local, "project");
  if (lambda.is_infinite()) return local;
  if (lambda.value() == 0.0) return global;
  const ProjectionWeights w = ProjectionWeights::from(lambda);
  const DiagGaussian pair[] = {global, local};
  const double weights[] = {w.global, w.local};
  return aggregate(method, pair, weights);
}

std::vector<DiagGaussian> geodesic_sweep(Divergence d, const DiagGaussian& global,
                                         const DiagGaussian& local,
                                         std::span<const Lambda> lambdas) {
  if (!std::is_sorted(lambdas.begin(), lambdas.end())) {
    throw ContractError("geodesic_sweep: lambdas must be sorted ascending");
  }
  std::vector<DiagGaussian> out;
  out.reserve(lambdas.size());
  for (const Lambda& l : lambdas) out.push_back(project(d, global, local, l));
  return out;
}

double barycenter_objective(AggregationMethod method, const DiagGaussian& q,
                            std::span<const DiagGaussian> posteriors,
                            std::span<const double> weights) {
  if (posteriors.size() != weights.size()) {
    throw ContractError("barycenter_objective: posteriors/weights length mismatch");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < posteriors.size(); ++k) {
    require_same_dim(q, posteriors[k], "barycenter_objective");
    double term = 0.0;
    for (Eigen::Index i = 0; i < q.mean().size(); ++i) {
      const double mq = q.mean()[i], vq = q.var()[i];
      const double mp = posteriors[k].mean()[i], vp = posteriors[k].var()[i];
      switch (method) {
        case AggregationMethod::EAA: term += eaa_cost_1d(mq, vq, mp, vp); break;
        case AggregationMethod::W2B: term += w2sq_1d(mq, vq, mp, vp); break;
        case AggregationMethod::RKLB: term += kl_1d(mq, vq, mp, vp); break;
      }
    }
    total += weights[k] * term;
  }
  return total;
}

DiagGaussian numeric_projection_oracle(Divergence d, const DiagGaussian& global,
                                       const DiagGaussian& local, double radius) {
  require_same_dim(global, local, "numeric_projection_oracle");
  if (global.dim() != 1) {
    throw ContractError("numeric_projection_oracle: only dimension 1 is supported");
  }
  if (!(radius >= 0.0) || !std::isfinite(radius)) {
    throw ContractError("numeric_projection_oracle: radius must be finite and >= 0");
  }
  if (radius == 0.0) return local;
  if (divergence(d, global, local) <= radius) return global;

  const double mg = global.mean()[0], vg = global.var()[0];
  const double mk = local.mean()[0], vk = local.var()[0];
  const double sg = std::sqrt(vg), sk = std::sqrt(vk);

  // Search in log-sigma so the box spans several orders of magnitude.
  const double log_lo = std::log(std::min(sg, sk) * 1e-3);
  const double log_hi = std::log(std::max(sg, sk) * 1e3);

  auto to_local = [&](double mu, double log_sigma) {
    const double s = std::exp(log_sigma);
    return divergence_1d(d, mu, s * s, mk, vk);
  };
  auto to_global = [&](double mu, double log_sigma) {
    const double s = std::exp(log_sigma);
    return divergence_1d(d, mu, s * s, mg, vg);
  };

  // Smallest reachable distance to `local` along a fixed-mu slice.
  auto slice_min = [&](double mu) {
    const double s = golden_argmin([&](double ls) { return to_local(mu, ls); }, log_lo, log_hi);
    return std::pair{s, to_local(mu, s)};
  };

  struct Candidate {
    double value;
    double log_sigma;
  };
  const double inf = std::numeric_limits<double>::infinity();

  // Best objective on the feasible sigma-interval of one mu slice.
  auto best_on_slice = [&](double mu) -> Candidate {
    const auto [s_star, h_star] = slice_min(mu);
    if (h_star > radius) return {inf, s_star};
    auto excess = [&](double ls) { return to_local(mu, ls) - radius; };
    const double lo = excess(log_lo) <= 0.0 ? log_lo : bisect_boundary(excess, s_star, log_lo);
    const double hi = excess(log_hi) <= 0.0 ? log_hi : bisect_boundary(excess, s_star, log_hi);
    const double s = golden_argmin([&](double ls) { return to_global(mu, ls); }, lo, hi);
    return {to_global(mu, s), s};
  };

  // Feasible mean range: walk outward from the local mean until the slice
  // minimum leaves the sphere, then bisect.
  const double scale = std::max({std::abs(mg - mk), sg, sk, 1e-6});
  auto mean_edge = [&](double direction) {
    double step = scale;
    double inside = mk;
    double outside = mk + direction * step;
    while (slice_min(outside).second <= radius) {
      inside = outside;
      step *= 2.0;
      outside = mk + direction * step;
    }
    return bisect_boundary([&](double mu) { return slice_min(mu).second - radius; }, inside,
                           outside);
  };
  const double mu_lo = mean_edge(-1.0);
  const double mu_hi = mean_edge(+1.0);

  // Coarse grid, then repeated local refinement around the incumbent.
  double best_mu = mk;
  Candidate best = best_on_slice(mk);
  auto scan = [&](double a, double b, int points) {
    for (int i = 0; i <= points; ++i) {
      const double mu = a + (b - a) * static_cast<double>(i) / points;
      const Candidate c = best_on_slice(mu);
      if (c.value < best.value) {
        best = c;
        best_mu = mu;
      }
    }
  };
  constexpr int kCoarse = 400;
  constexpr int kFine = 40;
  scan(mu_lo, mu_hi, kCoarse);
  double step = (mu_hi - mu_lo) / kCoarse;
  while (step > 1e-13 * (1.0 + std::abs(best_mu))) {
    const double a = std::max(mu_lo, best_mu - 2.0 * step);
    const double b = std::min(mu_hi, best_mu + 2.0 * step);
    scan(a, b, kFine);
    step = (b - a) / kFine;
  }

  const double sigma = std::exp(best.log_sigma);
  Vector mean(1), var(1);
  mean << best_mu;
  var << sigma * sigma;
  return DiagGaussian(std::move(mean), std::move(var));
}

}  // namespace bfl
