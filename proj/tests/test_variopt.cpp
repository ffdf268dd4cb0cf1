#include <doctest.h>

#include <cmath>
#include <random>

#include "bfl/geometry.hpp"
#include "bfl/variopt.hpp"
#include "helpers.hpp"
#include "linreg.hpp"

using namespace bfl;

namespace {

IvonHyper hyper(double h0, double delta, std::int64_t n) {
  IvonHyper h;
  h.h0 = h0;
  h.weight_decay = delta;
  h.ess = n;
  return h;
}

}  // namespace

TEST_SUITE("variopt") {

TEST_CASE("init fills the Hessian with h0") {
  const auto s = ivon_init(3, hyper(5.0, 2e-4, 1000), 42);
  CHECK(s.hess == Vector::Constant(3, 5.0));
  CHECK(s.grad_momentum == Vector::Zero(3));
  CHECK(s.step_count == 0);
  const auto p = posterior_of(s);
  for (int i = 0; i < 3; ++i) CHECK(p.var()[i] == doctest::Approx(1.99992e-4).epsilon(1e-6));
  const auto t = ivon_init(3, hyper(5.0, 2e-4, 1000), 42);
  CHECK(t.mean == s.mean);
  CHECK_THROWS(ivon_init(3, hyper(0.0, 2e-4, 1000), 42));
  IvonHyper bad = hyper(5.0, 2e-4, 1000);
  bad.lr = 0.0;
  CHECK_THROWS(ivon_init(3, bad, 42));
}

TEST_CASE("posterior_of examples") {
  auto s = ivon_init(1, hyper(1.0, 1e-3, 1000), 0);
  s.hess << 0.0;
  CHECK(posterior_of(s).var()[0] == doctest::Approx(1.0).epsilon(1e-14));
  s.hyper = hyper(1.0, 0.0, 1);
  s.hess << 4.0;
  CHECK(posterior_of(s).var()[0] == 0.25);
}

TEST_CASE("hessian_of examples") {
  CHECK(hessian_of(test::g1(0, 1.0), 1000, 1e-3)[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(hessian_of(test::g1(0, 2.5e-4), 1000, 0.0)[0] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(hessian_of(test::g1(0, 1e6), 1000, 1e-3)[0] == 0.0);
}

TEST_CASE("variance and Hessian are inverse maps") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> lh(-3, 3), ld(-6, -1), ln(0, 5);
  for (int i = 0; i < 1000; ++i) {
    const double h = std::pow(10.0, lh(rng)), delta = std::pow(10.0, ld(rng));
    const auto n = static_cast<std::int64_t>(std::pow(10.0, ln(rng)));
    auto s = ivon_init(1, hyper(h, delta, n), 0);
    const auto back = hessian_of(posterior_of(s), n, delta);
    CHECK(test::rel_err(back[0], h) <= 1e-12);
  }
}

TEST_CASE("sampling") {
  auto s = ivon_init(2, hyper(1e30, 1e-3, 10), 1);
  std::mt19937_64 rng(3);
  CHECK((sample_params(s, rng) - s.mean).cwiseAbs().maxCoeff() < 1e-12);

  s = ivon_init(2, hyper(2.0, 1e-3, 10), 1);
  const double sd = std::sqrt(posterior_of(s).var()[0]);
  Vector acc = Vector::Zero(2);
  const int n = 100000;
  for (int i = 0; i < n; ++i) acc += sample_params(s, rng);
  acc /= n;
  CHECK((acc - s.mean).cwiseAbs().maxCoeff() < 4 * sd / std::sqrt(double(n)));

  std::mt19937_64 a(5), b(5);
  CHECK(sample_params(s, a) == sample_params(s, b));
}

TEST_CASE("zero gradient step is pure weight decay") {
  auto s = ivon_init(2, hyper(3.0, 0.1, 5), 0);
  s.mean << 1.0, -2.0;
  const Vector before = s.mean;
  ivon_step(s, Vector::Zero(2), s.mean);
  // The Hessian estimate is zero for a zero gradient, so hess decays by beta2.
  const double h = s.hyper.beta2 * 3.0;
  CHECK(s.hess[0] == h);
  const Vector expected = before - s.hyper.lr * 0.1 * before / (h + 0.1);
  CHECK((s.mean - expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(s.step_count == 1);
}

TEST_CASE("non-finite gradients fail fast with the coordinate") {
  auto s = ivon_init(3, hyper(1.0, 0.1, 5), 0);
  Vector g = Vector::Zero(3);
  g[2] = std::nan("");
  try {
    ivon_step(s, g, s.mean);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("coordinate 2") != std::string::npos);
  }
}

TEST_CASE("1-D quadratic converges to the regularised optimum and its curvature") {
  const double a = 2.0, c = 1.5, delta = 0.5;
  IvonHyper h = hyper(1.0, delta, 1);
  h.beta2 = 0.999;
  auto s = ivon_init(1, h, 0, [](std::size_t d, std::uint64_t) { return Vector::Zero(d); });
  std::mt19937_64 rng(1);
  const int steps = 30000;
  double mean_acc = 0, hess_acc = 0;
  int count = 0;
  for (int t = 0; t < steps; ++t) {
    s.hyper.lr = t < steps / 2 ? 0.1 : 0.01;
    const Vector th = sample_params(s, rng);
    ivon_step(s, a * (th.array() - c).matrix(), th);
    if (t >= steps - 10000) mean_acc += s.mean[0], hess_acc += s.hess[0], ++count;
  }
  CHECK(mean_acc / count == doctest::Approx(c * a / (a + delta)).epsilon(0.02));
  CHECK(hess_acc / count == doctest::Approx(a).epsilon(0.05));
}

TEST_CASE("conjugate linear regression matches the exact posterior") {
  const auto p = test::make_linreg(0);
  const auto exact = p.exact();
  const auto learned = posterior_of(test::fit_linreg(p, 2000, 1));
  for (int i = 0; i < 2; ++i) {
    CHECK(learned.mean()[i] == doctest::Approx(exact.mean()[i]).epsilon(0.02));
    CHECK(learned.var()[i] == doctest::Approx(exact.var()[i]).epsilon(0.10));
  }
  CHECK(divergence(Divergence::KL, learned, exact) < 0.05);
}

TEST_CASE("Hessian stays non-negative under adversarial gradients") {
  IvonHyper h = hyper(0.01, 1e-3, 50);
  h.beta2 = 0.5;
  auto s = ivon_init(4, h, 0);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0, 10);
  for (int t = 0; t < 500; ++t) {
    const Vector th = sample_params(s, rng);
    Vector g(4);
    for (int i = 0; i < 4; ++i) g[i] = -(th[i] - s.mean[i]) * std::abs(z(rng));
    ivon_step(s, g, th);
    CHECK(s.hess.minCoeff() >= 0.0);
    const auto v = posterior_of(s).var();
    CHECK(v.allFinite());
    CHECK(v.minCoeff() > 0.0);
  }
}

TEST_CASE("multi-sample step averages the draws") {
  auto s1 = ivon_init(2, hyper(2.0, 0.1, 5), 0);
  auto s2 = s1;
  Vector g(2), th(2);
  g << 0.3, -0.1;
  th = s1.mean + Vector::Constant(2, 0.01);
  const Vector gs[] = {g, g};
  const Vector ths[] = {th, th};
  ivon_step(s1, g, th);
  ivon_step(s2, gs, ths);
  CHECK((s1.mean - s2.mean).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((s1.hess - s2.hess).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("update clipping bounds the step") {
  IvonHyper h = hyper(1.0, 0.0, 10);
  h.clip_radius = 0.5;
  h.lr = 1.0;
  h.freeze_hessian = true;
  auto s = ivon_init(3, h, 0, [](std::size_t d, std::uint64_t) { return Vector::Zero(d); });
  ivon_step(s, Vector::Constant(3, 100.0), s.mean);
  CHECK(s.mean.norm() == doctest::Approx(0.5));
}

TEST_CASE("negative ELBO") {
  auto s = ivon_init(2, hyper(5.0, 2e-4, 100), 0);
  const auto prior = posterior_of(s);
  CHECK(negative_elbo(s, prior, 1.25) == 1.25);

  auto t = ivon_init(1, hyper(1.0, 0.0, 1), 0);
  t.mean << 1.0;
  CHECK(negative_elbo(t, test::g1(0, 1), 0.0) == doctest::Approx(0.5));
  CHECK_THROWS(negative_elbo(t, test::gd({0, 0}, {1, 1}), 0.0));
}

TEST_CASE("linear learning-rate schedule hits both endpoints") {
  const LrSchedule s{LrSchedule::Kind::Linear, 0.1, 0.01};
  CHECK(s.at(0, 20) == 0.1);
  CHECK(s.at(19, 20) == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(s.at(10, 20) < s.at(9, 20));
  const LrSchedule c{LrSchedule::Kind::Constant, 0.1, 0.01};
  CHECK(c.at(19, 20) == 0.1);
}

}  // TEST_SUITE
