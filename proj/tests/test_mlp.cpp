#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "bfl/mlp.hpp"
#include "helpers.hpp"

using namespace bfl;

namespace {

Matrix random_inputs(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0, 1);
  Matrix x(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) x(i, j) = z(rng);
  return x;
}

Vector random_theta(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0, 0.7);
  Vector t(static_cast<Eigen::Index>(n));
  for (auto& v : t) v = z(rng);
  return t;
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("parameter counts") {
  CHECK(param_count({{2, 3}}) == 9);
  // 784*120+120 + 120*84+84 + 84*10+10
  CHECK(param_count({{784, 120, 84, 10}}) == 94200 + 10164 + 850);
  CHECK(param_count({{1, 1}}) == 2);
  CHECK_THROWS(MlpSpec{{5}}.validate());
  CHECK_THROWS(MlpSpec{{5, 0}}.validate());
}

TEST_CASE("zero parameters give zero logits") {
  const MlpSpec spec{{3, 4, 5}};
  const Matrix logits = forward(spec, Vector::Zero(param_count(spec)), random_inputs(6, 3, 1));
  CHECK(logits.cwiseAbs().maxCoeff() == 0.0);
  CHECK(softmax_rows(logits)(0, 0) == doctest::Approx(0.2));
}

TEST_CASE("single linear layer is w x + b") {
  const MlpSpec spec{{1, 2}};
  Vector theta(4);
  theta << 2.0, -3.0, 0.5, 1.0;  // W (2x1) then b
  Matrix x(2, 1);
  x << 1.5, -1.0;
  const Matrix logits = forward(spec, theta, x);
  CHECK(logits(0, 0) == 3.5);
  CHECK(logits(0, 1) == -3.5);
  CHECK(logits(1, 0) == -1.5);
  CHECK(logits(1, 1) == 4.0);
  CHECK_THROWS(forward(spec, Vector::Zero(3), x));
}

TEST_CASE("forward is row-wise") {
  const MlpSpec spec{{3, 7, 4}};
  const Vector theta = random_theta(param_count(spec), 2);
  const Matrix x = random_inputs(5, 3, 3);
  const Matrix all = forward(spec, theta, x);
  for (int i = 0; i < 5; ++i) {
    const Matrix row = forward(spec, theta, x.row(i));
    CHECK((row - all.row(i)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("uniform logits give ln C") {
  const MlpSpec spec{{4, 10}};
  const std::vector<int> labels = {0, 3, 9};
  const auto lg = loss_and_grad(spec, Vector::Zero(param_count(spec)), random_inputs(3, 4, 4), labels);
  CHECK(lg.nll == doctest::Approx(2.302585).epsilon(1e-6));
}

TEST_CASE("gradient matches central finite differences") {
  const MlpSpec spec{{4, 5, 3}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Vector theta = random_theta(param_count(spec), 100 + seed);
    const Matrix x = random_inputs(7, 4, 200 + seed);
    std::vector<int> y(7);
    for (int i = 0; i < 7; ++i) y[i] = static_cast<int>((seed + i) % 3);
    const auto lg = loss_and_grad(spec, theta, x, y);
    const double eps = 1e-5;
    Vector fd(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Vector tp = theta, tm = theta;
      tp[i] += eps;
      tm[i] -= eps;
      fd[i] = (loss_and_grad(spec, tp, x, y).nll - loss_and_grad(spec, tm, x, y).nll) / (2 * eps);
    }
    CHECK((lg.grad - fd).norm() / std::max(fd.norm(), 1e-12) < 1e-4);
  }
}

TEST_CASE("duplicating the batch leaves loss and gradient unchanged") {
  const MlpSpec spec{{3, 6, 4}};
  const Vector theta = random_theta(param_count(spec), 5);
  const Matrix x = random_inputs(4, 3, 6);
  const std::vector<int> y = {0, 1, 2, 3};
  Matrix x2(8, 3);
  x2 << x, x;
  const std::vector<int> y2 = {0, 1, 2, 3, 0, 1, 2, 3};
  const auto a = loss_and_grad(spec, theta, x, y);
  const auto b = loss_and_grad(spec, theta, x2, y2);
  CHECK(a.nll == doctest::Approx(b.nll).epsilon(1e-14));
  CHECK((a.grad - b.grad).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("loss is stable for extreme logits and rejects bad labels") {
  const MlpSpec spec{{1, 2}};
  Vector theta(4);
  theta << 1000.0, -1000.0, 0.0, 0.0;
  Matrix x(1, 1);
  x << 1.0;
  const std::vector<int> y = {1};
  const auto lg = loss_and_grad(spec, theta, x, y);
  CHECK(std::isfinite(lg.nll));
  CHECK(lg.nll == doctest::Approx(2000.0));
  const std::vector<int> bad = {2};
  CHECK_THROWS(loss_and_grad(spec, theta, x, bad));
}

TEST_CASE("glorot initialisation") {
  const MlpSpec spec{{10, 20, 3}};
  const Vector a = glorot_init(spec, 1), b = glorot_init(spec, 1);
  CHECK(a == b);
  const double lim1 = std::sqrt(6.0 / 30.0);
  CHECK(a.head(200).cwiseAbs().maxCoeff() <= lim1);
  CHECK(a.segment(200, 20).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Monte-Carlo predictive") {
  const MlpSpec spec{{3, 8, 4}};
  const Vector mean = random_theta(param_count(spec), 7);
  const Matrix x = random_inputs(10, 3, 8);
  const DiagGaussian sharp(mean, Vector::Constant(mean.size(), 1e-30));
  const Matrix det = softmax_rows(forward(spec, mean, x));
  CHECK((predict_proba_mc(spec, sharp, x, 5, 1) - det).cwiseAbs().maxCoeff() < 1e-12);

  const DiagGaussian wide(mean, Vector::Constant(mean.size(), 0.3));
  CHECK(predict_proba_mc(spec, wide, x, 1, 9) == predict_proba_mc(spec, wide, x, 1, 9));
  const Matrix p = predict_proba_mc(spec, wide, x, 10, 3);
  CHECK(p.minCoeff() >= 0.0);
  for (int i = 0; i < p.rows(); ++i) CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-9);
}

TEST_CASE("Monte-Carlo error shrinks like 1/sqrt(S)") {
  const MlpSpec spec{{2, 6, 3}};
  const Vector mean = random_theta(param_count(spec), 11);
  const DiagGaussian q(mean, Vector::Constant(mean.size(), 0.2));
  Matrix x(1, 2);
  x << 0.4, -0.3;
  const Matrix reference = predict_proba_mc(spec, q, x, 200000, 1);
  // Spread of single-sample predictions estimates the per-draw std.
  std::vector<double> singles;
  for (int s = 0; s < 2000; ++s) singles.push_back(predict_proba_mc(spec, q, x, 1, 1000 + s)(0, 0));
  double m = 0, v = 0;
  for (double s : singles) m += s;
  m /= singles.size();
  for (double s : singles) v += (s - m) * (s - m);
  const double sd = std::sqrt(v / (singles.size() - 1));
  int outside = 0;
  const int S = 50, reps = 200;
  for (int r = 0; r < reps; ++r) {
    const double est = predict_proba_mc(spec, q, x, S, 50000 + r)(0, 0);
    if (std::abs(est - reference(0, 0)) > 3 * sd / std::sqrt(double(S))) ++outside;
  }
  CHECK(outside <= 6);
}

TEST_CASE("model calls are counted") {
  const MlpSpec spec{{2, 2}};
  const auto before = model_call_count();
  forward(spec, Vector::Zero(6), Matrix::Zero(1, 2));
  CHECK(model_call_count() > before);
}

}  // TEST_SUITE
