#include "bfl/mlp.hpp"

#include <atomic>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace bfl {

namespace {

std::atomic<std::uint64_t> g_model_calls{0};

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LayerView {
  Eigen::Map<const RowMajor> weight;
  Eigen::Map<const Vector> bias;
};

LayerView layer(const MlpSpec& spec, const Vector& theta, std::size_t l, std::size_t& offset) {
  const int in = spec.layer_sizes[l];
  const int out = spec.layer_sizes[l + 1];
  const double* base = theta.data() + offset;
  offset += static_cast<std::size_t>(in) * out + out;
  return {Eigen::Map<const RowMajor>(base, out, in),
          Eigen::Map<const Vector>(base + static_cast<std::ptrdiff_t>(in) * out, out)};
}

void check_theta(const MlpSpec& spec, const Vector& theta, const Matrix& inputs) {
  spec.validate();
  if (static_cast<std::size_t>(theta.size()) != param_count(spec)) {
    throw ContractError("mlp: theta has " + std::to_string(theta.size()) + " entries, expected " +
                        std::to_string(param_count(spec)));
  }
  if (inputs.cols() != spec.inputs()) {
    throw ContractError("mlp: inputs have " + std::to_string(inputs.cols()) +
                        " columns, expected " + std::to_string(spec.inputs()));
  }
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw std::runtime_error(std::string("mlp: non-finite ") + what);
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw ContractError("MlpSpec: need at least 2 layer sizes");
  for (int s : layer_sizes) {
    if (s < 1) throw ContractError("MlpSpec: layer sizes must be positive");
  }
}

std::size_t param_count(const MlpSpec& spec) {
  spec.validate();
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    const auto in = static_cast<std::size_t>(spec.layer_sizes[l]);
    const auto out = static_cast<std::size_t>(spec.layer_sizes[l + 1]);
    total += in * out + out;
  }
  return total;
}

Vector glorot_init(const MlpSpec& spec, std::uint64_t seed) {
  Vector theta = Vector::Zero(static_cast<Eigen::Index>(param_count(spec)));
  std::mt19937_64 rng(seed);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    const int in = spec.layer_sizes[l];
    const int out = spec.layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> uni(-bound, bound);
    for (int i = 0; i < in * out; ++i) theta[static_cast<Eigen::Index>(offset) + i] = uni(rng);
    offset += static_cast<std::size_t>(in) * out + out;
  }
  return theta;
}

Matrix forward(const MlpSpec& spec, const Vector& theta, const Matrix& inputs) {
  check_theta(spec, theta, inputs);
  g_model_calls.fetch_add(1, std::memory_order_relaxed);
  Matrix a = inputs;
  std::size_t offset = 0;
  const std::size_t layers = spec.layer_sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const LayerView lv = layer(spec, theta, l, offset);
    Matrix z = a * lv.weight.transpose();
    z.rowwise() += lv.bias.transpose();
    a = (l + 1 < layers) ? Matrix(z.cwiseMax(0.0)) : z;
  }
  require_finite(a, "logits");
  return a;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double m = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

LossGrad loss_and_grad(const MlpSpec& spec, const Vector& theta, const Matrix& inputs,
                       std::span<const int> labels) {
  check_theta(spec, theta, inputs);
  const Eigen::Index n = inputs.rows();
  if (static_cast<std::size_t>(n) != labels.size() || n == 0) {
    throw ContractError("loss_and_grad: batch needs matching, non-zero rows and labels");
  }
  g_model_calls.fetch_add(1, std::memory_order_relaxed);

  const std::size_t layers = spec.layer_sizes.size() - 1;
  std::vector<Matrix> acts;  // acts[l] is the input to layer l
  std::vector<Matrix> pre;   // pre-activations
  acts.reserve(layers + 1);
  pre.reserve(layers);
  acts.push_back(inputs);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const LayerView lv = layer(spec, theta, l, offset);
    Matrix z = acts.back() * lv.weight.transpose();
    z.rowwise() += lv.bias.transpose();
    require_finite(z, "activation");
    acts.push_back(l + 1 < layers ? Matrix(z.cwiseMax(0.0)) : z);
    pre.push_back(std::move(z));
  }

  // Stable log-softmax.
  const Matrix& logits = pre.back();
  Matrix delta(n, logits.cols());
  double nll = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= spec.classes()) throw ContractError("loss_and_grad: label out of range");
    const double m = logits.row(r).maxCoeff();
    const auto shifted = (logits.row(r).array() - m).eval();
    const double log_z = std::log(shifted.exp().sum());
    nll -= shifted(y) - log_z;
    delta.row(r) = (shifted - log_z).exp().matrix();
    delta(r, y) -= 1.0;
  }
  nll /= static_cast<double>(n);
  delta /= static_cast<double>(n);

  Vector grad = Vector::Zero(theta.size());
  std::vector<std::size_t> offsets(layers);
  offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += static_cast<std::size_t>(spec.layer_sizes[l]) * spec.layer_sizes[l + 1] +
              spec.layer_sizes[l + 1];
  }
  for (std::size_t l = layers; l-- > 0;) {
    const int in = spec.layer_sizes[l];
    const int out = spec.layer_sizes[l + 1];
    double* base = grad.data() + offsets[l];
    Eigen::Map<RowMajor>(base, out, in) = delta.transpose() * acts[l];
    Eigen::Map<Vector>(base + static_cast<std::ptrdiff_t>(in) * out, out) =
        delta.colwise().sum().transpose();
    if (l > 0) {
      std::size_t o = offsets[l];
      const LayerView lv = layer(spec, theta, l, o);
      Matrix back = delta * lv.weight;
      delta = back.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return {nll, std::move(grad)};
}

Matrix predict_proba_mc(const MlpSpec& spec, const DiagGaussian& posterior, const Matrix& inputs,
                        int samples, std::uint64_t seed) {
  if (samples < 1) throw ContractError("predict_proba_mc: samples must be >= 1");
  if (posterior.dim() != param_count(spec)) {
    throw ContractError("predict_proba_mc: posterior dimension does not match the model");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Vector sd = posterior.stddev();
  Matrix probs = Matrix::Zero(inputs.rows(), spec.classes());
  Vector theta(posterior.dim());
  for (int s = 0; s < samples; ++s) {
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      theta[i] = posterior.mean()[i] + sd[i] * normal(rng);
    }
    probs += softmax_rows(forward(spec, theta, inputs));
  }
  return probs / static_cast<double>(samples);
}

std::uint64_t model_call_count() { return g_model_calls.load(std::memory_order_relaxed); }

}  // namespace bfl
