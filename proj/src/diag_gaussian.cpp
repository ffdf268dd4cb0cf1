#include "bfl/diag_gaussian.hpp"

#include <cmath>

namespace bfl {

DiagGaussian::DiagGaussian(Vector mean, Vector var) : mean_(std::move(mean)), var_(std::move(var)) {
  if (mean_.size() < 1) throw ContractError("DiagGaussian: dimension must be >= 1");
  if (mean_.size() != var_.size()) {
    throw ContractError("DiagGaussian: mean has " + std::to_string(mean_.size()) +
                        " entries but var has " + std::to_string(var_.size()));
  }
  for (Eigen::Index i = 0; i < var_.size(); ++i) {
    if (!(var_[i] > 0.0) || !std::isfinite(var_[i])) {
      throw ContractError("DiagGaussian: var[" + std::to_string(i) + "] is not a positive finite number");
    }
    if (!std::isfinite(mean_[i])) {
      throw ContractError("DiagGaussian: mean[" + std::to_string(i) + "] is not finite");
    }
  }
}

DiagGaussian DiagGaussian::isotropic(std::size_t dim, double mean, double var) {
  const auto n = static_cast<Eigen::Index>(dim);
  return DiagGaussian(Vector::Constant(n, mean), Vector::Constant(n, var));
}

}  // namespace bfl
