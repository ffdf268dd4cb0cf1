#pragma once

#include <cmath>

#include "bfl/diag_gaussian.hpp"

namespace bfl::test {

inline DiagGaussian g1(double mean, double var) {
  Vector m(1), v(1);
  m << mean;
  v << var;
  return DiagGaussian(m, v);
}

inline DiagGaussian gd(std::initializer_list<double> mean, std::initializer_list<double> var) {
  Vector m(static_cast<Eigen::Index>(mean.size())), v(static_cast<Eigen::Index>(var.size()));
  Eigen::Index i = 0;
  for (double x : mean) m[i++] = x;
  i = 0;
  for (double x : var) v[i++] = x;
  return DiagGaussian(m, v);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace bfl::test
