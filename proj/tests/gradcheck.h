#pragma once

// Central finite-difference oracle for the autograd engine. Lives in test
// code only so it stays independent of the backward passes it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "reasonseg/autograd.h"

namespace reasonseg::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
};

/// Compares d f / d leaf against central differences for every element of
/// every leaf. Relative error is |a-n| / max(|a|, |n|, floor).
inline GradCheckResult grad_check(const std::function<ag::Var()>& f, std::vector<ag::Var> leaves,
                                  double h = 1e-6, double floor = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  ag::Var out = f();
  ag::backward(out);
  std::vector<ag::Matrix> analytic;
  for (auto& l : leaves) {
    analytic.push_back(l.has_grad() ? l.grad() : ag::Matrix::Zero(l.rows(), l.cols()));
  }
  GradCheckResult result;
  ag::NoGradGuard guard;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    ag::Matrix& v = leaves[li].mutable_value();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double orig = v.data()[i];
      v.data()[i] = orig + h;
      const double fp = f().item();
      v.data()[i] = orig - h;
      const double fm = f().item();
      v.data()[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[li].data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = "leaf " + std::to_string(li) + " elem " + std::to_string(i) + " analytic " +
                       std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  for (auto& l : leaves) l.zero_grad();
  return result;
}

inline ag::Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  ag::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

}  // namespace reasonseg::testing
