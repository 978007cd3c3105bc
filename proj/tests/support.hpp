#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>

#include "elp/autodiff.hpp"
#include "elp/forward_model.hpp"
#include "elp/projection.hpp"
#include "elp/rng.hpp"
#include "elp/tensor.hpp"

namespace elp::test {

inline Tensor random_tensor(const Dims& dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(dims);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Eigen::VectorXd flat(const Tensor& t) { return t.array().matrix(); }

/// Explicit H = [D_1 ... D_B] with D_b = diag(vec(C_b)); x is vectorized frame
/// after frame, so H is (n_x n_y) x (n_x n_y B).
inline Eigen::MatrixXd dense_H(const SciSystem& s) {
  const Index n = s.rows() * s.cols();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n * s.frames());
  for (Index b = 0; b < s.frames(); ++b)
    for (Index p = 0; p < n; ++p) H(p, b * n + p) = s.masks()[b * n + p];
  return H;
}

/// Dense solve of ((sum gamma2) I + gamma1 H^T H) x = sum(lambda2 + gamma2 v) + H^T(gamma1 y - lambda1).
inline Tensor dense_projection(std::span<const PriorTerm> terms, const Tensor& y, const Tensor& lambda1,
                               double gamma1, const SciSystem& s) {
  const Eigen::MatrixXd H = dense_H(s);
  const Index N = H.cols();
  double g = 0.0;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N);
  for (const auto& t : terms) {
    g += t.gamma2;
    rhs += flat(t.lambda2) + t.gamma2 * flat(t.v);
  }
  rhs += H.transpose() * (gamma1 * flat(y) - flat(lambda1));
  const Eigen::MatrixXd A = g * Eigen::MatrixXd::Identity(N, N) + gamma1 * H.transpose() * H;
  const Eigen::VectorXd x = A.ldlt().solve(rhs);
  return Tensor(s.cube_dims(), x.array());
}

/// Relative error used by the finite-difference checks: |a - f| / max(|a|, |f|),
/// with differences below `abs_tol` treated as agreement.
inline bool fd_agrees(double analytic, double numeric, double rel_tol = 1e-4, double abs_tol = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_tol) return true;
  return diff <= rel_tol * std::max(std::abs(analytic), std::abs(numeric));
}

/// Central difference of `f` with respect to element i of `p`.
inline double central_difference(Tensor& p, Index i, const std::function<double()>& f, double h = 1e-5) {
  const double v0 = p[i];
  p[i] = v0 + h;
  const double fp = f();
  p[i] = v0 - h;
  const double fm = f();
  p[i] = v0;
  return (fp - fm) / (2.0 * h);
}

}  // namespace elp::test
