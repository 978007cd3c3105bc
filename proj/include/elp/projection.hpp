#pragma once

#include <span>
#include <vector>

#include "elp/autodiff.hpp"
#include "elp/forward_model.hpp"

namespace elp {

/// One retained prior output (v, lambda2, gamma2) entering the x-update.
template <typename Cube, typename Gamma>
struct BasicPriorTerm {
  Cube v;
  Cube lambda2;
  Gamma gamma2;
};

using PriorTerm = BasicPriorTerm<VideoCube, double>;

/// Smallest gamma1 accepted; lambda1/gamma1 would otherwise blow up silently.
inline constexpr double kMinGamma1 = 1e-12;

/// Solves (gamma2 I + gamma1 H^T H) x = lambda2 + gamma2 v + gamma1 H^T (y - lambda1/gamma1).
VideoCube project_single(const PriorTerm& term, const Measurement& y, const Measurement& lambda1,
                         double gamma1, const SciSystem& system);

/// Solves ((sum_k gamma2_k) I + gamma1 H^T H) x
///        = sum_k (lambda2_k + gamma2_k v_k) + gamma1 H^T (y - lambda1/gamma1).
///
/// H H^T = diag(psi), so by Woodbury
///   (g I + gamma1 H^T H)^{-1} r = (r - H^T (H r / (g/gamma1 + psi))) / g,
/// which costs O(n_x n_y B) and never forms H.
VideoCube project_ensemble(std::span<const PriorTerm> terms, const Measurement& y,
                           const Measurement& lambda1, double gamma1, const SciSystem& system);

/// ||(g I + gamma1 H^T H) x - rhs|| / ||rhs|| evaluated with the operators.
double projection_residual(const VideoCube& x, std::span<const PriorTerm> terms,
                           const Measurement& y, const Measurement& lambda1, double gamma1,
                           const SciSystem& system);

namespace ad {

/// gamma2 is a scalar node so the penalty can be trained.
using PriorTerm = BasicPriorTerm<Var, Var>;

Var project_single(const PriorTerm& term, Var y, Var lambda1, Var gamma1, const SciSystem& system);
Var project_ensemble(std::span<const PriorTerm> terms, Var y, Var lambda1, Var gamma1,
                     const SciSystem& system);

}  // namespace ad

}  // namespace elp
