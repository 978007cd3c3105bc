#include "elp/projection.hpp"

#include <string>

namespace elp {

namespace {

void check_gammas(double gamma1, double gamma2_sum_or_each, const char* what) {
  if (!(gamma1 >= kMinGamma1))
    throw ContractError(std::string(what) + ": gamma1 must be >= 1e-12, got " +
                        std::to_string(gamma1));
  if (!(gamma2_sum_or_each > 0.0))
    throw ContractError(std::string(what) + ": gamma2 must be positive, got " +
                        std::to_string(gamma2_sum_or_each));
}

struct Rhs {
  VideoCube value;
  double gamma2_sum = 0.0;
};

Rhs assemble_rhs(std::span<const PriorTerm> terms, const Measurement& y,
                 const Measurement& lambda1, double gamma1, const SciSystem& system) {
  if (terms.empty()) throw ContractError("project_ensemble: empty prior term list");
  Rhs r{VideoCube(system.cube_dims()), 0.0};
  for (const PriorTerm& t : terms) {
    check_gammas(gamma1, t.gamma2, "projection");
    system.masks().require_same(t.v, "projection v");
    system.masks().require_same(t.lambda2, "projection lambda2");
    r.value.array() += t.lambda2.array() + t.gamma2 * t.v.array();
    r.gamma2_sum += t.gamma2;
  }
  lambda1.require_same(y, "projection lambda1");
  r.value += apply_Ht(Measurement(y.dims(), gamma1 * y.array() - lambda1.array()), system);
  return r;
}

}  // namespace

VideoCube project_single(const PriorTerm& term, const Measurement& y, const Measurement& lambda1,
                         double gamma1, const SciSystem& system) {
  return project_ensemble(std::span<const PriorTerm>(&term, 1), y, lambda1, gamma1, system);
}

VideoCube project_ensemble(std::span<const PriorTerm> terms, const Measurement& y,
                           const Measurement& lambda1, double gamma1, const SciSystem& system) {
  const Rhs r = assemble_rhs(terms, y, lambda1, gamma1, system);
  const double g = r.gamma2_sum;
  const Measurement hr = apply_H(r.value, system);
  const Measurement w(hr.dims(), hr.array() / (g / gamma1 + system.psi().array()));
  VideoCube x = r.value - apply_Ht(w, system);
  x *= 1.0 / g;
  return x;
}

double projection_residual(const VideoCube& x, std::span<const PriorTerm> terms,
                           const Measurement& y, const Measurement& lambda1, double gamma1,
                           const SciSystem& system) {
  const Rhs r = assemble_rhs(terms, y, lambda1, gamma1, system);
  const VideoCube lhs = r.gamma2_sum * x + gamma1 * apply_Ht(apply_H(x, system), system);
  return (lhs - r.value).norm() / r.value.norm();
}

namespace ad {

Var project_single(const PriorTerm& term, Var y, Var lambda1, Var gamma1,
                   const SciSystem& system) {
  return project_ensemble(std::span<const PriorTerm>(&term, 1), y, lambda1, gamma1, system);
}

Var project_ensemble(std::span<const PriorTerm> terms, Var y, Var lambda1, Var gamma1,
                     const SciSystem& system) {
  if (terms.empty()) throw ContractError("project_ensemble: empty prior term list");
  if (!(gamma1.value()[0] >= kMinGamma1))
    throw ContractError("projection: gamma1 must be >= 1e-12, got " +
                        std::to_string(gamma1.value()[0]));
  Tape& tape = *y.tape();

  Var rhs, g;
  for (const PriorTerm& t : terms) {
    if (!(t.gamma2.value()[0] > 0.0)) throw ContractError("projection: gamma2 must be positive");
    Var term = t.lambda2 + scale(t.v, t.gamma2);
    rhs = rhs ? rhs + term : term;
    g = g ? g + t.gamma2 : t.gamma2;
  }
  rhs = rhs + apply_Ht(scale(y, gamma1) - lambda1, system);

  Var ratio = g / gamma1;
  Var denom = broadcast(ratio, system.measurement_dims()) + tape.constant(system.psi());
  Var x = rhs - apply_Ht(apply_H(rhs, system) / denom, system);
  return scale(x, tape.constant(Tensor::scalar(1.0)) / g);
}

}  // namespace ad

}  // namespace elp
