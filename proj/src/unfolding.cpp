#include "elp/unfolding.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace elp {

StageSchedule StageSchedule::constant(Index single, Index ensemble, double gamma1, double gamma2) {
  if (!(gamma1 > 0.0) || !(gamma2 > 0.0))
    throw ContractError("StageSchedule: gammas must be positive");
  StageSchedule s;
  s.single_stages = single;
  s.ensemble_stages = ensemble;
  for (Index i = 0; i <= single + ensemble; ++i) {
    s.log_gamma1.emplace_back("log_gamma1." + std::to_string(i), Tensor::scalar(std::log(gamma1)));
    s.log_gamma2.emplace_back("log_gamma2." + std::to_string(i), Tensor::scalar(std::log(gamma2)));
  }
  s.validate();
  return s;
}

double StageSchedule::gamma1(Index i) const {
  return std::exp(log_gamma1.at(static_cast<std::size_t>(i)).value[0]);
}

double StageSchedule::gamma2(Index i) const {
  return std::exp(log_gamma2.at(static_cast<std::size_t>(i)).value[0]);
}

Index StageSchedule::priors_at(Index stage) const {
  return stage <= single_stages ? 1 : stage - single_stages + 1;
}

void StageSchedule::validate() const {
  if (single_stages < 0 || ensemble_stages < 0)
    throw ContractError("StageSchedule: stage counts must be non-negative");
  if (ensemble_stages > 0 && single_stages < 1)
    throw ContractError("StageSchedule: the ensemble period needs at least one single-prior stage");
  const auto want = static_cast<std::size_t>(stages() + 1);
  if (log_gamma1.size() != want || log_gamma2.size() != want)
    throw ShapeError("StageSchedule: expected " + std::to_string(want) + " penalties per list");
}

std::vector<ad::Parameter*> StageSchedule::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& p : log_gamma1) out.push_back(&p);
  for (auto& p : log_gamma2) out.push_back(&p);
  return out;
}

ElpNetwork ElpNetwork::create(Index single, Index ensemble, const CnnConfig& config, Rng& rng,
                              double gamma1, double gamma2) {
  ElpNetwork net;
  net.schedule = StageSchedule::constant(single, ensemble, gamma1, gamma2);
  for (Index i = 1; i <= net.schedule.stages(); ++i)
    net.priors.emplace_back(config, i == 1, rng, "stage" + std::to_string(i));
  return net;
}

std::vector<ad::Parameter*> ElpNetwork::parameters() {
  auto out = schedule.parameters();
  for (auto& p : priors)
    for (auto* q : p.parameters()) out.push_back(q);
  return out;
}

void ElpNetwork::validate() const {
  schedule.validate();
  if (static_cast<Index>(priors.size()) != schedule.stages())
    throw ShapeError("ElpNetwork: " + std::to_string(priors.size()) + " priors for " +
                     std::to_string(schedule.stages()) + " stages");
  for (std::size_t i = 0; i < priors.size(); ++i)
    if (priors[i].first() != (i == 0))
      throw ShapeError("ElpNetwork: only the stage-1 prior may use the first-prior topology");
}

Measurement update_lambda1(const Measurement& lambda1_prev, double gamma1, const Measurement& y,
                           const VideoCube& x_prev, const SciSystem& system) {
  if (!(gamma1 > 0.0)) throw ContractError("update_lambda1: gamma1 must be positive");
  lambda1_prev.require_same(y, "update_lambda1");
  return lambda1_prev - gamma1 * (y - apply_H(x_prev, system));
}

VideoCube update_lambda2(const VideoCube& lambda2_prev, double gamma2, const VideoCube& x_prev,
                         const VideoCube& v_prev) {
  if (!(gamma2 > 0.0)) throw ContractError("update_lambda2: gamma2 must be positive");
  lambda2_prev.require_same(x_prev, "update_lambda2");
  x_prev.require_same(v_prev, "update_lambda2");
  return lambda2_prev - gamma2 * (x_prev - v_prev);
}

namespace ad {

ElpTrace unfold(Tape& tape, const Measurement& y, const SciSystem& system, Index single,
                Index ensemble, const std::vector<Var>& gamma1, const std::vector<Var>& gamma2,
                const StageDenoiser& denoiser) {
  const Index stages = single + ensemble;
  if (static_cast<Index>(gamma1.size()) != stages + 1 ||
      static_cast<Index>(gamma2.size()) != stages + 1)
    throw ShapeError("unfold: penalty lists must have m+n+1 entries");
  if (ensemble > 0 && single < 1)
    throw ContractError("unfold: the ensemble period needs at least one single-prior stage");

  const Tensor y_norm = normalized_measurement(y, system);
  const Var Y = tape.constant(y);
  const Var one = tape.constant(Tensor::scalar(1.0));

  Var v = tape.constant(VideoCube(system.cube_dims()));
  Var lambda1 = tape.constant(Measurement(system.measurement_dims()));
  Var lambda2 = tape.constant(VideoCube(system.cube_dims()));

  ElpTrace trace;
  Var x = project_single({v, lambda2, gamma2[0]}, Y, lambda1, gamma1[0], system);
  ++trace.stats.single_projections;

  std::vector<PriorTerm> buffer;
  for (Index i = 1; i <= stages; ++i) {
    const auto si = static_cast<std::size_t>(i);
    Var u = x - scale(lambda2, one / gamma2[si]);
    Var v_next = denoiser(i, u, gamma2[si], y_norm);
    lambda2 = lambda2 - scale(x - v, gamma2[si]);
    lambda1 = lambda1 - scale(Y - apply_H(x, system), gamma1[si]);
    v = v_next;

    if (i <= single) {
      x = project_single({v, lambda2, gamma2[si]}, Y, lambda1, gamma1[si], system);
      ++trace.stats.single_projections;
      if (i == single && ensemble > 0) buffer.push_back({v, lambda2, gamma2[si]});
    } else {
      buffer.push_back({v, lambda2, gamma2[si]});
      x = project_ensemble(buffer, Y, lambda1, gamma1[si], system);
      ++trace.stats.ensemble_projections;
      trace.stats.buffer_sizes.push_back(static_cast<Index>(buffer.size()));
    }
  }
  trace.x = x;
  return trace;
}

namespace {

StageDenoiser cnn_denoiser(std::vector<CnnPrior::Bound> bound) {
  auto ledger = std::make_shared<FeatureLedger>();
  auto priors = std::make_shared<std::vector<CnnPrior::Bound>>(std::move(bound));
  return [ledger, priors](Index stage, Var u, Var gamma2, const Tensor& y_norm) {
    const auto& prior = (*priors)[static_cast<std::size_t>(stage - 1)];
    const bool first = ledger->scales.empty();
    auto out = denoise_cnn({u, gamma2, y_norm}, prior, first ? nullptr : ledger.get());
    *ledger = std::move(out.ledger);
    return out.v;
  };
}

}  // namespace

ElpTrace unfold_network(Tape& tape, const Measurement& y, const SciSystem& system,
                        ElpNetwork& network) {
  network.validate();
  auto& s = network.schedule;
  std::vector<Var> g1, g2;
  for (auto& p : s.log_gamma1) g1.push_back(exp(tape.param(p)));
  for (auto& p : s.log_gamma2) g2.push_back(exp(tape.param(p)));
  std::vector<CnnPrior::Bound> bound;
  for (auto& p : network.priors) bound.push_back(p.bind(tape));
  return unfold(tape, y, system, s.single_stages, s.ensemble_stages, g1, g2,
                cnn_denoiser(std::move(bound)));
}

}  // namespace ad

namespace {

ElpResult run_frozen(const Measurement& y, const SciSystem& system, const StageSchedule& schedule,
                     const std::function<ad::StageDenoiser(ad::Tape&)>& make_denoiser) {
  schedule.validate();
  ad::Tape tape;
  std::vector<ad::Var> g1, g2;
  for (Index i = 0; i <= schedule.stages(); ++i) {
    g1.push_back(tape.constant(Tensor::scalar(schedule.gamma1(i))));
    g2.push_back(tape.constant(Tensor::scalar(schedule.gamma2(i))));
  }
  auto trace = ad::unfold(tape, y, system, schedule.single_stages, schedule.ensemble_stages, g1,
                          g2, make_denoiser(tape));
  ElpResult r;
  r.raw = trace.x.value();
  r.x = VideoCube(r.raw.dims(), r.raw.array().max(0.0));
  r.stats = std::move(trace.stats);
  return r;
}

}  // namespace

ElpResult run_elp(const Measurement& y, const SciSystem& system, const ElpNetwork& network) {
  network.validate();
  return run_frozen(y, system, network.schedule, [&network](ad::Tape& tape) {
    std::vector<CnnPrior::Bound> bound;
    for (const auto& p : network.priors) bound.push_back(p.bind_frozen(tape));
    return ad::cnn_denoiser(std::move(bound));
  });
}

ElpResult run_elp(const Measurement& y, const SciSystem& system, const StageSchedule& schedule,
                  const TvPrior& prior) {
  return run_frozen(y, system, schedule, [prior](ad::Tape& tape) -> ad::StageDenoiser {
    return [&tape, prior](Index, ad::Var u, ad::Var gamma2, const Tensor&) {
      const double w = prior.weight / gamma2.value()[0];
      return tape.opaque("denoise_tv", denoise_tv(u.value(), w, prior.iters), {u, gamma2});
    };
  });
}

ElpResult run_elp(const Measurement& y, const SciSystem& system, const StageSchedule& schedule,
                  IdentityPrior) {
  return run_frozen(y, system, schedule, [](ad::Tape&) -> ad::StageDenoiser {
    return [](Index, ad::Var u, ad::Var, const Tensor&) { return u; };
  });
}

VideoCube gap_projection(const VideoCube& v, const Measurement& y, const SciSystem& system) {
  const Tensor& psi = system.psi();
  for (Index i = 0; i < psi.dim(0); ++i)
    for (Index j = 0; j < psi.dim(1); ++j)
      if (!(psi(i, j) > 0.0)) throw DegenerateMaskError(i, j);
  const Measurement r = y - apply_H(v, system);
  return v + apply_Ht(Measurement(r.dims(), r.array() / psi.array()), system);
}

VideoCube run_gap_tv(const Measurement& y, const SciSystem& system, int iters, double tv_weight,
                     int tv_iters) {
  if (iters < 0) throw ContractError("run_gap_tv: iters must be non-negative");
  VideoCube v = replicate_frames(normalized_measurement(y, system), system.frames());
  for (int it = 0; it < iters; ++it) v = denoise_tv(gap_projection(v, y, system), tv_weight, tv_iters);
  v.array() = v.array().max(0.0).min(1.0);
  return v;
}

}  // namespace elp
