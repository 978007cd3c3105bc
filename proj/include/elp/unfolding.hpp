#pragma once

#include <functional>
#include <vector>

#include "elp/autodiff.hpp"
#include "elp/forward_model.hpp"
#include "elp/priors.hpp"
#include "elp/projection.hpp"

namespace elp {

/// Stage counts and the learnable penalties. Entry 0 of each log-gamma list
/// drives the initial projection; entry i drives stage i = 1..m+n.
struct StageSchedule {
  Index single_stages = 3;    // m
  Index ensemble_stages = 2;  // n
  std::vector<ad::Parameter> log_gamma1;
  std::vector<ad::Parameter> log_gamma2;

  static StageSchedule constant(Index single, Index ensemble, double gamma1, double gamma2);

  Index stages() const { return single_stages + ensemble_stages; }
  double gamma1(Index i) const;
  double gamma2(Index i) const;
  /// Number of prior terms the projection at stage i gathers.
  Index priors_at(Index stage) const;
  void validate() const;
  std::vector<ad::Parameter*> parameters();
};

/// Phi = weight * TV, so the stage-i denoiser uses weight / gamma2^i.
struct TvPrior {
  double weight = 0.05;
  int iters = 20;
};

/// v = u. Useful as a reference path.
struct IdentityPrior {};

/// A trained unfolded network: penalties plus one CNN prior per stage.
struct ElpNetwork {
  StageSchedule schedule;
  std::vector<CnnPrior> priors;  // priors[i-1] serves stage i

  static ElpNetwork create(Index single, Index ensemble, const CnnConfig& config, Rng& rng,
                           double gamma1 = 1.0, double gamma2 = 1.0);
  std::vector<ad::Parameter*> parameters();
  void validate() const;
};

/// Instrumentation of one run.
struct ElpStats {
  int single_projections = 0;
  int ensemble_projections = 0;
  /// Ensemble buffer length after each ensemble stage.
  std::vector<Index> buffer_sizes;
};

struct ElpResult {
  VideoCube x;    // clamped to [0, inf)
  VideoCube raw;  // unclamped x^{m+n}
  ElpStats stats;
};

ElpResult run_elp(const Measurement& y, const SciSystem& system, const ElpNetwork& network);
ElpResult run_elp(const Measurement& y, const SciSystem& system, const StageSchedule& schedule,
                  const TvPrior& prior);
ElpResult run_elp(const Measurement& y, const SciSystem& system, const StageSchedule& schedule,
                  IdentityPrior prior);

/// lambda1^i = lambda1^{i-1} - gamma1 (y - H x^{i-1}).
Measurement update_lambda1(const Measurement& lambda1_prev, double gamma1, const Measurement& y,
                           const VideoCube& x_prev, const SciSystem& system);
/// lambda2^i = lambda2^{i-1} - gamma2 (x^{i-1} - v^{i-1}).
VideoCube update_lambda2(const VideoCube& lambda2_prev, double gamma2, const VideoCube& x_prev,
                         const VideoCube& v_prev);

/// GAP data-consistency step: x = v + H^T ((y - H v) / psi).
VideoCube gap_projection(const VideoCube& v, const Measurement& y, const SciSystem& system);

/// GAP-TV baseline started from the replicated normalized measurement.
/// Returns the final denoised estimate clamped to [0,1].
VideoCube run_gap_tv(const Measurement& y, const SciSystem& system, int iters, double tv_weight,
                     int tv_iters);

namespace ad {

/// Per-stage denoiser on the tape: (stage, u, gamma2, normalized measurement) -> v.
using StageDenoiser = std::function<Var(Index stage, Var u, Var gamma2, const Tensor& y_norm)>;

struct ElpTrace {
  Var x;  // unclamped x^{m+n}
  ElpStats stats;
};

/// The unfolded iteration on a tape. gamma lists hold scalar nodes, m+n+1 each.
ElpTrace unfold(Tape& tape, const Measurement& y, const SciSystem& system, Index single,
                Index ensemble, const std::vector<Var>& gamma1, const std::vector<Var>& gamma2,
                const StageDenoiser& denoiser);

/// Places the network on a tape (trainable) and returns its unclamped output.
ElpTrace unfold_network(Tape& tape, const Measurement& y, const SciSystem& system,
                        ElpNetwork& network);

}  // namespace ad

}  // namespace elp
