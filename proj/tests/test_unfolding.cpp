#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "elp/metrics.hpp"
#include "elp/tensor_ops.hpp"
#include "elp/training.hpp"
#include "elp/unfolding.hpp"
#include "support.hpp"

using namespace elp;
using elp::test::random_tensor;

namespace {

VideoCube moving_square(Index B, Index n, std::uint64_t seed) {
  Rng rng(seed);
  return synth_scene(SceneKind::MovingSquare, n, n, B, 1, 1, rng).frames;
}

/// Plain-function transcription of the unfolded iteration, written against
/// the per-step operations only.
VideoCube reference_loop(const Measurement& y, const SciSystem& s, const StageSchedule& sched,
                         const std::function<VideoCube(const VideoCube&, double)>& denoise) {
  VideoCube v(s.cube_dims()), lambda2(s.cube_dims());
  Measurement lambda1(s.measurement_dims());
  VideoCube x = project_single({v, lambda2, sched.gamma2(0)}, y, lambda1, sched.gamma1(0), s);
  std::vector<PriorTerm> buffer;
  const Index m = sched.single_stages;
  for (Index i = 1; i <= sched.stages(); ++i) {
    const double g1 = sched.gamma1(i), g2 = sched.gamma2(i);
    const VideoCube v_new = denoise(x - (1.0 / g2) * lambda2, g2);
    lambda2 = update_lambda2(lambda2, g2, x, v);
    lambda1 = update_lambda1(lambda1, g1, y, x, s);
    v = v_new;
    if (i < m) {
      x = project_single({v, lambda2, g2}, y, lambda1, g1, s);
    } else {
      buffer.push_back({v, lambda2, g2});
      x = project_ensemble(buffer, y, lambda1, g1, s);
    }
  }
  return x;
}

StageSchedule varied_schedule(Index m, Index n, Rng& rng) {
  StageSchedule s = StageSchedule::constant(m, n, 1.0, 1.0);
  for (auto& p : s.log_gamma1) p.value[0] = std::log(rng.uniform(0.3, 2.0));
  for (auto& p : s.log_gamma2) p.value[0] = std::log(rng.uniform(0.05, 1.0));
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Multiplier updates

TEST_CASE("update_lambda1: zero residual leaves it unchanged") {
  Rng rng(1);
  const SciSystem s(random_exposed_masks(3, 4, 4, rng));
  const VideoCube x = random_tensor({3, 4, 4}, rng);
  const Measurement l = random_tensor({4, 4}, rng);
  CHECK((update_lambda1(l, 1.3, apply_H(x, s), x, s) - l).max_abs() < 1e-15);
}

TEST_CASE("update_lambda1: constant residual 0.5 with gamma1 = 2 gives -1") {
  const SciSystem s(MaskStack::Constant({1, 3, 3}, 1.0));
  const Measurement y = Measurement::Constant({3, 3}, 0.5);
  const Measurement l = update_lambda1(Measurement({3, 3}), 2.0, y, VideoCube({1, 3, 3}), s);
  CHECK((l.array() == -1.0).all());
}

TEST_CASE("update_lambda1 rejects non-positive gamma1") {
  const SciSystem s(MaskStack::Constant({1, 2, 2}, 1.0));
  CHECK_THROWS_AS(update_lambda1(Measurement({2, 2}), 0.0, Measurement({2, 2}), VideoCube({1, 2, 2}), s),
                  ContractError);
}

TEST_CASE("update_lambda2 examples") {
  Rng rng(2);
  const VideoCube x = random_tensor({2, 3, 3}, rng), l = random_tensor({2, 3, 3}, rng);
  CHECK(update_lambda2(l, 0.7, x, x) == l);
  const VideoCube one = update_lambda2(VideoCube({2, 3, 3}), 1.0, VideoCube::Constant({2, 3, 3}, 1.0),
                                       VideoCube({2, 3, 3}));
  CHECK((one.array() == -1.0).all());
  CHECK_THROWS_AS(update_lambda2(l, 1.0, x, VideoCube({2, 3, 4})), ShapeError);
  CHECK_THROWS_AS(update_lambda2(l, 0.0, x, x), ContractError);
}

TEST_CASE("update_lambda2 matches elementwise arithmetic on a random instance") {
  Rng rng(3);
  const VideoCube l = random_tensor({3, 4, 5}, rng), x = random_tensor({3, 4, 5}, rng),
                  v = random_tensor({3, 4, 5}, rng);
  const VideoCube got = update_lambda2(l, 0.37, x, v);
  for (Index i = 0; i < l.size(); ++i) CHECK(got[i] == doctest::Approx(l[i] - 0.37 * (x[i] - v[i])).epsilon(1e-15));
}

// ---------------------------------------------------------------------------
// Schedule and network bookkeeping

TEST_CASE("schedule: priors per stage and penalty count") {
  const StageSchedule s = StageSchedule::constant(8, 5, 1.0, 1.0);
  CHECK(s.log_gamma1.size() == 14);
  CHECK(s.priors_at(3) == 1);
  CHECK(s.priors_at(8) == 1);
  CHECK(s.priors_at(9) == 2);
  CHECK(s.priors_at(13) == 6);
  CHECK(s.gamma1(4) == doctest::Approx(1.0));
}

TEST_CASE("schedule contract errors") {
  CHECK_THROWS_AS(StageSchedule::constant(0, 2, 1.0, 1.0), ContractError);
  CHECK_THROWS_AS(StageSchedule::constant(2, 1, 0.0, 1.0), ContractError);
  StageSchedule s = StageSchedule::constant(2, 1, 1.0, 1.0);
  s.log_gamma2.pop_back();
  CHECK_THROWS_AS(s.validate(), ShapeError);
}

TEST_CASE("network: one prior per stage, only the first uses the first-prior topology") {
  Rng rng(4);
  CnnConfig c;
  c.frames = 2;
  c.widths = {2, 2};
  ElpNetwork net = ElpNetwork::create(2, 2, c, rng);
  CHECK(net.priors.size() == 4);
  CHECK(net.priors[0].first());
  CHECK_FALSE(net.priors[3].first());
  net.priors.pop_back();
  CHECK_THROWS_AS(net.validate(), ShapeError);
}

// ---------------------------------------------------------------------------
// The solver

TEST_CASE("run_elp with TV priors matches the plain-function reference loop") {
  Rng rng(5);
  const VideoCube truth = moving_square(4, 16, 50);
  const SciSystem s(random_exposed_masks(4, 16, 16, rng));
  const Measurement y = encode(truth, s, 0.0, rng);
  const TvPrior tv{0.03, 10};
  for (auto [m, n] : {std::pair<Index, Index>{3, 0}, {3, 2}, {1, 4}}) {
    const StageSchedule sched = varied_schedule(m, n, rng);
    const ElpResult r = run_elp(y, s, sched, tv);
    const VideoCube ref = reference_loop(y, s, sched, [&](const VideoCube& u, double g2) {
      return denoise_tv(u, tv.weight / g2, tv.iters);
    });
    CHECK((r.raw - ref).max_abs() < 1e-12);
  }
}

TEST_CASE("run_elp with a CNN network matches the reference loop driven by denoise_cnn") {
  Rng rng(6);
  CnnConfig c;
  c.frames = 4;
  c.widths = {3, 4};
  const ElpNetwork net = ElpNetwork::create(2, 2, c, rng, 0.9, 0.4);
  const SciSystem s(random_exposed_masks(4, 8, 8, rng));
  const Measurement y = encode(random_tensor({4, 8, 8}, rng, 0.0, 1.0), s, 0.0, rng);
  const Tensor y_norm = normalized_measurement(y, s);
  std::optional<FeatureLedger> ledger;
  Index stage = 0;
  const VideoCube ref = reference_loop(y, s, net.schedule, [&](const VideoCube& u, double g2) {
    CnnOutput out = denoise_cnn({u, g2, y_norm}, net.priors[static_cast<std::size_t>(stage++)], ledger);
    ledger = std::move(out.ledger);
    return out.v;
  });
  CHECK((run_elp(y, s, net).raw - ref).max_abs() < 1e-12);
}

TEST_CASE("projection counts and ensemble buffer sizes") {
  Rng rng(7);
  const SciSystem s(random_exposed_masks(2, 8, 8, rng));
  const Measurement y = random_tensor({8, 8}, rng, 0.0, 2.0);

  const ElpResult a = run_elp(y, s, StageSchedule::constant(4, 0, 1.0, 0.5), IdentityPrior{});
  CHECK(a.stats.single_projections == 5);
  CHECK(a.stats.ensemble_projections == 0);
  CHECK(a.stats.buffer_sizes.empty());

  const ElpResult b = run_elp(y, s, StageSchedule::constant(8, 5, 1.0, 0.5), IdentityPrior{});
  CHECK(b.stats.single_projections == 9);
  CHECK(b.stats.ensemble_projections == 5);
  CHECK(b.stats.buffer_sizes == std::vector<Index>{2, 3, 4, 5, 6});
}

TEST_CASE("output keeps the cube dims and the clamped copy is non-negative") {
  Rng rng(8);
  const SciSystem s(random_exposed_masks(3, 8, 12, rng));
  const Measurement y = random_tensor({8, 12}, rng, -1.0, 2.0);
  const ElpResult r = run_elp(y, s, StageSchedule::constant(2, 1, 1.0, 0.5), TvPrior{});
  CHECK(r.x.dims() == Dims{3, 8, 12});
  CHECK(r.raw.dims() == Dims{3, 8, 12});
  CHECK(r.x.array().minCoeff() >= 0.0);
  CHECK((r.x.array() == r.raw.array().max(0.0)).all());
}

TEST_CASE("identity prior on an invertible B = 1 system recovers the scene") {
  Rng rng(9);
  const VideoCube truth = moving_square(1, 16, 90);
  const SciSystem s(MaskStack::Constant({1, 16, 16}, 1.0));
  const Measurement y = encode(truth, s, 0.0, rng);
  const ElpResult r = run_elp(y, s, StageSchedule::constant(30, 0, 1.0, 1e-4), IdentityPrior{});
  CHECK(mean_psnr(r.x, truth) >= 60.0);
}

TEST_CASE("TV-prior ELP beats the replicated normalized measurement") {
  Rng rng(10);
  const VideoCube truth = moving_square(4, 32, 100);
  const SciSystem s(random_exposed_masks(4, 32, 32, rng));
  const Measurement y = encode(truth, s, 0.0, rng);
  const VideoCube baseline = replicate_frames(normalized_measurement(y, s), 4);
  const ElpResult r = run_elp(y, s, StageSchedule::constant(3, 2, 1.0, 0.1), TvPrior{0.01, 20});
  CHECK(mean_psnr(r.x, truth) > mean_psnr(baseline, truth));
}

TEST_CASE("dims and degenerate masks propagate as errors") {
  Rng rng(11);
  const SciSystem s(random_exposed_masks(2, 4, 4, rng));
  CHECK_THROWS_AS(run_elp(Measurement({4, 5}), s, StageSchedule::constant(1, 0, 1, 1), IdentityPrior{}),
                  ShapeError);
  MaskStack m = MaskStack::Constant({2, 4, 4}, 1.0);
  m(0, 3, 1) = m(1, 3, 1) = 0.0;
  CHECK_THROWS_AS(run_elp(Measurement({4, 4}), SciSystem(m), StageSchedule::constant(1, 0, 1, 1),
                          IdentityPrior{}),
                  DegenerateMaskError);
}

// ---------------------------------------------------------------------------
// GAP-TV baseline

TEST_CASE("GAP projection is exactly data consistent") {
  Rng rng(12);
  for (int t = 0; t < 10; ++t) {
    const SciSystem s(random_exposed_masks(1 + static_cast<Index>(rng.below(8)), 9, 7, rng));
    const VideoCube v = random_tensor(s.cube_dims(), rng);
    const Measurement y = random_tensor({9, 7}, rng);
    CHECK((apply_H(gap_projection(v, y, s), s) - y).max_abs() < 1e-10);
  }
}

TEST_CASE("GAP-TV with zero iterations returns the replicated normalized measurement") {
  Rng rng(13);
  const SciSystem s(random_exposed_masks(3, 8, 8, rng));
  const Measurement y = encode(moving_square(3, 8, 130), s, 0.0, rng);
  VideoCube expected = replicate_frames(normalized_measurement(y, s), 3);
  expected.array() = expected.array().max(0.0).min(1.0);
  CHECK(run_gap_tv(y, s, 0, 0.02, 10) == expected);
  CHECK_THROWS_AS(run_gap_tv(y, s, -1, 0.02, 10), ContractError);
}

TEST_CASE("GAP-TV recovers an invertible B = 1 system") {
  Rng rng(14);
  const VideoCube truth = moving_square(1, 16, 140);
  const SciSystem s(MaskStack::Constant({1, 16, 16}, 1.0));
  CHECK(mean_psnr(run_gap_tv(encode(truth, s, 0.0, rng), s, 50, 0.02, 20), truth) >= 40.0);
}

TEST_CASE("GAP-TV output lies in [0, 1] and improves on its initialization") {
  Rng rng(15);
  const VideoCube truth = moving_square(4, 32, 150);
  const SciSystem s(random_exposed_masks(4, 32, 32, rng));
  const Measurement y = encode(truth, s, 0.0, rng);
  const VideoCube x = run_gap_tv(y, s, 40, 0.03, 20);
  CHECK(x.array().minCoeff() >= 0.0);
  CHECK(x.array().maxCoeff() <= 1.0);
  CHECK(mean_psnr(x, truth) > mean_psnr(run_gap_tv(y, s, 0, 0.03, 20), truth));
}

TEST_CASE("GAP projection names the first dark pixel") {
  MaskStack m = MaskStack::Constant({2, 3, 3}, 1.0);
  m(0, 2, 0) = m(1, 2, 0) = 0.0;
  try {
    gap_projection(VideoCube({2, 3, 3}), Measurement({3, 3}), SciSystem(m));
    FAIL("expected DegenerateMaskError");
  } catch (const DegenerateMaskError& e) {
    CHECK(e.row() == 2);
    CHECK(e.col() == 0);
  }
}
