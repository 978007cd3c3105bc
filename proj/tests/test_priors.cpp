#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "elp/priors.hpp"
#include "elp/tensor_ops.hpp"
#include "support.hpp"

using namespace elp;
using elp::test::central_difference;
using elp::test::fd_agrees;
using elp::test::random_tensor;

namespace {

CnnConfig small_config(Index frames = 4) {
  CnnConfig c;
  c.frames = frames;
  c.widths = {4, 6, 8};
  return c;
}

DenoiserInput random_input(Index B, Index H, Index W, Rng& rng) {
  return {random_tensor({B, H, W}, rng, 0.0, 1.0), 0.3, random_tensor({H, W}, rng, 0.0, 1.0)};
}

}  // namespace

// ---------------------------------------------------------------------------
// TV

TEST_CASE("TV leaves a constant cube unchanged") {
  const VideoCube u = VideoCube::Constant({2, 6, 6}, 0.4);
  CHECK(denoise_tv(u, 0.1, 30) == u);
}

TEST_CASE("TV with a vanishing weight is the identity") {
  Rng rng(1);
  const VideoCube u = random_tensor({2, 6, 6}, rng);
  CHECK(denoise_tv(u, 1e-13, 30) == u);
  CHECK(denoise_tv(u, 0.0, 30) == u);
}

TEST_CASE("TV strictly lowers the objective on a noisy step image") {
  Rng rng(2);
  VideoCube u({1, 16, 16});
  for (Index i = 0; i < 16; ++i)
    for (Index j = 0; j < 16; ++j) u(0, i, j) = (j < 8 ? 0.2 : 0.8) + 0.05 * rng.normal();
  const VideoCube v = denoise_tv(u, 0.1, 50);
  CHECK(tv_objective(v, u, 0.1) < tv_objective(u, u, 0.1));
  CHECK(total_variation(v) < total_variation(u));
}

TEST_CASE("TV never increases the objective") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const VideoCube u = random_tensor({2, 5 + static_cast<Index>(rng.below(6)), 7}, rng);
    const double w = rng.uniform(0.001, 1.0);
    const int iters = 1 + static_cast<int>(rng.below(40));
    CHECK(tv_objective(denoise_tv(u, w, iters), u, w) <= tv_objective(u, u, w));
  }
}

TEST_CASE("TV is deterministic") {
  Rng rng(4);
  const VideoCube u = random_tensor({3, 8, 8}, rng);
  CHECK(denoise_tv(u, 0.2, 20) == denoise_tv(u, 0.2, 20));
}

// ---------------------------------------------------------------------------
// CNN

TEST_CASE("zero weights give v = u and an all-zero ledger") {
  Rng rng(5);
  const CnnPrior p = CnnPrior::zeros(small_config(), true);
  const DenoiserInput in = random_input(4, 8, 8, rng);
  const CnnOutput out = denoise_cnn(in, p, std::nullopt);
  CHECK(out.v == in.u);
  REQUIRE(out.ledger.scales.size() == 3);
  for (const auto& e : out.ledger.scales) CHECK(e.max_abs() == 0.0);
}

TEST_CASE("output keeps B channels and the spatial size, for several sizes") {
  Rng rng(6);
  const CnnPrior p(small_config(), true, rng);
  for (Index n : {32, 48}) {
    const CnnOutput out = denoise_cnn(random_input(4, n, n, rng), p, std::nullopt);
    CHECK(out.v.dims() == Dims{4, n, n});
    CHECK(out.ledger.scales[0].dims() == Dims{4, n, n});
    CHECK(out.ledger.scales[2].dims() == Dims{8, n / 4, n / 4});
  }
}

TEST_CASE("the network input has B_max + 2 channels") {
  const CnnPrior p = CnnPrior::zeros(small_config(5), true);
  CHECK(p.input_channels() == 7);
  CHECK(const_cast<CnnPrior&>(p).encoder()[0][0].kernel.value.dim(1) == 7);
}

TEST_CASE("fewer frames than the prior was built for are rearranged and sliced back") {
  Rng rng(7);
  const CnnPrior p(small_config(8), true, rng);
  const CnnOutput out = denoise_cnn(random_input(3, 8, 8, rng), p, std::nullopt);
  CHECK(out.v.dims() == Dims{3, 8, 8});
  CHECK_THROWS_AS(denoise_cnn(random_input(9, 8, 8, rng), p, std::nullopt), ContractError);
}

TEST_CASE("temporal index repeats and truncates") {
  CHECK(temporal_index(3, 8) == std::vector<Index>{0, 1, 2, 0, 1, 2, 0, 1});
  CHECK(temporal_index(5, 8) == std::vector<Index>{0, 1, 2, 3, 4, 0, 1, 2});
  CHECK(temporal_index(8, 8) == std::vector<Index>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK_THROWS_AS(temporal_index(9, 8), ContractError);
  CHECK_THROWS_AS(temporal_index(0, 8), ContractError);
}

TEST_CASE("shape errors: spatial divisibility and ledger mismatch") {
  Rng rng(8);
  const CnnPrior first(small_config(), true, rng);
  const CnnPrior later(small_config(), false, rng);
  CHECK_THROWS_AS(denoise_cnn(random_input(4, 10, 8, rng), first, std::nullopt), ShapeError);
  const CnnOutput a = denoise_cnn(random_input(4, 8, 8, rng), first, std::nullopt);
  // ledger from a 16x16 run cannot feed an 8x8 run
  const CnnOutput big = denoise_cnn(random_input(4, 16, 16, rng), first, std::nullopt);
  CHECK_THROWS_AS(denoise_cnn(random_input(4, 8, 8, rng), later, big.ledger), ShapeError);
  // topology and ledger presence must agree
  CHECK_THROWS_AS(denoise_cnn(random_input(4, 8, 8, rng), later, std::nullopt), ShapeError);
  CHECK_THROWS_AS(denoise_cnn(random_input(4, 8, 8, rng), first, a.ledger), ShapeError);
  FeatureLedger short_ledger{{a.ledger.scales[0]}};
  CHECK_THROWS_AS(denoise_cnn(random_input(4, 8, 8, rng), later, short_ledger), ShapeError);
}

TEST_CASE("denoise_cnn is deterministic") {
  Rng rng(9);
  const CnnPrior p(small_config(), true, rng);
  const DenoiserInput in = random_input(4, 8, 8, rng);
  CHECK(denoise_cnn(in, p, std::nullopt).v == denoise_cnn(in, p, std::nullopt).v);
}

TEST_CASE("ledger additivity over three priors") {
  Rng rng(10);
  const CnnConfig cfg = small_config();
  std::vector<CnnPrior> priors;
  priors.emplace_back(cfg, true, rng);
  priors.emplace_back(cfg, false, rng);
  priors.emplace_back(cfg, false, rng);

  ad::Tape tape;
  std::vector<std::vector<ad::Var>> locals;
  ad::FeatureLedger ledger;
  for (std::size_t i = 0; i < priors.size(); ++i) {
    const auto bound = priors[i].bind_frozen(tape);
    const DenoiserInput in = random_input(4, 8, 8, rng);
    ad::DenoiserInput ain{tape.constant(in.u), tape.constant(Tensor::scalar(in.gamma2)), in.y_norm};
    auto out = ad::denoise_cnn(ain, bound, i == 0 ? nullptr : &ledger);
    locals.push_back(out.local);
    ledger = out.ledger;
  }
  for (std::size_t j = 0; j < 3; ++j) {
    Tensor sum = locals[0][j].value();
    sum += locals[1][j].value();
    sum += locals[2][j].value();
    CHECK((sum - ledger.scales[j].value()).max_abs() <= 1e-12);
  }
}

TEST_CASE("the same weights run on any conforming spatial size") {
  Rng rng(11);
  const CnnPrior p(small_config(), true, rng);
  const std::size_t count = p.parameter_count();
  for (Index n : {4, 12, 20}) CHECK(denoise_cnn(random_input(4, n, n, rng), p, std::nullopt).v.dim(1) == n);
  CHECK(p.parameter_count() == count);
}

TEST_CASE("load_from a first prior into a later prior computes the same local features") {
  Rng rng(12);
  const CnnConfig cfg = small_config();
  const CnnPrior first(cfg, true, rng);
  CnnPrior later = CnnPrior::zeros(cfg, false);
  later.load_from(first);
  const DenoiserInput in = random_input(4, 8, 8, rng);
  const CnnOutput a = denoise_cnn(in, first, std::nullopt);
  // an arbitrary incoming ledger is ignored by the zero-padded weights
  const CnnOutput other = denoise_cnn(random_input(4, 8, 8, rng), first, std::nullopt);
  const CnnOutput b = denoise_cnn(in, later, other.ledger);
  CHECK((a.v - b.v).max_abs() < 1e-12);
}

TEST_CASE("CNN gradients match finite differences for every weight") {
  Rng rng(13);
  CnnConfig cfg;
  cfg.frames = 2;
  cfg.widths = {2, 3};
  CnnPrior first(cfg, true, rng);
  CnnPrior later(cfg, false, rng);
  const DenoiserInput in0 = random_input(2, 4, 4, rng), in1 = random_input(2, 4, 4, rng);
  const Tensor target = random_tensor({2, 4, 4}, rng);

  auto loss = [&](ad::Tape& t, bool train) {
    const auto b0 = train ? first.bind(t) : first.bind_frozen(t);
    const auto b1 = train ? later.bind(t) : later.bind_frozen(t);
    auto o0 = ad::denoise_cnn({t.constant(in0.u), t.constant(Tensor::scalar(in0.gamma2)), in0.y_norm}, b0, nullptr);
    auto o1 = ad::denoise_cnn({o0.v, t.constant(Tensor::scalar(in1.gamma2)), in1.y_norm}, b1, &o0.ledger);
    ad::Var d = o1.v - t.constant(target);
    return ad::mean(d * d);
  };
  std::vector<ad::Parameter*> params = first.parameters();
  for (auto* p : later.parameters()) params.push_back(p);
  // zero biases put dead ReLU inputs exactly on the kink, where the two
  // one-sided slopes differ; move every bias off zero first
  for (auto* p : params)
    if (p->name.ends_with("bias"))
      for (Index i = 0; i < p->value.size(); ++i) p->value[i] = rng.uniform(-0.1, 0.1);
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape t;
    t.backward(loss(t, true));
  }
  auto value = [&] {
    ad::Tape t;
    return loss(t, false).value()[0];
  };
  for (auto* p : params)
    for (Index i = 0; i < p->value.size(); ++i) {
      const double numeric = central_difference(p->value, i, value);
      INFO(p->name << "[" << i << "] " << p->grad[i] << " vs " << numeric);
      CHECK(fd_agrees(p->grad[i], numeric));
    }
}

TEST_CASE("config validation") {
  CnnConfig c;
  c.convs_per_scale = 1;
  CHECK_THROWS_AS(CnnPrior::zeros(c, true), ContractError);
  c = CnnConfig{};
  c.kernel = 4;
  CHECK_THROWS_AS(CnnPrior::zeros(c, true), ContractError);
  c = CnnConfig{};
  c.widths.clear();
  CHECK_THROWS_AS(CnnPrior::zeros(c, true), ContractError);
}
