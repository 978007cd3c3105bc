#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "elp/forward_model.hpp"
#include "elp/tensor_ops.hpp"
#include "support.hpp"

using namespace elp;
using elp::test::dense_H;
using elp::test::flat;
using elp::test::random_tensor;

namespace {

Tensor plane(std::initializer_list<double> v, Index rows, Index cols) {
  Tensor t({rows, cols});
  Index i = 0;
  for (double x : v) t[i++] = x;
  return t;
}

Tensor stack(const Tensor& a, const Tensor& b) {
  return concat_channels(a.reshaped({1, a.dim(0), a.dim(1)}), b.reshaped({1, b.dim(0), b.dim(1)}));
}

}  // namespace

TEST_CASE("encode: all-ones masks and frames sum to B") {
  Rng rng(1);
  const SciSystem s(MaskStack::Constant({2, 3, 3}, 1.0));
  const Measurement y = encode(VideoCube::Constant({2, 3, 3}, 1.0), s, 0.0, rng);
  CHECK((y.array() == 2.0).all());
}

TEST_CASE("encode: all-zero masks give a zero measurement") {
  Rng rng(1);
  const SciSystem s(MaskStack({2, 3, 3}));
  CHECK(encode(random_tensor({2, 3, 3}, rng), s, 0.0, rng).max_abs() == 0.0);
}

TEST_CASE("encode: 2x2 two-frame example") {
  Rng rng(1);
  const Tensor X = stack(plane({1, 2, 3, 4}, 2, 2), plane({5, 6, 7, 8}, 2, 2));
  const SciSystem s(stack(plane({1, 0, 0, 1}, 2, 2), plane({0, 1, 1, 0}, 2, 2)));
  const Measurement y = encode(X, s, 0.0, rng);
  CHECK(y == plane({1, 6, 7, 4}, 2, 2));
  // mask_sum is all ones here, so the normalized measurement is y itself
  CHECK(normalized_measurement(y, s) == y);
}

TEST_CASE("encode: noise is Gaussian with the requested sigma") {
  Rng rng(2);
  const SciSystem s(MaskStack({1, 64, 64}));
  const Measurement y = encode(VideoCube({1, 64, 64}), s, 0.1, rng);
  const double mean = y.sum() / static_cast<double>(y.size());
  const double var = y.squared_norm() / static_cast<double>(y.size()) - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::sqrt(var) == doctest::Approx(0.1).epsilon(0.05));
}

TEST_CASE("encode with zero sigma equals apply_H exactly") {
  Rng rng(3);
  const SciSystem s(random_masks(4, 5, 6, rng));
  const VideoCube x = random_tensor({4, 5, 6}, rng, 0.0, 1.0);
  CHECK(encode(x, s, 0.0, rng) == apply_H(x, s));
}

TEST_CASE("dimension mismatches are shape errors") {
  Rng rng(4);
  const SciSystem s(random_masks(2, 3, 3, rng));
  CHECK_THROWS_AS(encode(VideoCube({3, 3, 3}), s, 0.0, rng), ShapeError);
  CHECK_THROWS_AS(apply_H(VideoCube({2, 3, 4}), s), ShapeError);
  CHECK_THROWS_AS(apply_Ht(Measurement({3, 4}), s), ShapeError);
  CHECK_THROWS_AS(SciSystem(MaskStack({3, 3})), ShapeError);
}

TEST_CASE("masks outside [0,1] are rejected") {
  CHECK_THROWS_AS(SciSystem(MaskStack::Constant({1, 2, 2}, 1.5)), ContractError);
  CHECK_THROWS_AS(SciSystem(MaskStack::Constant({1, 2, 2}, -0.1)), ContractError);
}

TEST_CASE("apply_H and apply_Ht match the dense D_b construction") {
  Rng rng(5);
  const SciSystem s(random_tensor({2, 3, 3}, rng, 0.0, 1.0));
  const Eigen::MatrixXd H = dense_H(s);
  const VideoCube x = random_tensor({2, 3, 3}, rng);
  const Measurement y = random_tensor({3, 3}, rng);
  CHECK((flat(apply_H(x, s)) - H * flat(x)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((flat(apply_Ht(y, s)) - H.transpose() * flat(y)).cwiseAbs().maxCoeff() < 1e-14);
  // the dense Gram matrix H H^T is diag(psi)
  const Eigen::MatrixXd G = H * H.transpose();
  CHECK((G - Eigen::MatrixXd(flat(s.psi()).asDiagonal())).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("H H^T acts as multiplication by psi") {
  Rng rng(6);
  const SciSystem s(random_tensor({3, 4, 5}, rng, 0.0, 1.0));
  const Measurement y = random_tensor({4, 5}, rng);
  const Measurement hy = apply_H(apply_Ht(y, s), s);
  CHECK((hy.array() - s.psi().array() * y.array()).abs().maxCoeff() < 1e-14);
}

TEST_CASE("all-ones masks: apply_Ht replicates y") {
  Rng rng(7);
  const SciSystem s(MaskStack::Constant({3, 2, 2}, 1.0));
  const Measurement y = random_tensor({2, 2}, rng);
  CHECK(apply_Ht(y, s) == replicate_frames(y, 3));
}

TEST_CASE("adjoint identity holds on random systems") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Index B = 1 + static_cast<Index>(rng.below(6));
    const SciSystem s(random_tensor({B, 7, 5}, rng, 0.0, 1.0));
    const VideoCube x = random_tensor({B, 7, 5}, rng);
    const Measurement y = random_tensor({7, 5}, rng);
    const double lhs = dot(apply_H(x, s), y), rhs = dot(x, apply_Ht(y, s));
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("psi and mask_sum cache the per-pixel reductions") {
  Rng rng(9);
  const MaskStack m = random_tensor({5, 4, 4}, rng, 0.0, 1.0);
  const SciSystem s(m);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      double psi = 0, sum = 0;
      for (Index b = 0; b < 5; ++b) {
        psi += m(b, i, j) * m(b, i, j);
        sum += m(b, i, j);
      }
      CHECK(s.psi()(i, j) == doctest::Approx(psi).epsilon(1e-15));
      CHECK(s.mask_sum()(i, j) == doctest::Approx(sum).epsilon(1e-15));
    }
  CHECK(s.psi().array().minCoeff() >= 0.0);
  CHECK(s.psi().array().maxCoeff() <= 5.0);
}

TEST_CASE("normalized measurement divides by the mask sum") {
  Rng rng(10);
  const SciSystem s(MaskStack::Constant({4, 3, 3}, 1.0));
  const Measurement y = random_tensor({3, 3}, rng);
  CHECK((normalized_measurement(y, s).array() - y.array() / 4.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("a pixel no mask exposes is a degenerate-mask error naming it") {
  MaskStack m = MaskStack::Constant({2, 3, 4}, 1.0);
  m(0, 1, 2) = 0.0;
  m(1, 1, 2) = 0.0;
  const SciSystem s(m);
  try {
    normalized_measurement(Measurement({3, 4}), s);
    FAIL("expected DegenerateMaskError");
  } catch (const DegenerateMaskError& e) {
    CHECK(e.row() == 1);
    CHECK(e.col() == 2);
  }
}

TEST_CASE("Bernoulli masks have the expected mean and are reproducible") {
  Rng a(11), b(11);
  const MaskStack m = random_masks(8, 32, 32, a);
  CHECK(m == random_masks(8, 32, 32, b));
  CHECK(m.sum() / static_cast<double>(m.size()) == doctest::Approx(0.5).epsilon(0.06));
  for (Index i = 0; i < m.size(); ++i) CHECK((m[i] == 0.0 || m[i] == 1.0));
}

TEST_CASE("exposed masks leave no pixel dark") {
  Rng rng(12);
  for (Index B : {1, 2, 3}) {
    const SciSystem s(random_exposed_masks(B, 16, 16, rng));
    CHECK(s.mask_sum().array().minCoeff() >= 1.0);
  }
}

TEST_CASE("first_frames keeps a prefix of the masks") {
  Rng rng(13);
  const SciSystem s(random_masks(5, 4, 4, rng));
  const SciSystem t = s.first_frames(3);
  CHECK(t.frames() == 3);
  CHECK(t.masks() == slice_channels(s.masks(), 0, 3));
  CHECK_THROWS(s.first_frames(6));
}

TEST_CASE("tape versions of H and H^T agree with the plain ones") {
  Rng rng(14);
  const SciSystem s(random_tensor({3, 4, 4}, rng, 0.0, 1.0));
  const VideoCube x = random_tensor({3, 4, 4}, rng);
  const Measurement y = random_tensor({4, 4}, rng);
  ad::Tape t;
  CHECK(ad::apply_H(t.constant(x), s).value() == apply_H(x, s));
  CHECK(ad::apply_Ht(t.constant(y), s).value() == apply_Ht(y, s));
}
