#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "elp/metrics.hpp"
#include "support.hpp"

using namespace elp;
using elp::test::random_tensor;

namespace {

Tensor pattern(Index H, Index W, bool second) {
  Tensor t({H, W});
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j) {
      t(i, j) = 0.5 + 0.4 * std::sin(0.3 * i + 0.2 * j);
      if (second) t(i, j) += 0.1 * std::cos(0.7 * i - 0.5 * j);
    }
  return t;
}

}  // namespace

TEST_CASE("psnr of identical frames is the cap") {
  Rng rng(1);
  const Tensor a = random_tensor({8, 8}, rng, 0.0, 1.0);
  CHECK(psnr(a, a) == kPsnrCap);
}

TEST_CASE("psnr of MSE 0.01 is 20 dB") {
  const Tensor a({4, 4}), b = Tensor::Constant({4, 4}, 0.1);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("psnr is symmetric and checks dims") {
  Rng rng(2);
  const Tensor a = random_tensor({5, 6}, rng, 0.0, 1.0), b = random_tensor({5, 6}, rng, 0.0, 1.0);
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK_THROWS_AS(psnr(a, Tensor({6, 5})), ShapeError);
}

TEST_CASE("psnr decreases as noise grows") {
  Rng rng(3);
  const Tensor a = random_tensor({32, 32}, rng, 0.0, 1.0);
  const Tensor n = random_tensor({32, 32}, rng);
  double prev = kPsnrCap + 1;
  for (double sigma : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    const double p = psnr(a, a + sigma * n);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim of a frame with itself is exactly one") {
  Rng rng(4);
  const Tensor a = random_tensor({16, 16}, rng, 0.0, 1.0);
  CHECK(ssim(a, a) == 1.0);
}

TEST_CASE("ssim of constant 0 against constant 1 is C1 / (1 + C1)") {
  const double c1 = 1e-4;
  const double got = ssim(Tensor({16, 16}), Tensor::Constant({16, 16}, 1.0));
  CHECK(got < 0.01);
  CHECK(got == doctest::Approx(c1 / (1.0 + c1)).epsilon(1e-12));
}

TEST_CASE("ssim matches a reference Gaussian-window implementation") {
  // value from an independent implementation (Gaussian weights, sigma 1.5,
  // population covariance, data range 1) on the same analytic pattern
  CHECK(ssim(pattern(16, 20, false), pattern(16, 20, true)) ==
        doctest::Approx(0.8623625290743884).epsilon(1e-10));
}

TEST_CASE("ssim contract: frames smaller than the window") {
  CHECK_THROWS_AS(ssim(Tensor({10, 16}), Tensor({10, 16})), ContractError);
  CHECK_THROWS_AS(ssim(Tensor({16, 16}), Tensor({16, 12})), ShapeError);
}

TEST_CASE("ssim stays within [-1, 1]") {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const double s = ssim(random_tensor({12, 12}, rng, 0.0, 1.0), random_tensor({12, 12}, rng, 0.0, 1.0));
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("score_cube reports one row per frame and the averages") {
  Rng rng(6);
  const VideoCube truth = random_tensor({3, 12, 12}, rng, 0.0, 1.0);
  VideoCube recon = truth;
  recon(1, 2, 2) += 0.1;
  const MetricReport r = score_cube(recon, truth, "s", "gaptv", 1.5);
  REQUIRE(r.frames.size() == 3);
  CHECK(r.frames[0].psnr_db == kPsnrCap);
  CHECK(r.frames[1].psnr_db < kPsnrCap);
  CHECK(r.frames[0].ssim == 1.0);
  CHECK(r.mean_psnr() == doctest::Approx((r.frames[0].psnr_db + r.frames[1].psnr_db + r.frames[2].psnr_db) / 3));
  CHECK(mean_psnr(recon, truth) == doctest::Approx(r.mean_psnr()).epsilon(1e-15));
}

TEST_CASE("csv report has the documented column order") {
  Rng rng(7);
  const VideoCube truth = random_tensor({2, 11, 11}, rng, 0.0, 1.0);
  std::ostringstream os;
  write_report_csv(os, score_cube(truth, truth, "scene", "elp", 0.25));
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "scene,frame_index,psnr_db,ssim,solver,seconds");
  std::getline(is, line);
  CHECK(line == "scene,0,100,1,elp,0.25");
}
