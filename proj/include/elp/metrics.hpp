#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "elp/tensor.hpp"

namespace elp {

/// Returned for identical frames instead of +inf.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) for frames in [0,1], capped at kPsnrCap.
double psnr(const Tensor& a, const Tensor& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over all fully-contained Gaussian windows (the original
/// formulation, no padding).
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& options = {});

struct FrameScore {
  std::string scene;
  Index frame = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::string solver;
  double seconds = 0.0;
};

struct MetricReport {
  std::vector<FrameScore> frames;

  double mean_psnr() const;
  double mean_ssim() const;
};

/// Scores every frame of two [B,H,W] cubes.
MetricReport score_cube(const VideoCube& recon, const VideoCube& truth, const std::string& scene,
                        const std::string& solver, double seconds);

/// Mean per-frame PSNR of two cubes.
double mean_psnr(const VideoCube& recon, const VideoCube& truth);

/// Header: scene,frame_index,psnr_db,ssim,solver,seconds
void write_report_csv(std::ostream& os, const MetricReport& report);

}  // namespace elp
