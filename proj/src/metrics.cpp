#include "elp/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "elp/tensor_ops.hpp"

namespace elp {

namespace {

using Plane = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Plane as_plane(const Tensor& t) {
  if (t.rank() == 2) return t.matrix();
  if (t.rank() == 3 && t.dim(0) == 1) return t.frame(0);
  throw ShapeError("expected a single frame, got " + dims_string(t.dims()));
}

// separable 'valid' filtering with a 1-D kernel
Plane filter_valid(const Plane& x, const Eigen::VectorXd& k) {
  const Index n = k.size();
  const Index H = x.rows() - n + 1, W = x.cols() - n + 1;
  Plane rows(x.rows(), W);
  for (Index j = 0; j < W; ++j) rows.col(j) = x.middleCols(j, n) * k;
  Plane out(H, W);
  for (Index i = 0; i < H; ++i) out.row(i) = k.transpose() * rows.middleRows(i, n);
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  a.require_same(b, "psnr");
  const double mse = (a.array() - b.array()).square().mean();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& o) {
  a.require_same(b, "ssim");
  const Plane x = as_plane(a), y = as_plane(b);
  if (x.rows() < o.window || x.cols() < o.window)
    throw ContractError("ssim: frame " + dims_string(a.dims()) + " is smaller than the " +
                        std::to_string(o.window) + "-pixel window");
  if (x == y) return 1.0;

  Eigen::VectorXd k(o.window);
  const double c = (o.window - 1) / 2.0;
  for (int i = 0; i < o.window; ++i) k[i] = std::exp(-0.5 * std::pow((i - c) / o.sigma, 2));
  k /= k.sum();

  const double C1 = std::pow(o.k1 * o.dynamic_range, 2), C2 = std::pow(o.k2 * o.dynamic_range, 2);
  const Plane mx = filter_valid(x, k), my = filter_valid(y, k);
  const Plane sxx = filter_valid(x.cwiseProduct(x), k) - mx.cwiseProduct(mx);
  const Plane syy = filter_valid(y.cwiseProduct(y), k) - my.cwiseProduct(my);
  const Plane sxy = filter_valid(x.cwiseProduct(y), k) - mx.cwiseProduct(my);
  const auto num = (2.0 * mx.array() * my.array() + C1) * (2.0 * sxy.array() + C2);
  const auto den = (mx.array().square() + my.array().square() + C1) * (sxx.array() + syy.array() + C2);
  return (num / den).mean();
}

double MetricReport::mean_psnr() const {
  if (frames.empty()) return 0.0;
  double s = 0.0;
  for (const auto& f : frames) s += f.psnr_db;
  return s / static_cast<double>(frames.size());
}

double MetricReport::mean_ssim() const {
  if (frames.empty()) return 0.0;
  double s = 0.0;
  for (const auto& f : frames) s += f.ssim;
  return s / static_cast<double>(frames.size());
}

MetricReport score_cube(const VideoCube& recon, const VideoCube& truth, const std::string& scene,
                        const std::string& solver, double seconds) {
  recon.require_same(truth, "score_cube");
  MetricReport r;
  for (Index b = 0; b < recon.dim(0); ++b) {
    const Tensor ra = slice_channels(recon, b, 1), ta = slice_channels(truth, b, 1);
    r.frames.push_back({scene, b, psnr(ra, ta), ssim(ra, ta), solver, seconds});
  }
  return r;
}

double mean_psnr(const VideoCube& recon, const VideoCube& truth) {
  recon.require_same(truth, "mean_psnr");
  double s = 0.0;
  for (Index b = 0; b < recon.dim(0); ++b)
    s += psnr(slice_channels(recon, b, 1), slice_channels(truth, b, 1));
  return s / static_cast<double>(recon.dim(0));
}

void write_report_csv(std::ostream& os, const MetricReport& report) {
  os << "scene,frame_index,psnr_db,ssim,solver,seconds\n";
  os << std::setprecision(17);
  // metrics are left blank for frames scored without ground truth
  auto field = [&os](double v) -> std::ostream& {
    if (!std::isnan(v)) os << v;
    return os;
  };
  for (const auto& f : report.frames) {
    os << f.scene << ',' << f.frame << ',';
    field(f.psnr_db) << ',';
    field(f.ssim) << ',' << f.solver << ',' << f.seconds << '\n';
  }
}

}  // namespace elp
