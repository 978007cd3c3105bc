#include "elp/priors.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "elp/tensor_ops.hpp"

namespace elp {

// ---------------------------------------------------------------------------
// TV

namespace {

using Plane = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// D^T z for horizontal differences zh (H x W-1) and vertical differences zv (H-1 x W).
Plane adjoint_diff(const Plane& zh, const Plane& zv, Index H, Index W) {
  Plane out = Plane::Zero(H, W);
  out.leftCols(W - 1) -= zh;
  out.rightCols(W - 1) += zh;
  out.topRows(H - 1) -= zv;
  out.bottomRows(H - 1) += zv;
  return out;
}

}  // namespace

double total_variation(const VideoCube& v) {
  double tv = 0.0;
  const Index H = v.dim(1), W = v.dim(2);
  for (Index b = 0; b < v.dim(0); ++b) {
    const auto f = v.frame(b);
    tv += (f.rightCols(W - 1) - f.leftCols(W - 1)).cwiseAbs().sum();
    tv += (f.bottomRows(H - 1) - f.topRows(H - 1)).cwiseAbs().sum();
  }
  return tv;
}

double tv_objective(const VideoCube& v, const VideoCube& u, double weight) {
  return weight * total_variation(v) + 0.5 * (v - u).squared_norm();
}

VideoCube denoise_tv(const VideoCube& u, double weight, int iters) {
  if (u.rank() != 3) throw ShapeError("denoise_tv expects [B,H,W], got " + dims_string(u.dims()));
  if (weight < 1e-12 || iters <= 0) return u;
  // largest eigenvalue of D D^T for 2-D forward differences is below 8
  constexpr double kStep = 1.0 / 8.0;
  const Index H = u.dim(1), W = u.dim(2);
  VideoCube v(u.dims());
  for (Index b = 0; b < u.dim(0); ++b) {
    const Plane y = u.frame(b);
    Plane zh = Plane::Zero(H, W - 1);
    Plane zv = Plane::Zero(H - 1, W);
    Plane x = y;
    for (int it = 0; it < iters; ++it) {
      zh = (zh + kStep * (x.rightCols(W - 1) - x.leftCols(W - 1))).cwiseMax(-weight).cwiseMin(weight);
      zv = (zv + kStep * (x.bottomRows(H - 1) - x.topRows(H - 1))).cwiseMax(-weight).cwiseMin(weight);
      x = y - adjoint_diff(zh, zv, H, W);
    }
    v.frame(b) = x;
  }
  // the dual iteration is not monotone in the primal objective; never return
  // something worse than the input
  if (tv_objective(v, u, weight) > tv_objective(u, u, weight)) return u;
  return v;
}

// ---------------------------------------------------------------------------
// CNN prior

namespace {

CnnPrior::Layer make_layer(const std::string& name, Index out, Index in, Index k) {
  return {ad::Parameter(name + ".kernel", Tensor({out, in, k, k})),
          ad::Parameter(name + ".bias", Tensor(Dims{out}))};
}

void he_init(CnnPrior::Layer& layer, Rng& rng, double gain) {
  const Dims& d = layer.kernel.value.dims();
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(d[1] * d[2] * d[3]));
  for (Index i = 0; i < layer.kernel.value.size(); ++i)
    layer.kernel.value[i] = stddev * rng.normal();
}

void check_config(const CnnConfig& c) {
  if (c.frames < 1) throw ContractError("CnnConfig: frames must be positive");
  if (c.widths.empty()) throw ContractError("CnnConfig: at least one scale is required");
  for (Index w : c.widths)
    if (w < 1) throw ContractError("CnnConfig: widths must be positive");
  if (c.convs_per_scale < 2) throw ContractError("CnnConfig: convs_per_scale must be >= 2");
  if (c.kernel < 1 || c.kernel % 2 == 0) throw ContractError("CnnConfig: kernel must be odd");
}

}  // namespace

CnnPrior::CnnPrior(CnnConfig config, bool first, const std::string& name)
    : config_(std::move(config)), first_(first) {
  check_config(config_);
  const Index S = config_.scales(), k = config_.kernel;
  const auto& w = config_.widths;
  encoder_.resize(static_cast<std::size_t>(S));
  for (Index j = 0; j < S; ++j) {
    auto& convs = encoder_[static_cast<std::size_t>(j)];
    const Index wj = w[static_cast<std::size_t>(j)];
    const Index in0 = j == 0 ? input_channels() : w[static_cast<std::size_t>(j - 1)];
    const std::string base = name + ".enc" + std::to_string(j) + ".";
    convs.push_back(make_layer(base + "0", wj, in0, k));
    convs.push_back(make_layer(base + "1", wj, first ? wj : 2 * wj, k));
    for (Index l = 2; l < config_.convs_per_scale; ++l)
      convs.push_back(make_layer(base + std::to_string(l), wj, wj, k));
  }
  decoder_.resize(static_cast<std::size_t>(S - 1));
  for (Index j = 0; j + 1 < S; ++j) {
    auto& convs = decoder_[static_cast<std::size_t>(j)];
    const Index wj = w[static_cast<std::size_t>(j)];
    const std::string base = name + ".dec" + std::to_string(j) + ".";
    convs.push_back(make_layer(base + "0", wj, w[static_cast<std::size_t>(j + 1)] + wj, k));
    for (Index l = 1; l < config_.convs_per_scale; ++l)
      convs.push_back(make_layer(base + std::to_string(l), wj, wj, k));
  }
  head_ = make_layer(name + ".head", config_.frames, w.front(), k);
}

CnnPrior::CnnPrior(CnnConfig config, bool first, Rng& rng, const std::string& name)
    : CnnPrior(std::move(config), first, name) {
  for_each_layer([&](Layer& l) { he_init(l, rng, &l == &head_ ? 0.1 : 1.0); });
}

CnnPrior CnnPrior::zeros(CnnConfig config, bool first, const std::string& name) {
  return CnnPrior(std::move(config), first, name);
}

template <typename Fn>
void CnnPrior::for_each_layer(Fn&& fn) {
  for (auto& scale : encoder_)
    for (auto& l : scale) fn(l);
  for (auto& scale : decoder_)
    for (auto& l : scale) fn(l);
  fn(head_);
}

template <typename Fn>
void CnnPrior::for_each_layer(Fn&& fn) const {
  for (const auto& scale : encoder_)
    for (const auto& l : scale) fn(l);
  for (const auto& scale : decoder_)
    for (const auto& l : scale) fn(l);
  fn(head_);
}

std::vector<ad::Parameter*> CnnPrior::parameters() {
  std::vector<ad::Parameter*> out;
  for_each_layer([&](Layer& l) {
    out.push_back(&l.kernel);
    out.push_back(&l.bias);
  });
  return out;
}

std::vector<const ad::Parameter*> CnnPrior::parameters() const {
  std::vector<const ad::Parameter*> out;
  for_each_layer([&](const Layer& l) {
    out.push_back(&l.kernel);
    out.push_back(&l.bias);
  });
  return out;
}

std::size_t CnnPrior::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void CnnPrior::load_from(const CnnPrior& src) {
  if (src.config_.widths != config_.widths || src.config_.frames != config_.frames ||
      src.config_.convs_per_scale != config_.convs_per_scale ||
      src.config_.kernel != config_.kernel)
    throw ShapeError("load_from: prior configurations differ");
  auto dst_params = parameters();
  auto src_params = src.parameters();
  for (std::size_t i = 0; i < dst_params.size(); ++i) {
    ad::Parameter& d = *dst_params[i];
    const ad::Parameter& s = *src_params[i];
    if (d.value.dims() == s.value.dims()) {
      d.value = s.value;
      continue;
    }
    // first -> non-first: second encoder conv gains the ledger input channels
    const Dims& dd = d.value.dims();
    const Dims& sd = s.value.dims();
    if (dd.size() != 4 || sd.size() != 4 || dd[0] != sd[0] || dd[1] < sd[1])
      throw ShapeError("load_from: cannot map " + s.name + " " + dims_string(sd) + " onto " +
                       dims_string(dd));
    d.value.array().setZero();
    const Index src_block = sd[1] * sd[2] * sd[3], dst_block = dd[1] * dd[2] * dd[3];
    for (Index co = 0; co < dd[0]; ++co)
      d.value.array().segment(co * dst_block, src_block) =
          s.value.array().segment(co * src_block, src_block);
  }
}

CnnPrior::Bound CnnPrior::bind(ad::Tape& tape) {
  Bound b;
  b.prior = this;
  auto bind_layer = [&](Layer& l) { return Bound::BoundLayer{tape.param(l.kernel), tape.param(l.bias)}; };
  for (auto& scale : encoder_) {
    b.encoder.emplace_back();
    for (auto& l : scale) b.encoder.back().push_back(bind_layer(l));
  }
  for (auto& scale : decoder_) {
    b.decoder.emplace_back();
    for (auto& l : scale) b.decoder.back().push_back(bind_layer(l));
  }
  b.head = bind_layer(head_);
  return b;
}

CnnPrior::Bound CnnPrior::bind_frozen(ad::Tape& tape) const {
  Bound b;
  b.prior = this;
  auto bind_layer = [&](const Layer& l) {
    return Bound::BoundLayer{tape.constant(l.kernel.value), tape.constant(l.bias.value)};
  };
  for (const auto& scale : encoder_) {
    b.encoder.emplace_back();
    for (const auto& l : scale) b.encoder.back().push_back(bind_layer(l));
  }
  for (const auto& scale : decoder_) {
    b.decoder.emplace_back();
    for (const auto& l : scale) b.decoder.back().push_back(bind_layer(l));
  }
  b.head = bind_layer(head_);
  return b;
}

std::vector<Index> temporal_index(Index actual, Index target) {
  if (actual < 1 || actual > target)
    throw ContractError("temporal rearrangement needs 1 <= frames (" + std::to_string(actual) +
                        ") <= " + std::to_string(target));
  std::vector<Index> idx(static_cast<std::size_t>(target));
  for (Index i = 0; i < target; ++i) idx[static_cast<std::size_t>(i)] = i % actual;
  return idx;
}

namespace ad {

CnnOutput denoise_cnn(const DenoiserInput& input, const CnnPrior::Bound& bound,
                      const FeatureLedger* ledger_in) {
  const CnnPrior& prior = *bound.prior;
  const CnnConfig& cfg = prior.config();
  const Dims& ud = input.u.dims();
  if (ud.size() != 3) throw ShapeError("denoise_cnn: u must be [B,H,W], got " + dims_string(ud));
  const Index frames = ud[0], H = ud[1], W = ud[2], S = cfg.scales();
  if (H % cfg.spatial_multiple() || W % cfg.spatial_multiple())
    throw ShapeError("denoise_cnn: spatial dims " + dims_string(ud) + " must be multiples of " +
                     std::to_string(cfg.spatial_multiple()));
  if (frames > prior.frames())
    throw ContractError("denoise_cnn: " + std::to_string(frames) + " frames exceed the prior's " +
                     std::to_string(prior.frames()));
  if (input.y_norm.dims() != Dims{H, W})
    throw ShapeError("denoise_cnn: normalized measurement " + dims_string(input.y_norm.dims()));
  if (prior.first() != (ledger_in == nullptr))
    throw ShapeError(prior.first() ? "denoise_cnn: first prior cannot take an incoming ledger"
                                   : "denoise_cnn: non-first prior needs an incoming ledger");
  if (ledger_in) {
    if (static_cast<Index>(ledger_in->scales.size()) != S)
      throw ShapeError("denoise_cnn: ledger has " + std::to_string(ledger_in->scales.size()) +
                       " scales, prior has " + std::to_string(S));
    for (Index j = 0; j < S; ++j) {
      const Dims want{cfg.widths[static_cast<std::size_t>(j)], H >> j, W >> j};
      if (ledger_in->scales[static_cast<std::size_t>(j)].dims() != want)
        throw ShapeError("denoise_cnn: ledger scale " + std::to_string(j) + " is " +
                         dims_string(ledger_in->scales[static_cast<std::size_t>(j)].dims()) +
                         ", expected " + dims_string(want));
    }
  }

  Tape& tape = *input.u.tape();
  Var u_full = frames == prior.frames()
                   ? input.u
                   : gather_channels(input.u, temporal_index(frames, prior.frames()));
  Var x = concat_channels(u_full, broadcast(input.gamma2, {1, H, W}));
  x = concat_channels(x, tape.constant(input.y_norm.reshaped({1, H, W})));

  auto conv_relu = [](Var in, const CnnPrior::Bound::BoundLayer& l) {
    return relu(conv2d(in, l.kernel, l.bias));
  };

  CnnOutput out;
  std::vector<Var> skips;
  for (Index j = 0; j < S; ++j) {
    const auto& convs = bound.encoder[static_cast<std::size_t>(j)];
    Var in = j == 0 ? x : avg_pool2(skips.back());
    Var local = conv_relu(in, convs[0]);
    Var feat = local;
    if (ledger_in) feat = concat_channels(local, ledger_in->scales[static_cast<std::size_t>(j)]);
    for (std::size_t l = 1; l < convs.size(); ++l) feat = conv_relu(feat, convs[l]);
    skips.push_back(feat);
    out.local.push_back(local);
    out.ledger.scales.push_back(ledger_in ? ledger_in->scales[static_cast<std::size_t>(j)] + local
                                          : local);
  }

  Var d = skips.back();
  for (Index j = S - 2; j >= 0; --j) {
    const auto& convs = bound.decoder[static_cast<std::size_t>(j)];
    d = concat_channels(upsample2(d), skips[static_cast<std::size_t>(j)]);
    for (const auto& l : convs) d = conv_relu(d, l);
  }
  Var residual = conv2d(d, bound.head.kernel, bound.head.bias);
  if (frames < prior.frames()) {
    std::vector<Index> keep(static_cast<std::size_t>(frames));
    std::iota(keep.begin(), keep.end(), Index{0});
    residual = gather_channels(residual, std::move(keep));
  }
  out.v = input.u + residual;
  return out;
}

}  // namespace ad

CnnOutput denoise_cnn(const DenoiserInput& input, const CnnPrior& prior,
                      const std::optional<FeatureLedger>& ledger_in) {
  ad::Tape tape;
  const auto bound = prior.bind_frozen(tape);
  ad::DenoiserInput in{tape.constant(input.u), tape.constant(Tensor::scalar(input.gamma2)),
                       input.y_norm};
  ad::FeatureLedger ledger;
  if (ledger_in)
    for (const Tensor& t : ledger_in->scales) ledger.scales.push_back(tape.constant(t));
  const auto res = ad::denoise_cnn(in, bound, ledger_in ? &ledger : nullptr);
  CnnOutput out{res.v.value(), {}};
  for (const auto& s : res.ledger.scales) out.ledger.scales.push_back(s.value());
  return out;
}

}  // namespace elp
