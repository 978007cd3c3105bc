#include "elp/forward_model.hpp"

#include <string>

#include "elp/tensor_ops.hpp"

namespace elp {

SciSystem::SciSystem(MaskStack masks) : masks_(std::move(masks)) {
  if (masks_.rank() != 3) throw ShapeError("masks must be [B,n_x,n_y], got " + dims_string(masks_.dims()));
  if ((masks_.array() < 0.0).any() || (masks_.array() > 1.0).any())
    throw ContractError("mask values must lie in [0,1]");
  psi_ = Tensor(measurement_dims());
  mask_sum_ = Tensor(measurement_dims());
  for (Index b = 0; b < frames(); ++b) {
    psi_.matrix().array() += masks_.frame(b).array().square();
    mask_sum_.matrix().array() += masks_.frame(b).array();
  }
}

SciSystem SciSystem::first_frames(Index count) const {
  if (count < 1 || count > frames())
    throw ShapeError("first_frames: " + std::to_string(count) + " of " +
                     std::to_string(frames()) + " frames");
  return SciSystem(slice_channels(masks_, 0, count));
}

MaskStack random_masks(Index frames, Index rows, Index cols, Rng& rng, double p) {
  MaskStack m({frames, rows, cols});
  for (Index i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(p) ? 1.0 : 0.0;
  return m;
}

MaskStack random_exposed_masks(Index frames, Index rows, Index cols, Rng& rng, double p) {
  if (!(p > 0.0)) throw ContractError("random_exposed_masks: p must be positive");
  MaskStack m = random_masks(frames, rows, cols, rng, p);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) {
      auto exposed = [&] {
        for (Index b = 0; b < frames; ++b)
          if (m(b, i, j) > 0.0) return true;
        return false;
      };
      while (!exposed())
        for (Index b = 0; b < frames; ++b) m(b, i, j) = rng.bernoulli(p) ? 1.0 : 0.0;
    }
  return m;
}

Measurement apply_H(const VideoCube& x, const SciSystem& system) {
  system.masks().require_same(x, "apply_H");
  Measurement y(system.measurement_dims());
  for (Index b = 0; b < system.frames(); ++b)
    y.matrix().array() += system.masks().frame(b).array() * x.frame(b).array();
  return y;
}

VideoCube apply_Ht(const Measurement& y, const SciSystem& system) {
  if (y.dims() != system.measurement_dims())
    throw ShapeError("apply_Ht: measurement " + dims_string(y.dims()) + " vs system " +
                     dims_string(system.measurement_dims()));
  VideoCube x(system.cube_dims());
  for (Index b = 0; b < system.frames(); ++b)
    x.frame(b).array() = system.masks().frame(b).array() * y.matrix().array();
  return x;
}

Measurement encode(const VideoCube& scene, const SciSystem& system, double noise_sigma, Rng& rng) {
  if (noise_sigma < 0.0) throw ContractError("encode: noise sigma must be non-negative");
  Measurement y = apply_H(scene, system);
  if (noise_sigma > 0.0)
    for (Index i = 0; i < y.size(); ++i) y[i] += noise_sigma * rng.normal();
  return y;
}

Tensor normalized_measurement(const Measurement& y, const SciSystem& system) {
  if (y.dims() != system.measurement_dims())
    throw ShapeError("normalized_measurement: measurement " + dims_string(y.dims()) +
                     " vs system " + dims_string(system.measurement_dims()));
  const Tensor& s = system.mask_sum();
  for (Index i = 0; i < s.dim(0); ++i)
    for (Index j = 0; j < s.dim(1); ++j)
      if (!(s(i, j) > 0.0)) throw DegenerateMaskError(i, j);
  return Tensor(y.dims(), y.array() / s.array());
}

VideoCube replicate_frames(const Tensor& plane, Index frames) {
  if (plane.rank() != 2) throw ShapeError("replicate_frames expects a 2-D plane");
  VideoCube x({frames, plane.dim(0), plane.dim(1)});
  for (Index b = 0; b < frames; ++b) x.frame(b) = plane.matrix();
  return x;
}

namespace ad {

Var apply_H(Var x, const SciSystem& system) { return mask_sum(x, system.masks()); }

Var apply_Ht(Var y, const SciSystem& system) { return mask_spread(y, system.masks()); }

}  // namespace ad

}  // namespace elp
