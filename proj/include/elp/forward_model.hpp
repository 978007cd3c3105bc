#pragma once

#include "elp/autodiff.hpp"
#include "elp/rng.hpp"
#include "elp/tensor.hpp"

namespace elp {

/// Coded-aperture video system: B masks plus the two per-pixel reductions every
/// solver needs. Immutable after construction.
class SciSystem {
 public:
  SciSystem() = default;
  /// masks: [B, n_x, n_y], values in [0,1].
  explicit SciSystem(MaskStack masks);

  const MaskStack& masks() const { return masks_; }
  /// Sum over frames of C_b * C_b, the diagonal of H H^T.
  const Tensor& psi() const { return psi_; }
  /// Sum over frames of C_b.
  const Tensor& mask_sum() const { return mask_sum_; }

  Index frames() const { return masks_.dim(0); }
  Index rows() const { return masks_.dim(1); }
  Index cols() const { return masks_.dim(2); }
  Dims cube_dims() const { return masks_.dims(); }
  Dims measurement_dims() const { return {rows(), cols()}; }

  /// A system on the first `count` masks, used when a scene has fewer frames.
  SciSystem first_frames(Index count) const;

 private:
  MaskStack masks_;
  Tensor psi_;
  Tensor mask_sum_;
};

/// Bernoulli(p) binary masks.
MaskStack random_masks(Index frames, Index rows, Index cols, Rng& rng, double p = 0.5);

/// Bernoulli(p) masks conditioned on every pixel being exposed by at least one
/// frame: a pixel whose draws are all zero is redrawn.
MaskStack random_exposed_masks(Index frames, Index rows, Index cols, Rng& rng, double p = 0.5);

/// Y = sum_b C_b * X_b + Z with Z iid N(0, noise_sigma^2) from rng.
Measurement encode(const VideoCube& scene, const SciSystem& system, double noise_sigma, Rng& rng);

Measurement apply_H(const VideoCube& x, const SciSystem& system);
VideoCube apply_Ht(const Measurement& y, const SciSystem& system);

/// Y divided elementwise by the mask sum. Throws DegenerateMaskError for a
/// pixel no mask exposes.
Tensor normalized_measurement(const Measurement& y, const SciSystem& system);

/// The normalized measurement copied into every frame (the zero-iteration estimate).
VideoCube replicate_frames(const Tensor& plane, Index frames);

namespace ad {
Var apply_H(Var x, const SciSystem& system);
Var apply_Ht(Var y, const SciSystem& system);
}  // namespace ad

}  // namespace elp
