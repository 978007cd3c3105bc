#pragma once

#include <optional>
#include <string>
#include <vector>

#include "elp/autodiff.hpp"
#include "elp/rng.hpp"
#include "elp/tensor.hpp"

namespace elp {

/// Anisotropic TV denoising of every frame:
///   argmin_v  weight * TV(v) + 1/2 ||u - v||^2
/// by projected gradient on the dual (iterative clipping). Weights below 1e-12
/// return u unchanged.
VideoCube denoise_tv(const VideoCube& u, double weight, int iters);

/// weight * TV(v) + 1/2 ||u - v||^2 with per-frame anisotropic TV.
double tv_objective(const VideoCube& v, const VideoCube& u, double weight);

/// Per-frame anisotropic total variation.
double total_variation(const VideoCube& v);

struct CnnConfig {
  /// Frames the network is built for (B_max). Inputs with fewer frames are
  /// rearranged up to this count.
  Index frames = 8;
  /// Feature width at each U-net scale, finest first.
  std::vector<Index> widths{8, 16, 32};
  /// Convolutions per encoder/decoder scale, at least 2.
  Index convs_per_scale = 2;
  Index kernel = 3;

  Index scales() const { return static_cast<Index>(widths.size()); }
  /// Spatial extents must be multiples of this.
  Index spatial_multiple() const { return Index{1} << (scales() - 1); }
};

/// The dense-connection accumulators E_sum,j, one per U-net scale.
template <typename T>
struct BasicFeatureLedger {
  std::vector<T> scales;
};

using FeatureLedger = BasicFeatureLedger<Tensor>;

/// U-net denoiser with a global residual: v = u + net(u, noise map, Y_norm).
///
/// Encoder scale j: E_j = relu(conv(in_j)); when a ledger is supplied E_j is
/// concatenated with the incoming E_sum,j before the remaining convolutions,
/// and the outgoing ledger carries E_sum,j + E_j. The first prior of a run has
/// no incoming ledger and its second convolution takes w_j instead of 2 w_j
/// channels. Decoder scales upsample, concatenate the encoder skip and convolve;
/// a final convolution maps back to `frames` channels.
class CnnPrior {
 public:
  struct Layer {
    ad::Parameter kernel;
    ad::Parameter bias;
  };

  CnnPrior() = default;
  /// He-initialized weights; the output head is scaled down so an untrained
  /// prior starts close to the identity.
  CnnPrior(CnnConfig config, bool first, Rng& rng, const std::string& name = "prior");
  /// All weights and biases zero.
  static CnnPrior zeros(CnnConfig config, bool first, const std::string& name = "prior");

  const CnnConfig& config() const { return config_; }
  bool first() const { return first_; }
  Index frames() const { return config_.frames; }
  Index input_channels() const { return config_.frames + 2; }

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::size_t parameter_count() const;

  /// Copies weights from `src` (same widths and frame count). When `src` is a
  /// first prior and this one is not, the extra ledger input channels get zero
  /// weights so the copy computes the same local features.
  void load_from(const CnnPrior& src);

  /// Network weights placed on a tape, either trainable or frozen.
  struct Bound {
    struct BoundLayer {
      ad::Var kernel;
      ad::Var bias;
    };
    const CnnPrior* prior = nullptr;
    std::vector<std::vector<BoundLayer>> encoder;
    std::vector<std::vector<BoundLayer>> decoder;
    BoundLayer head;
  };
  Bound bind(ad::Tape& tape);
  Bound bind_frozen(ad::Tape& tape) const;

  std::vector<std::vector<Layer>>& encoder() { return encoder_; }
  std::vector<std::vector<Layer>>& decoder() { return decoder_; }
  Layer& head() { return head_; }

 private:
  CnnPrior(CnnConfig config, bool first, const std::string& name);
  template <typename Fn>
  void for_each_layer(Fn&& fn);
  template <typename Fn>
  void for_each_layer(Fn&& fn) const;

  CnnConfig config_;
  bool first_ = true;
  std::vector<std::vector<Layer>> encoder_;  // [scale][conv]
  std::vector<std::vector<Layer>> decoder_;  // [scale 0..S-2][conv]
  Layer head_;
};

/// Network input: u = x - lambda2/gamma2, the noise level gamma2 (expanded into
/// a constant map) and the normalized measurement.
struct DenoiserInput {
  VideoCube u;
  double gamma2 = 1.0;
  Tensor y_norm;
};

struct CnnOutput {
  VideoCube v;
  FeatureLedger ledger;
};

CnnOutput denoise_cnn(const DenoiserInput& input, const CnnPrior& prior,
                      const std::optional<FeatureLedger>& ledger_in);

/// Index list realizing the temporal rearrangement: the sequence is repeated
/// until `target` frames are filled, truncating the last repetition.
std::vector<Index> temporal_index(Index actual, Index target);

namespace ad {

using FeatureLedger = BasicFeatureLedger<Var>;

struct DenoiserInput {
  Var u;          // [B_actual, H, W], B_actual <= prior frames
  Var gamma2;     // scalar node
  Tensor y_norm;  // [H, W]
};

struct CnnOutput {
  Var v;
  FeatureLedger ledger;
  /// E_j produced by this prior, before accumulation.
  std::vector<Var> local;
};

/// ledger_in == nullptr selects the first-prior topology; otherwise the bound
/// prior must have been built as a non-first prior.
CnnOutput denoise_cnn(const DenoiserInput& input, const CnnPrior::Bound& prior,
                      const FeatureLedger* ledger_in);

}  // namespace ad

}  // namespace elp
