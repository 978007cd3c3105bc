#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "elp/autodiff.hpp"
#include "elp/forward_model.hpp"
#include "elp/rng.hpp"
#include "elp/unfolding.hpp"

namespace elp {

// ---------------------------------------------------------------------------
// Loss and optimizer

/// (1 / (S B n_x n_y)) sum_s sum_b ||X_b - Xhat_b||^2.
double mse_loss(std::span<const VideoCube> pred, std::span<const VideoCube> truth);

namespace ad {
/// Same loss on the tape for one sample, already divided by the batch size.
Var mse_loss(Var pred, const VideoCube& truth, Index batch_size);
}  // namespace ad

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

/// Bias-corrected Adam update of every parameter from its grad accumulator.
/// An empty state is initialized to zeros on first use.
void adam_step(std::span<ad::Parameter* const> params, AdamState& state, double lr,
               const AdamOptions& options = {});

// ---------------------------------------------------------------------------
// Data

enum class SceneKind { MovingSquare, MovingGradient };

SceneKind parse_scene_kind(const std::string& name);
std::string scene_kind_name(SceneKind kind);

struct SyntheticScene {
  VideoCube frames;  // [B,H,W] in [0,1]
  SceneKind kind = SceneKind::MovingSquare;
  Index velocity_rows = 0;  // per-frame toroidal shift
  Index velocity_cols = 0;
};

/// Frame t is frame t-1 shifted toroidally by the velocity.
SyntheticScene synth_scene(SceneKind kind, Index rows, Index cols, Index frames,
                           Index velocity_rows, Index velocity_cols, Rng& rng);

/// Toroidal shift of one plane by (dr, dc): out(i, j) = in(i - dr, j - dc).
Tensor shift_plane(const Tensor& plane, Index dr, Index dc);

/// Repeats the frame sequence until `max_frames` are filled, truncating the
/// final repetition.
VideoCube rearrange_temporal(const VideoCube& frames, Index max_frames);

// ---------------------------------------------------------------------------
// Two-period training

/// Frame counts 2..max_frames (just {1} when max_frames is 1). A single frame
/// is recovered exactly from the normalized measurement, so it teaches nothing.
std::vector<Index> default_frame_counts(Index max_frames);

struct TrainConfig {
  Index batch_size = 3;
  Index epochs_period1 = 10;
  Index epochs_period2 = 10;
  Index steps_per_epoch = 10;
  double lr_period1 = 2e-3;
  double lr_period2 = 4e-4;
  double lr_decay = 0.9;
  Index decay_interval = 15;
  Index warmup_epochs = 5;

  Index single_stages = 3;    // m, shared by both periods
  Index ensemble_stages = 2;  // n, period 2 only
  CnnConfig cnn;              // frames = B_max
  double init_gamma1 = 1.0;
  double init_gamma2 = 1.0;
  double added_gamma2_scale = 1.0;  // period-2 stages start at stage m's gamma2 times this

  Index rows = 32;  // training crop
  Index cols = 32;
  std::vector<Index> frame_counts = default_frame_counts(8);  // B_actual drawn per batch
  double noise_sigma_min = 0.0;
  double noise_sigma_max = 0.0;
  bool fresh_masks = true;  // new random masks per sample instead of the system's
  Index validation_size = 4;
  std::uint64_t seed = 1;
  int threads = 1;

  Index max_frames() const { return cnn.frames; }
  void validate() const;
};

/// lr0 * decay^floor(max(0, epoch - warmup) / interval), epoch counted from 0.
double learning_rate(const TrainConfig& config, double lr0, Index epoch);

struct EpochLog {
  int period = 1;
  Index epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ElpNetwork network;
  std::vector<EpochLog> log;
  double initial_val_loss = 0.0;  // before any optimizer step
  double period1_val_loss = 0.0;  // end of period 1
  double period2_initial_val_loss = 0.0;  // period-2 model before its first step
  std::int64_t steps = 0;
};

/// One training sample: measurement, its system and the truth.
struct Sample {
  SciSystem system;
  Measurement y;
  VideoCube truth;
};

/// Fixed validation samples built from the system's masks.
std::vector<Sample> make_validation_set(const TrainConfig& config,
                                        std::span<const SyntheticScene> scenes,
                                        const SciSystem& system);

double validation_loss(const ElpNetwork& network, std::span<const Sample> samples);

/// Builds the period-2 network from a period-1 one: stages 1..m copied,
/// stages m+1..m+n initialized from stage m with gamma2 scaled by
/// `gamma2_scale`.
ElpNetwork expand_network(const ElpNetwork& pretrained, Index ensemble_stages,
                          double gamma2_scale = 1.0);

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train_two_period(const TrainConfig& config, std::span<const SyntheticScene> scenes,
                             const SciSystem& system, const EpochCallback& on_epoch = {});

/// The default synthetic corpus: alternating kinds with random velocities.
std::vector<SyntheticScene> default_corpus(Index count, Index rows, Index cols, Index frames,
                                           Rng& rng);

}  // namespace elp
