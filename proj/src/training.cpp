#include "elp/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <sstream>
#include <thread>

#include "elp/tensor_ops.hpp"

namespace elp {

// ---------------------------------------------------------------------------
// Loss and optimizer

double mse_loss(std::span<const VideoCube> pred, std::span<const VideoCube> truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw ShapeError("mse_loss: batch sizes differ or are empty");
  double total = 0.0;
  Index count = 0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    pred[s].require_same(truth[s], "mse_loss");
    total += (pred[s].array() - truth[s].array()).square().sum();
    count += pred[s].size();
  }
  return total / static_cast<double>(count);
}

namespace ad {

Var mse_loss(Var pred, const VideoCube& truth, Index batch_size) {
  pred.value().require_same(truth, "mse_loss");
  Var diff = pred - pred.tape()->constant(truth);
  return scale(mean(diff * diff), 1.0 / static_cast<double>(batch_size));
}

}  // namespace ad

void adam_step(std::span<ad::Parameter* const> params, AdamState& state, double lr,
               const AdamOptions& o) {
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->value.dims());
      state.v.emplace_back(p->value.dims());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    const auto g = p.grad.array();
    m = o.beta1 * m + (1.0 - o.beta1) * g;
    v = o.beta2 * v + (1.0 - o.beta2) * g.square();
    p.value.array() -= lr * (m / c1) / ((v / c2).sqrt() + o.eps);
  }
}

// ---------------------------------------------------------------------------
// Data

SceneKind parse_scene_kind(const std::string& name) {
  if (name == "moving-square") return SceneKind::MovingSquare;
  if (name == "moving-gradient") return SceneKind::MovingGradient;
  throw ContractError("unknown scene kind '" + name + "' (moving-square | moving-gradient)");
}

std::string scene_kind_name(SceneKind kind) {
  return kind == SceneKind::MovingSquare ? "moving-square" : "moving-gradient";
}

Tensor shift_plane(const Tensor& plane, Index dr, Index dc) {
  const Index H = plane.dim(0), W = plane.dim(1);
  Tensor out(plane.dims());
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j)
      out(((i + dr) % H + H) % H, ((j + dc) % W + W) % W) = plane(i, j);
  return out;
}

namespace {

Tensor square_frame(Index H, Index W, Rng& rng) {
  Tensor f({H, W});
  const double base = rng.uniform(0.05, 0.3), ramp = rng.uniform(0.0, 0.3);
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j)
      f(i, j) = base + ramp * static_cast<double>(i + j) / static_cast<double>(H + W);
  const int squares = 1 + static_cast<int>(rng.below(2));
  for (int s = 0; s < squares; ++s) {
    const Index side = std::max<Index>(2, H / 6 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(H / 4 + 1))));
    const Index r0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(H)));
    const Index c0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(W)));
    const double level = rng.uniform(0.5, 1.0);
    for (Index i = 0; i < side; ++i)
      for (Index j = 0; j < side; ++j) f((r0 + i) % H, (c0 + j) % W) = level;
  }
  return f;
}

Tensor gradient_frame(Index H, Index W, Rng& rng) {
  // periodic on the torus so shifts never introduce seams
  const double fr = static_cast<double>(1 + rng.below(3)), fc = static_cast<double>(1 + rng.below(3));
  const double phase1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  Tensor f({H, W});
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j) {
      const double a = 2.0 * std::numbers::pi * (fr * i / static_cast<double>(H));
      const double b = 2.0 * std::numbers::pi * (fc * j / static_cast<double>(W));
      f(i, j) = 0.5 + 0.2 * std::sin(a + phase1) + 0.2 * std::cos(b + phase2);
    }
  return f;
}

}  // namespace

SyntheticScene synth_scene(SceneKind kind, Index rows, Index cols, Index frames,
                           Index velocity_rows, Index velocity_cols, Rng& rng) {
  if (rows < 1 || cols < 1 || frames < 1) throw ContractError("synth_scene: empty extent");
  SyntheticScene s;
  s.kind = kind;
  s.velocity_rows = velocity_rows;
  s.velocity_cols = velocity_cols;
  s.frames = VideoCube({frames, rows, cols});
  Tensor f = kind == SceneKind::MovingSquare ? square_frame(rows, cols, rng)
                                             : gradient_frame(rows, cols, rng);
  f.array() = f.array().max(0.0).min(1.0);
  for (Index t = 0; t < frames; ++t) {
    s.frames.frame(t) = f.matrix();
    f = shift_plane(f, velocity_rows, velocity_cols);
  }
  return s;
}

VideoCube rearrange_temporal(const VideoCube& frames, Index max_frames) {
  if (frames.rank() != 3) throw ShapeError("rearrange_temporal expects [B,H,W]");
  if (frames.dim(0) > max_frames)
    throw ContractError("rearrange_temporal: " + std::to_string(frames.dim(0)) +
                        " frames exceed the maximum of " + std::to_string(max_frames));
  return gather_channels<double>(frames, temporal_index(frames.dim(0), max_frames));
}

std::vector<SyntheticScene> default_corpus(Index count, Index rows, Index cols, Index frames,
                                           Rng& rng) {
  std::vector<SyntheticScene> out;
  for (Index i = 0; i < count; ++i) {
    const SceneKind kind = i % 2 == 0 ? SceneKind::MovingSquare : SceneKind::MovingGradient;
    const Index vr = static_cast<Index>(rng.below(5)) - 2;
    const Index vc = static_cast<Index>(rng.below(5)) - 2;
    out.push_back(synth_scene(kind, rows, cols, frames, vr, vc, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (batch_size < 1 || steps_per_epoch < 1 || epochs_period1 < 0 || epochs_period2 < 0)
    throw ContractError("TrainConfig: batch size, steps and epochs must be positive");
  if (!(lr_period1 > 0.0) || !(lr_period2 > 0.0))
    throw ContractError("TrainConfig: learning rates must be positive");
  if (!(lr_period2 < lr_period1))
    throw ContractError("TrainConfig: period-2 learning rate must be below period 1's");
  if (single_stages < 1) throw ContractError("TrainConfig: at least one single-prior stage");
  if (ensemble_stages < 0) throw ContractError("TrainConfig: ensemble stages must be >= 0");
  if (frame_counts.empty()) throw ContractError("TrainConfig: frame_counts is empty");
  for (Index b : frame_counts)
    if (b < 1 || b > max_frames())
      throw ContractError("TrainConfig: frame count " + std::to_string(b) + " outside [1, B_max]");
  if (rows % cnn.spatial_multiple() || cols % cnn.spatial_multiple())
    throw ContractError("TrainConfig: crop must be a multiple of " +
                        std::to_string(cnn.spatial_multiple()));
  if (noise_sigma_min < 0.0 || noise_sigma_max < noise_sigma_min)
    throw ContractError("TrainConfig: invalid noise sigma range");
  if (validation_size < 1) throw ContractError("TrainConfig: validation_size must be >= 1");
  if (decay_interval < 1) throw ContractError("TrainConfig: decay_interval must be >= 1");
  if (!(added_gamma2_scale > 0.0)) throw ContractError("TrainConfig: added_gamma2_scale must be positive");
}

std::vector<Index> default_frame_counts(Index max_frames) {
  if (max_frames < 1) throw ContractError("default_frame_counts: max_frames must be >= 1");
  std::vector<Index> out;
  for (Index b = std::min<Index>(2, max_frames); b <= max_frames; ++b) out.push_back(b);
  return out;
}

double learning_rate(const TrainConfig& config, double lr0, Index epoch) {
  const Index k = std::max<Index>(0, epoch - config.warmup_epochs) / config.decay_interval;
  return lr0 * std::pow(config.lr_decay, static_cast<double>(k));
}

namespace {

VideoCube crop(const VideoCube& scene, Index t0, Index frames, Index r0, Index c0, Index rows,
               Index cols) {
  VideoCube out({frames, rows, cols});
  for (Index t = 0; t < frames; ++t) out.frame(t) = scene.frame(t0 + t).block(r0, c0, rows, cols);
  return out;
}

void check_scene(const SyntheticScene& s, const TrainConfig& c, Index frames) {
  if (s.frames.dim(1) < c.rows || s.frames.dim(2) < c.cols || s.frames.dim(0) < frames)
    throw ContractError("training scene " + dims_string(s.frames.dims()) +
                        " is smaller than the crop [" + std::to_string(frames) + "," +
                        std::to_string(c.rows) + "," + std::to_string(c.cols) + "]");
}

template <typename Fn>
void parallel_for(Index count, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (workers == 1) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (Index i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Sample draw_sample(const TrainConfig& c, std::span<const SyntheticScene> scenes,
                   const SciSystem& system, Index frames, Rng& rng) {
  const SyntheticScene& s = scenes[rng.below(scenes.size())];
  check_scene(s, c, frames);
  const Index t0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(s.frames.dim(0) - frames + 1)));
  const Index r0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(s.frames.dim(1) - c.rows + 1)));
  const Index c0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(s.frames.dim(2) - c.cols + 1)));
  Sample out;
  out.truth = crop(s.frames, t0, frames, r0, c0, c.rows, c.cols);
  if (c.fresh_masks) {
    out.system = SciSystem(random_exposed_masks(frames, c.rows, c.cols, rng));
  } else {
    if (system.rows() != c.rows || system.cols() != c.cols || system.frames() < frames)
      throw ShapeError("training system " + dims_string(system.cube_dims()) +
                       " does not cover the crop");
    out.system = system.first_frames(frames);
  }
  const double sigma = rng.uniform(c.noise_sigma_min, c.noise_sigma_max);
  out.y = encode(out.truth, out.system, sigma, rng);
  return out;
}

void check_finite(double loss, std::int64_t step) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "training diverged: non-finite loss " << loss << " at optimizer step " << step;
    throw std::runtime_error(os.str());
  }
}

void run_period(const TrainConfig& c, int period, Index epochs, double lr0, ElpNetwork& net,
                std::span<const SyntheticScene> scenes, const SciSystem& system,
                std::span<const Sample> validation, Rng& rng, TrainResult& result,
                const EpochCallback& on_epoch) {
  AdamState adam;
  auto params = net.parameters();
  for (Index epoch = 0; epoch < epochs; ++epoch) {
    const double lr = learning_rate(c, lr0, epoch);
    double train_loss = 0.0;
    for (Index step = 0; step < c.steps_per_epoch; ++step) {
      const Index frames = c.frame_counts[rng.below(c.frame_counts.size())];
      std::vector<Sample> batch;
      for (Index s = 0; s < c.batch_size; ++s)
        batch.push_back(draw_sample(c, scenes, system, frames, rng));

      std::vector<ad::GradientMap> grads(batch.size());
      std::vector<double> losses(batch.size());
      parallel_for(c.batch_size, c.threads, [&](Index s) {
        const auto su = static_cast<std::size_t>(s);
        ad::Tape tape;
        auto trace = ad::unfold_network(tape, batch[su].y, batch[su].system, net);
        ad::Var loss = ad::mse_loss(trace.x, batch[su].truth, c.batch_size);
        losses[su] = loss.value()[0];
        tape.backward(loss, grads[su]);
      });

      double loss = 0.0;
      for (double l : losses) loss += l;
      check_finite(loss, result.steps + 1);
      for (auto* p : params) p->zero_grad();
      for (const auto& g : grads)  // fixed reduction order
        for (auto* p : params) {
          auto it = g.find(p);
          if (it != g.end()) p->grad += it->second;
        }
      adam_step(params, adam, lr);
      ++result.steps;
      train_loss += loss;
    }
    EpochLog log{period, epoch, lr, train_loss / static_cast<double>(c.steps_per_epoch),
                 validation_loss(net, validation)};
    check_finite(log.val_loss, result.steps);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
}

}  // namespace

std::vector<Sample> make_validation_set(const TrainConfig& c, std::span<const SyntheticScene> scenes,
                                        const SciSystem& system) {
  if (scenes.empty()) throw ContractError("make_validation_set: no scenes");
  if (system.rows() != c.rows || system.cols() != c.cols)
    throw ShapeError("validation system " + dims_string(system.cube_dims()) +
                     " does not match the training crop");
  Rng rng(c.seed ^ 0x5eedf00dULL);
  std::vector<Sample> out;
  for (Index i = 0; i < c.validation_size; ++i) {
    const SyntheticScene& s = scenes[static_cast<std::size_t>(i) % scenes.size()];
    const Index frames = std::min(system.frames(), s.frames.dim(0));
    check_scene(s, c, frames);
    Sample sample;
    sample.truth = crop(s.frames, 0, frames, 0, 0, c.rows, c.cols);
    sample.system = system.first_frames(frames);
    sample.y = encode(sample.truth, sample.system, c.noise_sigma_min, rng);
    out.push_back(std::move(sample));
  }
  return out;
}

double validation_loss(const ElpNetwork& network, std::span<const Sample> samples) {
  std::vector<VideoCube> pred, truth;
  for (const Sample& s : samples) {
    pred.push_back(run_elp(s.y, s.system, network).raw);
    truth.push_back(s.truth);
  }
  return mse_loss(pred, truth);
}

ElpNetwork expand_network(const ElpNetwork& pretrained, Index ensemble_stages,
                          double gamma2_scale) {
  pretrained.validate();
  if (!(gamma2_scale > 0.0)) throw ContractError("expand_network: gamma2_scale must be positive");
  const Index m = pretrained.schedule.single_stages;
  if (pretrained.schedule.ensemble_stages != 0)
    throw ContractError("expand_network: the pretrained network must be single-prior only");
  ElpNetwork net;
  net.schedule.single_stages = m;
  net.schedule.ensemble_stages = ensemble_stages;
  for (Index i = 0; i <= m + ensemble_stages; ++i) {
    const auto src = static_cast<std::size_t>(std::min(i, m));
    const std::string idx = std::to_string(i);
    net.schedule.log_gamma1.emplace_back("log_gamma1." + idx, pretrained.schedule.log_gamma1[src].value);
    Tensor log_gamma2 = pretrained.schedule.log_gamma2[src].value;
    if (i > m) log_gamma2[0] += std::log(gamma2_scale);
    net.schedule.log_gamma2.emplace_back("log_gamma2." + idx, log_gamma2);
  }
  net.priors = pretrained.priors;
  const CnnPrior& last = pretrained.priors.back();
  for (Index i = m + 1; i <= m + ensemble_stages; ++i) {
    CnnPrior p = CnnPrior::zeros(last.config(), false, "stage" + std::to_string(i));
    p.load_from(last);
    net.priors.push_back(std::move(p));
  }
  net.validate();
  return net;
}

TrainResult train_two_period(const TrainConfig& c, std::span<const SyntheticScene> scenes,
                             const SciSystem& system, const EpochCallback& on_epoch) {
  c.validate();
  if (scenes.empty()) throw ContractError("train_two_period: no training scenes");
  if (system.frames() != c.max_frames())
    throw ShapeError("train_two_period: system has " + std::to_string(system.frames()) +
                     " frames, B_max is " + std::to_string(c.max_frames()));
  Rng rng(c.seed);
  const auto validation = make_validation_set(c, scenes, system);

  TrainResult result;
  ElpNetwork net = ElpNetwork::create(c.single_stages, 0, c.cnn, rng, c.init_gamma1, c.init_gamma2);
  result.initial_val_loss = validation_loss(net, validation);
  run_period(c, 1, c.epochs_period1, c.lr_period1, net, scenes, system, validation, rng, result,
             on_epoch);
  result.period1_val_loss = validation_loss(net, validation);

  net = expand_network(net, c.ensemble_stages, c.added_gamma2_scale);
  result.period2_initial_val_loss = validation_loss(net, validation);
  run_period(c, 2, c.epochs_period2, c.lr_period2, net, scenes, system, validation, rng, result,
             on_epoch);
  result.network = std::move(net);
  return result;
}

}  // namespace elp
