// Command-line front end: simulate, reconstruct, train, eval.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "elp/forward_model.hpp"
#include "elp/io.hpp"
#include "elp/metrics.hpp"
#include "elp/tensor_ops.hpp"
#include "elp/training.hpp"
#include "elp/unfolding.hpp"

namespace fs = std::filesystem;
using namespace elp;

namespace {

// Training allocates and frees many mid-sized tensors per step; glibc's default
// mmap and trim thresholds turn that into system-call churn.
void keep_freed_memory() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

int thread_cap(int requested) {
  if (const char* env = std::getenv("ELP_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1)
      throw ContractError(std::string("ELP_THREADS must be a positive integer, got '") + env + "'");
    return std::max(1, std::min<int>(requested, static_cast<int>(cap)));
  }
  return std::max(1, requested);
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

Measurement as_measurement(Tensor t, const fs::path& path) {
  if (t.rank() == 3 && t.dim(0) == 1) t = t.reshaped({t.dim(1), t.dim(2)});
  if (t.rank() != 2)
    throw ShapeError(path.string() + ": measurement must be [H,W], got " + dims_string(t.dims()));
  return t;
}

void write_report(const fs::path& path, const MetricReport& report) {
  std::ostringstream os;
  write_report_csv(os, report);
  io::atomic_write(path, os.str());
}

void print_summary(std::ostream& os, const MetricReport& r) {
  os << std::left << std::setw(8) << "frame" << std::right << std::setw(12) << "PSNR (dB)"
     << std::setw(10) << "SSIM" << '\n';
  os << std::fixed;
  for (const auto& f : r.frames)
    os << std::left << std::setw(8) << f.frame << std::right << std::setw(12) << std::setprecision(2)
       << f.psnr_db << std::setw(10) << std::setprecision(4) << f.ssim << '\n';
  os << std::left << std::setw(8) << "mean" << std::right << std::setw(12) << std::setprecision(2)
     << r.mean_psnr() << std::setw(10) << std::setprecision(4) << r.mean_ssim() << '\n';
  os.unsetf(std::ios::fixed);
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string synth, scene, masks, out, truth;
  Index frames = 8;
  Index size = 32;
  std::vector<Index> velocity{1, 1};
  std::uint64_t seed = 1;
  double sigma = 0.0;
};

void simulate(const SimulateArgs& a) {
  Rng master(a.seed);
  Rng mask_rng = master.split(), scene_rng = master.split(), noise_rng = master.split();
  VideoCube scene;
  if (!a.scene.empty()) {
    scene = io::read_vcube(fs::path(a.scene));
    if (scene.rank() != 3) throw IoError(a.scene + ": scene must be [B,H,W], got " + dims_string(scene.dims()));
    if (scene.dim(0) < a.frames)
      throw IoError(a.scene + ": scene has " + std::to_string(scene.dim(0)) + " frames, " +
                    std::to_string(a.frames) + " requested");
    if (scene.dim(0) > a.frames) scene = slice_channels(scene, 0, a.frames);
    if (scene.array().minCoeff() < 0.0 || scene.array().maxCoeff() > 1.0)
      throw IoError(a.scene + ": scene values must lie in [0,1]");
  } else {
    if (a.velocity.size() != 2) throw ContractError("--velocity takes two integers");
    scene = synth_scene(parse_scene_kind(a.synth), a.size, a.size, a.frames, a.velocity[0],
                        a.velocity[1], scene_rng)
                .frames;
  }
  // encode what will be on disk, so re-encoding the written truth reproduces y
  for (Index i = 0; i < scene.size(); ++i) scene[i] = static_cast<float>(scene[i]);
  const SciSystem system(random_exposed_masks(scene.dim(0), scene.dim(1), scene.dim(2), mask_rng));
  const Measurement y = encode(scene, system, a.sigma, noise_rng);
  io::write_vcube(fs::path(a.masks), system.masks());
  io::write_vcube(fs::path(a.out), y);
  const fs::path truth = a.truth.empty() ? sibling(a.out, "_truth.vcube") : fs::path(a.truth);
  io::write_vcube(truth, scene);
  std::cout << "wrote " << a.masks << ", " << a.out << ", " << truth.string() << " ("
            << dims_string(scene.dims()) << ")\n";
}

// ---------------------------------------------------------------------------

struct ReconstructArgs {
  std::string measurement, masks, solver = "gaptv", checkpoint, out, report, truth, preview_dir;
  std::string scene_name;
  bool tv_prior = false;
  Index stages = 0;
  int iters = 50;
  double tv_weight = 0.02;
  double elp_tv_weight = 0.002;
  double gamma1 = 1.0;
  double gamma2 = 0.1;
};

void reconstruct(const ReconstructArgs& a) {
  const Measurement y = as_measurement(io::read_vcube(fs::path(a.measurement)), a.measurement);
  const SciSystem system(io::read_vcube(fs::path(a.masks)));
  if (system.measurement_dims() != y.dims())
    throw ShapeError("measurement " + dims_string(y.dims()) + " does not match masks " +
                     dims_string(system.cube_dims()));
  std::optional<VideoCube> truth;
  if (!a.truth.empty()) {
    truth = io::read_vcube(fs::path(a.truth));
    if (truth->dims() != system.cube_dims())
      throw ShapeError("truth " + dims_string(truth->dims()) + " does not match masks " +
                       dims_string(system.cube_dims()));
  }

  VideoCube x;
  const auto t0 = std::chrono::steady_clock::now();
  if (a.solver == "gaptv") {
    x = run_gap_tv(y, system, a.iters, a.tv_weight, 20);
  } else if (a.solver == "elp") {
    if (!a.checkpoint.empty()) {
      io::Checkpoint ck = io::load_checkpoint(fs::path(a.checkpoint));
      const Index stages = ck.network.schedule.stages();
      if (a.stages > 0 && a.stages != stages)
        throw ShapeError("checkpoint/schedule mismatch: " + a.checkpoint + " holds " +
                         std::to_string(stages) + " stages (m=" +
                         std::to_string(ck.info.single_stages) + ", n=" +
                         std::to_string(ck.info.ensemble_stages) + "), --stages asked for " +
                         std::to_string(a.stages));
      if (system.frames() > ck.info.cnn.frames)
        throw ShapeError("checkpoint/schedule mismatch: measurement has " +
                         std::to_string(system.frames()) + " frames, checkpoint B_max is " +
                         std::to_string(ck.info.cnn.frames));
      const Index mult = ck.info.cnn.spatial_multiple();
      if (system.rows() % mult || system.cols() % mult)
        throw ShapeError("checkpoint/schedule mismatch: spatial size " +
                         dims_string(system.measurement_dims()) + " is not a multiple of " +
                         std::to_string(mult));
      x = run_elp(y, system, ck.network).x;
    } else if (a.tv_prior) {
      const Index stages = a.stages > 0 ? a.stages : 10;
      const auto schedule = StageSchedule::constant(stages, 0, a.gamma1, a.gamma2);
      x = run_elp(y, system, schedule, TvPrior{a.elp_tv_weight, 20}).x;
    } else {
      throw ContractError("--solver elp needs --checkpoint or --tv-prior");
    }
    x.array() = x.array().min(1.0);
  } else {
    throw ContractError("unknown solver '" + a.solver + "' (gaptv | elp)");
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path out(a.out);
  io::write_vcube(out, x);
  const fs::path previews = a.preview_dir.empty() ? out.parent_path() : fs::path(a.preview_dir);
  if (!previews.empty()) fs::create_directories(previews);
  for (Index b = 0; b < x.dim(0); ++b)
    io::write_pgm(previews / (out.stem().string() + "_f" + std::to_string(b) + ".pgm"),
                  slice_channels(x, b, 1));

  const std::string scene = a.scene_name.empty() ? fs::path(a.measurement).stem().string() : a.scene_name;
  MetricReport report;
  if (truth) {
    report = score_cube(x, *truth, scene, a.solver, seconds);
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (Index b = 0; b < x.dim(0); ++b) report.frames.push_back({scene, b, nan, nan, a.solver, seconds});
  }
  const fs::path report_path = a.report.empty() ? sibling(out, "_report.csv") : fs::path(a.report);
  write_report(report_path, report);

  std::cout << a.solver << ": " << x.dim(0) << " frames in " << seconds << " s";
  if (truth) std::cout << ", mean PSNR " << report.mean_psnr() << " dB, mean SSIM " << report.mean_ssim();
  std::cout << '\n';
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, masks, out, loss_csv;
  bool synth = false;
};

std::vector<SyntheticScene> load_scenes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".vcube") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError(dir.string() + ": no .vcube scenes found");
  std::vector<SyntheticScene> scenes;
  for (const auto& f : files) {
    SyntheticScene s;
    s.frames = io::read_vcube(f);
    if (s.frames.rank() != 3) throw IoError(f.string() + ": scene must be [B,H,W]");
    scenes.push_back(std::move(s));
  }
  return scenes;
}

void train(const TrainArgs& a) {
  io::TrainSettings settings;
  if (!a.config.empty()) {
    try {
      settings = io::train_settings(io::read_config(fs::path(a.config)));
    } catch (const ParseError& e) {
      throw ParseError(a.config + ": " + std::string(e.what()).substr(std::string(e.what()).find(": ") + 2),
                       e.line());
    }
  }
  TrainConfig& c = settings.train;
  c.threads = thread_cap(c.threads);

  Rng data_rng(c.seed ^ 0xda7aULL);
  std::vector<SyntheticScene> scenes =
      a.data.empty() ? default_corpus(settings.corpus_size, c.rows, c.cols, c.max_frames(), data_rng)
                     : load_scenes(fs::path(a.data));
  Rng mask_rng(c.seed ^ 0x3a5cULL);
  const SciSystem system(a.masks.empty()
                             ? random_exposed_masks(c.max_frames(), c.rows, c.cols, mask_rng)
                             : io::read_vcube(fs::path(a.masks)));
  if (system.cube_dims() != Dims{c.max_frames(), c.rows, c.cols})
    throw ShapeError(a.masks + ": masks " + dims_string(system.cube_dims()) + " do not match frames x rows x cols " +
                     dims_string({c.max_frames(), c.rows, c.cols}) + " from the config");

  const fs::path out(a.out);
  const fs::path loss_path = a.loss_csv.empty() ? sibling(out, "_loss.csv") : fs::path(a.loss_csv);
  std::ostringstream csv;
  csv << "period,epoch,lr,train_loss,val_loss\n" << std::setprecision(17);
  auto result = train_two_period(c, scenes, system, [&](const EpochLog& log) {
    csv << log.period << ',' << log.epoch << ',' << log.lr << ',' << log.train_loss << ','
        << log.val_loss << '\n';
    std::cerr << "period " << log.period << " epoch " << log.epoch << "  lr " << log.lr
              << "  train " << log.train_loss << "  val " << log.val_loss << '\n';
  });
  io::save_checkpoint(out, result.network, c.seed, result.steps);
  io::atomic_write(loss_path, csv.str());
  const double final_val = result.log.empty() ? result.initial_val_loss : result.log.back().val_loss;
  std::cout << "trained " << result.steps << " steps; validation loss " << result.initial_val_loss
            << " -> " << final_val << "; wrote " << out.string() << " and " << loss_path.string()
            << '\n';
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string recon, truth, report, scene = "scene", solver = "unknown";
};

void eval(const EvalArgs& a) {
  const VideoCube recon = io::read_vcube(fs::path(a.recon));
  const VideoCube truth = io::read_vcube(fs::path(a.truth));
  if (recon.rank() != 3 || recon.dims() != truth.dims())
    throw ShapeError("recon " + dims_string(recon.dims()) + " and truth " + dims_string(truth.dims()) +
                     " must be matching [B,H,W] cubes");
  const MetricReport report = score_cube(recon, truth, a.scene, a.solver, 0.0);
  if (!a.report.empty()) write_report(fs::path(a.report), report);
  print_summary(std::cout, report);
}

}  // namespace

int main(int argc, char** argv) {
  keep_freed_memory();
  CLI::App app{"Snapshot compressive video imaging: simulation, reconstruction, training"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "encode a scene through random masks");
  auto* synth = s->add_option("--synth", sim.synth, "synthetic scene kind (moving-square | moving-gradient)");
  auto* scene = s->add_option("--scene", sim.scene, "scene VCUBE [B,H,W] in [0,1]");
  synth->excludes(scene);
  s->add_option("--b", sim.frames, "frames B")->check(CLI::PositiveNumber);
  s->add_option("--size", sim.size, "synthetic frame size")->check(CLI::PositiveNumber);
  s->add_option("--velocity", sim.velocity, "synthetic shift per frame (rows cols)")->expected(2);
  s->add_option("--seed", sim.seed, "seed");
  s->add_option("--sigma", sim.sigma, "measurement noise sigma")->check(CLI::NonNegativeNumber);
  s->add_option("--masks", sim.masks, "output masks VCUBE")->required();
  s->add_option("--out", sim.out, "output measurement VCUBE")->required();
  s->add_option("--truth", sim.truth, "output ground-truth VCUBE");

  ReconstructArgs rec;
  auto* r = app.add_subcommand("reconstruct", "recover a video cube from a measurement");
  r->add_option("--measurement", rec.measurement, "measurement VCUBE [H,W]")->required();
  r->add_option("--masks", rec.masks, "masks VCUBE [B,H,W]")->required();
  r->add_option("--solver", rec.solver, "gaptv | elp");
  r->add_option("--checkpoint", rec.checkpoint, "trained network");
  r->add_flag("--tv-prior", rec.tv_prior, "elp with a TV denoiser instead of a network");
  r->add_option("--stages", rec.stages, "stage count (checked against the checkpoint)");
  r->add_option("--iters", rec.iters, "GAP-TV iterations");
  r->add_option("--tv-weight", rec.tv_weight, "GAP-TV denoising weight");
  r->add_option("--elp-tv-weight", rec.elp_tv_weight, "TV prior weight for --tv-prior");
  r->add_option("--gamma1", rec.gamma1, "gamma1 for --tv-prior")->check(CLI::PositiveNumber);
  r->add_option("--gamma2", rec.gamma2, "gamma2 for --tv-prior")->check(CLI::PositiveNumber);
  r->add_option("--out", rec.out, "output VCUBE")->required();
  r->add_option("--report", rec.report, "metric CSV");
  r->add_option("--truth", rec.truth, "ground truth VCUBE for metrics");
  r->add_option("--preview-dir", rec.preview_dir, "directory for per-frame PGM previews");
  r->add_option("--scene-name", rec.scene_name, "scene label in the report");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "two-period training of the unfolded network");
  t->add_option("--config", tr.config, "key = value config file");
  auto* data = t->add_option("--data", tr.data, "directory of scene VCUBEs");
  auto* tsynth = t->add_flag("--synth", tr.synth, "train on the synthetic corpus");
  data->excludes(tsynth);
  t->add_option("--masks", tr.masks,
                 "masks VCUBE [frames,rows,cols] for validation, and for training when fresh_masks = false");
  t->add_option("--out", tr.out, "output checkpoint")->required();
  t->add_option("--loss-csv", tr.loss_csv, "per-epoch loss CSV");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a reconstruction against ground truth");
  e->add_option("--recon", ev.recon, "reconstruction VCUBE")->required();
  e->add_option("--truth", ev.truth, "ground truth VCUBE")->required();
  e->add_option("--report", ev.report, "metric CSV");
  e->add_option("--scene", ev.scene, "scene label");
  e->add_option("--solver", ev.solver, "solver label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*s) {
      if (sim.synth.empty() && sim.scene.empty()) throw ContractError("simulate needs --synth or --scene");
      simulate(sim);
    } else if (*r) {
      reconstruct(rec);
    } else if (*t) {
      if (tr.data.empty() && !tr.synth) throw ContractError("train needs --data or --synth");
      train(tr);
    } else if (*e) {
      eval(ev);
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
