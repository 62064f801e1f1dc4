#pragma once

// Reverse-mode gradients of the rollout loss, Adam, the one-cycle schedule and
// the warm-up curriculum training loop.

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "sino/model.hpp"
#include "sino/solvers.hpp"

namespace sino::train {

using model::ModelConfig;
using model::SinoParams;
using solver::TrajectoryDataset;

enum class Loss { mse, rel_l2 };

struct TrainConfig {
  long iterations = 2000;
  double max_lr = 0.01;
  int n1 = 4;  // largest warm-up length (frames, no gradient)
  int n2 = 8;  // supervised frames
  int batch = 1;
  Loss loss = Loss::mse;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  long val_every = 200;
  /// Validation rollout length in frames; <= 0 uses the whole trajectory.
  long val_frames = 0;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  int max_nonfinite = 5;

  void validate() const;
};

/// Parameter-shaped cotangents.
using GradientBundle = SinoParams;

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  SinoParams m;
  SinoParams v;
};

AdamState make_adam(const SinoParams& params);

/// Model steps per dataset frame; throws unless save_dt is an integer multiple of dt_model.
long substeps_per_frame(double save_dt, double dt_model);

/// Rolls the model from segment[0] for segment.size()-1 frames and averages the
/// per-frame loss against segment[1..].
double loss_rollout(const SinoParams& params, const ModelConfig& cfg, const std::vector<RealField>& segment,
                    Loss loss = Loss::mse, long substeps = 1);

struct LossAndGrad {
  double loss = 0.0;
  GradientBundle grads;
};

/// Exact gradient of `scale * loss_rollout` with respect to every parameter tensor.
LossAndGrad backward(const SinoParams& params, const ModelConfig& cfg, const std::vector<RealField>& segment,
                     Loss loss = Loss::mse, long substeps = 1, double scale = 1.0);

double global_norm(const GradientBundle& g);
/// Rescales so the global norm is at most `bound`; returns the norm before clipping.
double clip_global_norm(GradientBundle& g, double bound);

void adam_step(AdamState& state, SinoParams& params, const GradientBundle& grads, double lr);

double onecycle_lr(long step, long total, double max_lr, double pct_start = 0.3, double div_factor = 25.0,
                   double final_div_factor = 1e4);

struct CurriculumSample {
  std::size_t trajectory = 0;
  std::size_t start = 0;
  int warmup = 0;
  RealField state;                 // ground truth at `start`
  std::vector<RealField> segment;  // frames start+warmup .. start+warmup+n2
};

CurriculumSample sample_curriculum(const TrajectoryDataset& data, int n1, int n2, std::mt19937_64& rng);

struct HistoryRow {
  long iteration = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_rel_l2 = std::numeric_limits<double>::quiet_NaN();  // NaN between validation points
};

/// Everything needed to continue a run where it stopped.
struct TrainState {
  SinoParams params;
  AdamState opt;
  long iteration = 0;  // completed iterations
  SinoParams best;
  double best_val = std::numeric_limits<double>::infinity();
  long best_iteration = -1;
  int consecutive_failures = 0;
  std::vector<HistoryRow> history;
};

struct TrainHooks {
  /// Called after each validation point with the current state.
  std::function<void(const TrainState&)> on_validation;
  /// Stop once this many iterations have completed (simulated interruption); < 0 runs to the end.
  long stop_after = -1;
};

TrainState initial_state(const ModelConfig& cfg, const TrainConfig& tc);

/// Pooled relative l2 of the model rollout against every validation trajectory.
double validation_error(const SinoParams& params, const ModelConfig& cfg, const TrajectoryDataset& val, long frames);

/// Runs (or resumes) training. Without validation data the last iterate is kept as best.
TrainState train(const TrajectoryDataset& train_set, const TrajectoryDataset& val_set, const ModelConfig& cfg,
                 const TrainConfig& tc, TrainState state, const TrainHooks& hooks = {});

}  // namespace sino::train
