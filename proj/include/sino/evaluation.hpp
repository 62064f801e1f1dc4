#pragma once

// Error metrics, rollout evaluation with an extrapolation marker, zero-shot
// super-resolution, and out-of-distribution initial conditions from rasters.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sino/model.hpp"
#include "sino/solvers.hpp"

namespace sino::eval {

/// sqrt(sum (y - yhat)^2 / sum y^2). Throws DegenerateTruth when truth is zero.
double relative_l2(const RealField& pred, const RealField& truth);
/// Pooled over every snapshot of the two sequences.
double relative_l2(const std::vector<RealField>& pred, const std::vector<RealField>& truth);

/// Pearson correlation over all points and channels. Throws ZeroVariance.
double pcc(const RealField& pred, const RealField& truth);

struct TrajectoryReport {
  std::size_t index = 0;
  std::vector<double> time;        // snapshot times, starting at 0
  std::vector<double> pcc;         // NaN where a snapshot has zero variance
  std::vector<double> rel_l2_cum;  // pooled over snapshots 1..t (0 at t = 0)
  double rel_l2 = 0.0;             // pooled over the evaluated horizon
  std::vector<double> err_sq;      // per snapshot: sum (y - yhat)^2
  std::vector<double> ref_sq;      // per snapshot: sum y^2
  bool failed = false;
  long failed_step = -1;           // model step that went non-finite
  std::string failure;
};

struct EvalReport {
  double save_dt = 0.0;
  double horizon = 0.0;
  double train_horizon = 0.0;  // snapshots later than this are extrapolation
  double rel_l2 = 0.0;         // pooled over successful trajectories and all predicted snapshots
  double rel_l2_train_window = 0.0;
  double rel_l2_extrapolation = 0.0;  // NaN when the horizon does not extend past train_horizon
  std::size_t failures = 0;
  std::vector<TrajectoryReport> trajectories;
};

/// Rolls the model from each trajectory's first snapshot over `horizon`
/// seconds (<= 0: whole trajectory). A trajectory that goes non-finite is
/// reported as failed and does not abort the others.
EvalReport evaluate_rollout(const model::SinoParams& params, const model::ModelConfig& cfg,
                            const solver::TrajectoryDataset& test, double horizon, double train_horizon = 0.0);

struct SuperResResult {
  EvalReport native;
  EvalReport fine;
};

/// Evaluates the same parameters on the fine test set and on its spectral
/// restriction to the model's native grid.
SuperResResult superres_eval(const model::SinoParams& params, const model::ModelConfig& cfg,
                             const solver::TrajectoryDataset& fine_test, double horizon);

/// Grayscale raster, row-major from the top-left, intensities in [0, 1].
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

/// Reads a portable graymap (P2 or P5, maxval up to 65535).
Raster read_pgm(const std::filesystem::path& path);
void write_pgm(const Raster& r, const std::filesystem::path& path);

enum class Pattern { star, smiley, ai };
Pattern pattern_from_string(const std::string& s);
/// Anti-aliased built-in rasters (4x4 supersampling) at any resolution.
Raster builtin_raster(Pattern p, int size);

struct PatternIC {
  Raster raster;
  GridSpec grid;
  int channels = 1;
  /// Target RMS; <= 0 matches the RMS of a GRF draw with `grf` and `grf_seed`.
  double amplitude = 0.0;
  GrfParams grf;
  std::uint64_t grf_seed = 0;
  /// Largest retained |k|_inf.
  int cutoff = 8;
};

RealField pattern_ic(const PatternIC& p);

/// One row per snapshot per trajectory: trajectory,time_s,pcc,rel_l2_cum.
void export_csv(const EvalReport& report, const std::filesystem::path& path);
/// One row per trajectory plus a final "all" row.
void export_summary_csv(const EvalReport& report, const std::filesystem::path& path);

/// 17 significant digits ("%.17g"), so values parse back bit-exactly; NaN as "NaN".
std::string format_double(double v);

}  // namespace sino::eval
