#pragma once

// Experiment commands behind the `sino` executable. Each command takes a
// validated config and an output directory and writes deterministic artifacts:
//
//   <out>/config.json, <out>/manifest.txt, <out>/data/{train,val,test}.*   generate
//   <out>/train/{best,state}.sinockpt, <out>/train/history.csv            train
//   <out>/eval/{rollout,summary,superres,ood}.csv, field dumps             evaluate
//   <out>/ablate/ablation.csv                                              ablate
//   <out>/distill/synthetic.*                                              distill-generate
//   <out>/sweep/summary.csv                                                sweep

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sino/config.hpp"
#include "sino/evaluation.hpp"
#include "sino/io.hpp"
#include "sino/training.hpp"

namespace sino::cli {

namespace fs = std::filesystem;
using config::ExperimentConfig;

/// Writes all three splits, config.json and manifest.txt; returns the files
/// listed in the manifest.
std::vector<fs::path> cmd_generate(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log);

/// "config_hash <hex>" then one "<relative path> <crc32> <bytes>" line per file.
/// For SINO containers the CRC covers every byte before the trailing checksum.
void write_manifest(const fs::path& path, const std::string& config_hash, const fs::path& root,
                    const std::vector<fs::path>& files);

/// Loads a split and checks it against the config's training grid and cadence.
solver::TrajectoryDataset load_split(const ExperimentConfig& cfg, const fs::path& out, solver::Split split);

/// Training state <-> checkpoint, including optimizer moments and history.
io::Checkpoint state_checkpoint(const ExperimentConfig& cfg, const train::TrainState& st);
train::TrainState state_from_checkpoint(const io::Checkpoint& ck, const model::ModelConfig& cfg);
io::Checkpoint params_checkpoint(const ExperimentConfig& cfg, const model::SinoParams& params);

/// Model config and parameters from a checkpoint's config echo.
struct LoadedModel {
  ExperimentConfig cfg;
  model::SinoParams params;
};
LoadedModel load_model(const fs::path& checkpoint);

void write_history_csv(const std::vector<train::HistoryRow>& history, const fs::path& path);

struct TrainOptions {
  bool resume = false;
  long stop_after = -1;  // simulated interruption for testing
};

struct TrainOutcome {
  train::TrainState state;
  bool completed = false;
};

/// Trains on the given sets and writes best.sinockpt, state.sinockpt and
/// history.csv into `dir`.
TrainOutcome train_into(const ExperimentConfig& cfg, const solver::TrajectoryDataset& train_set,
                        const solver::TrajectoryDataset& val_set, const fs::path& dir, const TrainOptions& opts,
                        std::ostream& log);
TrainOutcome cmd_train(const ExperimentConfig& cfg, const fs::path& out, const TrainOptions& opts, std::ostream& log);

struct EvalOptions {
  fs::path checkpoint;        // empty: <out>/train/best.sinockpt
  bool constructed = false;   // evaluate the hand-set Burgers parameters instead
  std::string pattern;        // star, smiley, ai or a .pgm path: extra OOD rollout
  bool dump_fields = false;   // prediction of test trajectory 0 and SLB/product/linear features at t = 0
};

struct EvalOutcome {
  eval::EvalReport report;
  std::optional<eval::SuperResResult> superres;
  std::optional<eval::EvalReport> ood;
};

EvalOutcome cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out, const EvalOptions& opts, std::ostream& log);

struct AblationRow {
  std::string variant;
  double rel_l2 = 0.0;  // NaN when training or any test rollout went non-finite
  double rel_l2_train_window = 0.0;
  double rel_l2_extrapolation = 0.0;
  double best_val = 0.0;
  std::string status;  // "ok" or the failure message
};

/// full, no_pi, no_filter, no_freq2vec, no_linear, euler.
std::vector<std::pair<std::string, model::Ablation>> ablation_variants(const model::Ablation& base);
/// Trains and evaluates one variant; failures become a NaN row.
AblationRow run_variant(const ExperimentConfig& cfg, const std::string& name, const solver::TrajectoryDataset& train_set,
                        const solver::TrajectoryDataset& val_set, const solver::TrajectoryDataset& test_set,
                        const fs::path& dir, std::ostream& log);
void write_ablation_csv(const std::vector<AblationRow>& rows, const fs::path& path);
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log);

struct DistillOptions {
  fs::path teacher;
  std::size_t n_traj = 0;
  double cadence = 0.0;  // <= 0: the config's save_dt
  double horizon = 0.0;  // <= 0: the config's t_end
};

/// Rolls the teacher from fresh GRF states (synthetic seed namespace). A
/// trajectory that goes non-finite is skipped and logged.
solver::TrajectoryDataset distill_dataset(const ExperimentConfig& cfg, const DistillOptions& opts, std::ostream& log);
std::vector<fs::path> cmd_distill_generate(const ExperimentConfig& cfg, const fs::path& out, const DistillOptions& opts,
                                           std::ostream& log);

struct SweepSpec {
  std::vector<std::size_t> n_traj;  // data-efficiency sweep, or
  std::vector<int> C;               // C x K grid
  std::vector<int> K;
};

struct SweepRow {
  std::string point;
  std::size_t n_train = 0;
  int C = 0;
  int K = 0;
  std::string config_hash;
  double best_val = 0.0;
  double test_rel_l2 = 0.0;
  std::string status;
};

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const fs::path& out, const SweepSpec& spec,
                                std::ostream& log);

/// Parses arguments, runs one command and maps errors to exit codes
/// (2 validation, 3 numerical, 4 I/O).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sino::cli
