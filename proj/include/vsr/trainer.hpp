#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vsr/dataset.hpp"
#include "vsr/ensemble.hpp"
#include "vsr/metrics.hpp"
#include "vsr/optim.hpp"
#include "vsr/sr_models.hpp"

namespace vsr {

struct TrainConfig {
  SrConfig model;
  LossKind loss = LossKind::l1;
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-4;
  std::vector<double> lr_drops{5e-5, 3e-5, 1e-5};  // applied at successive plateaus
  PlateauRule plateau;
  int batch = 16;
  int lr_patch = 24;
  int steps = 1000;
  int eval_interval = 100;
  bool augment = true;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint;  // best-by-select model; empty: not written
  std::filesystem::path log_path;    // CSV step,lr,loss,select_psnr; empty: not written
  std::filesystem::path state_path;  // resumable state, refreshed at each evaluation

  std::vector<std::string> violations() const;
  void validate() const;
};

struct TrainLogRow {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;         // mean training loss since the previous row
  double select_psnr = 0.0;  // NaN when there is no select split
};

std::string log_csv(const std::vector<TrainLogRow>& rows);

/// Step-by-step SR training. Each step draws its batch from an RNG derived
/// from (seed, step), so the state saved by state_records() is enough to
/// continue bit-identically.
class SrTrainer {
 public:
  SrTrainer(TrainConfig config, const Dataset& data);

  /// Advance until `step() == min(until, config.steps)`.
  void run(int until);
  void run() { run(config_.steps); }
  bool done() const { return step_ >= config_.steps; }
  int step() const { return step_; }

  SrModel& model() { return model_; }
  /// Best model by select PSNR (the current model when nothing was evaluated).
  SrModel& best_model() { return best_ ? *best_ : model_; }
  double best_psnr() const { return best_psnr_; }
  const std::vector<TrainLogRow>& log() const { return log_; }
  const Optimizer<float>& optimizer() const { return opt_; }

  std::vector<Record> state_records();
  void restore(std::span<const Record> records);
  void save_state(const std::filesystem::path& path);
  void load_state(const std::filesystem::path& path);

  /// Loss on one batch, without updating anything.
  double train_step();

 private:
  void evaluate_select();
  void write_outputs();

  TrainConfig config_;
  const Dataset& data_;
  std::vector<int> train_, select_;
  SrModel model_;
  std::optional<SrModel> best_;
  Optimizer<float> opt_;
  int step_ = 0;
  double loss_sum_ = 0.0;
  int loss_count_ = 0;
  double best_psnr_ = 0.0;
  std::vector<TrainLogRow> log_;
};

struct SrTrainResult {
  SrModel model;  // best by select PSNR
  std::vector<TrainLogRow> log;
  double best_psnr = 0.0;
};

SrTrainResult train_sr(const TrainConfig& config, const Dataset& data);

/// Optimizer schedule of a TrainConfig.
Optimizer<float> make_optimizer(const TrainConfig& config);

struct EnsembleTrainConfig {
  int passes = 150;
  double lr = 0.1;
  int pass_drop = 50;  // lr /= 10 every pass_drop passes
  int batch = 4;
  int patch = 48;      // HR crop side, multiple of 8; 0 uses whole frames
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint;  // final net; empty: not written
  std::filesystem::path log_path;

  std::vector<std::string> violations() const;
  void validate() const;
};

struct EnsembleTrainResult {
  EnsembleNet net;
  std::vector<TrainLogRow> log;  // one row per pass, step = passes completed
};

/// Trains on every frame of the `which` sequences. Candidate outputs are
/// computed once up-front and then treated as constants. Needs >= 2 members.
EnsembleTrainResult train_ensemble(const EnsembleTrainConfig& config,
                                   const std::vector<FrameSource>& members, const Dataset& data,
                                   const std::vector<int>& which);

}  // namespace vsr
