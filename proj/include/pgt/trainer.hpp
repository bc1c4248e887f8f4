#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "pgt/eval.hpp"
#include "pgt/synthetic.hpp"
#include "pgt/train.hpp"

namespace pgt {

/// progressive: PGT over the whole sequence. clip: integrated training on
/// random step_length-frame clips (the baseline).
enum class TrainingRegime { progressive, clip };

std::string regime_name(TrainingRegime r);
TrainingRegime parse_regime(const std::string& text);

struct ScheduleConfig {
  TrainingRegime regime = TrainingRegime::progressive;
  std::size_t step_length = 8;  // T'_b, also the baseline clip length
  std::size_t steps = 5;        // P of the basic schedule
  DprMode dpr = DprMode::off;

  std::size_t base_total() const { return progressive_total(step_length, steps); }
  /// Largest P any draw can produce (number of per-step loss columns).
  std::size_t max_steps() const;
  void validate() const;
};

struct EvalConfig {
  std::size_t views = 5;
  Aggregation aggregation = Aggregation::mean;
  double theta = 0.05;
  std::size_t target_frame = 18;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  std::size_t peak_activations = 0;
  /// Mean loss of progressive step p (NaN when no sample had that step).
  std::vector<double> step_losses;
};

/// Epoch loop around progressive/integrated steps. All randomness of an
/// epoch derives from (seed, epoch), so a run resumed at an epoch boundary
/// matches an uninterrupted one.
template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainConfig train, ScheduleConfig schedule, EvalConfig eval);

  EpochMetrics run_epoch(const Dataset<T>& train, const Dataset<T>& val);

  /// Runs the remaining epochs, calling `on_epoch` after each.
  void fit(const Dataset<T>& train, const Dataset<T>& val,
           const std::function<void(const EpochMetrics&)>& on_epoch = {});

  /// Inference mode used for validation: PgLong for progressive training,
  /// MultiViewClips for the clip baseline.
  InferenceMode validation_mode() const;
  /// Brings a sequence to the validation length.
  Array<T> validation_input(const Array<T>& sequence) const;

  std::size_t epoch() const { return epoch_; }
  void set_epoch(std::size_t e) { epoch_ = e; }
  SgdOptimizer<T>& optimizer() { return optimizer_; }

 private:
  Model<T>& model_;
  TrainConfig train_;
  ScheduleConfig schedule_;
  EvalConfig eval_;
  SgdOptimizer<T> optimizer_;
  std::size_t epoch_ = 0;
};

/// Append-only CSV: epoch,split,loss,accuracy,lr,peak_activations and,
/// when step_columns > 0, step_loss_1..step_loss_N.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, std::size_t step_columns);
  void write(const EpochMetrics& m);
  static std::string header(std::size_t step_columns);

 private:
  std::string path_;
  std::size_t step_columns_;
};

}  // namespace pgt
