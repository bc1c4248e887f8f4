#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pgt/array.hpp"
#include "pgt/model.hpp"
#include "pgt/synthetic.hpp"
#include "pgt/train.hpp"
#include "pgt/trainer.hpp"

namespace pgt {

struct IoConfig {
  std::string checkpoint = "pgt.ckpt";
  std::string metrics = "metrics.csv";
  /// Dataset file from `gendata`; empty generates the task in memory.
  std::string data;
};

/// Everything a run needs. Text form is one `key = value` per line with
/// dotted section keys; '#' starts a comment.
///
///   seed, dtype
///   model.layers, model.pmco_alpha
///   schedule.regime, schedule.T_prime, schedule.P, schedule.dpr
///   train.lr, train.momentum, train.weight_decay, train.epochs,
///   train.warmup_epochs, train.lr_schedule, train.batch_size,
///   train.loss_aggregation, train.grad_clip
///   task.frames, task.channels, task.height, task.width, task.markers,
///   task.rule, task.noise, task.window, task.early_start, task.late_start,
///   task.train_size, task.val_size
///   eval.views, eval.aggregation, eval.theta, eval.target_frame
///   io.checkpoint, io.metrics, io.data
///
/// The model's input shape and class count come from the task section.
struct RunConfig {
  std::uint64_t seed = 1;
  DType dtype = DType::f64;
  std::string layers = "tconv:16:pmco,relu,tconv:16:pmco,relu,tconv:16:pmco,relu";
  double pmco_alpha = 0.5;
  ScheduleConfig schedule;
  TrainConfig train;
  SyntheticTaskSpec task;
  EvalConfig eval;
  IoConfig io;

  ModelSpec model_spec() const;
  /// Task spec with the clip length tied to the schedule's step length.
  SyntheticTaskSpec task_spec() const;
  TrainConfig train_config() const;

  /// Throws ConfigError naming the offending key.
  void validate() const;

  /// Sets one key from its text value; ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Applies a "key=value" override.
  void apply_override(const std::string& assignment);

  /// Every key in sorted order, one per line.
  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;

  static std::vector<std::string> keys();
};

}  // namespace pgt
