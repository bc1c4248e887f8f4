#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pgt/model.hpp"
#include "pgt/schedule.hpp"

namespace pgt {

enum class LrSchedule { cosine, constant };
enum class LossAggregation { per_step_sum, per_step_mean };

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 3;
  LrSchedule lr_schedule = LrSchedule::cosine;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  LossAggregation loss_aggregation = LossAggregation::per_step_mean;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;

  void validate() const;
};

/// Linear warm-up from 0.1 lr to lr over warmup_epochs, then half-period
/// cosine decay (or flat for LrSchedule::constant).
double lr_at(double epoch, const TrainConfig& config);

/// v <- momentum v + (grad + weight_decay param); param <- param - lr v.
template <typename T>
void sgd_update(std::vector<Parameter<T>>& params, std::vector<Array<T>>& velocity, T lr, T momentum, T weight_decay);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Parameter<T>>& params, double max_norm);

/// SGD with momentum; holds one velocity buffer per parameter.
template <typename T>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(const Model<T>& model);

  void step(Model<T>& model, double lr, const TrainConfig& config);

  std::vector<Array<T>>& velocity() { return velocity_; }
  const std::vector<Array<T>>& velocity() const { return velocity_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

 private:
  std::vector<Array<T>> velocity_;
  std::uint64_t steps_ = 0;
};

template <typename T>
struct StepReport {
  T loss = 0;
  std::vector<T> step_losses;
  /// Aggregated logits (mean over steps) of the forward pass.
  Array<T> logits;
  std::size_t peak_activations = 0;
  std::size_t markov_state_elements = 0;
};

/// Progressive forward/backward over every step of the schedule. Each step
/// builds its own graph, backpropagates its loss (scaled by `weight`, and
/// by 1/P for per_step_mean) into the parameter gradients, and is dropped
/// before the next step starts. Does not zero gradients or update.
template <typename T>
StepReport<T> progressive_accumulate(Model<T>& model, const Array<T>& sequence, std::size_t label,
                                     const ProgressiveSchedule& schedule, LossAggregation aggregation,
                                     T weight = T{1}, ActivationMeter* meter = nullptr);

/// Single-pass forward/backward with local operators only.
template <typename T>
StepReport<T> integrated_accumulate(Model<T>& model, const Array<T>& clip, std::size_t label, T weight = T{1},
                                    ActivationMeter* meter = nullptr);

/// Zero grads, accumulate all progressive steps, one optimizer update.
template <typename T>
StepReport<T> progressive_train_step(Model<T>& model, const Array<T>& sequence, std::size_t label,
                                     const ProgressiveSchedule& schedule, SgdOptimizer<T>& optimizer,
                                     const TrainConfig& config, double lr, ActivationMeter* meter = nullptr);

/// Zero grads, one integrated forward/backward, one optimizer update.
template <typename T>
StepReport<T> integrated_train_step(Model<T>& model, const Array<T>& clip, std::size_t label,
                                    SgdOptimizer<T>& optimizer, const TrainConfig& config, double lr,
                                    ActivationMeter* meter = nullptr);

}  // namespace pgt
