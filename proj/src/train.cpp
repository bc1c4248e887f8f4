#include "pgt/train.hpp"

#include <cmath>
#include <numbers>

#include "pgt/ops.hpp"

namespace pgt {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum", "must lie in [0, 1)");
  if (epochs == 0) throw ConfigError("train.epochs", "must be positive");
  if (warmup_epochs >= epochs) throw ConfigError("train.warmup_epochs", "must be smaller than train.epochs");
  if (batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip", "must be non-negative");
}

double lr_at(double epoch, const TrainConfig& config) {
  const double warmup = static_cast<double>(config.warmup_epochs);
  if (epoch < warmup) return config.lr * (0.1 + 0.9 * epoch / warmup);
  if (config.lr_schedule == LrSchedule::constant) return config.lr;
  const double span = static_cast<double>(config.epochs) - warmup;
  const double progress = (epoch - warmup) / span;
  return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void sgd_update(std::vector<Parameter<T>>& params, std::vector<Array<T>>& velocity, T lr, T momentum, T weight_decay) {
  if (velocity.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    Array<T>& v = velocity[i];
    require_same_shape(p.value, v, "sgd velocity");
    require_same_shape(p.value, p.grad, "sgd gradient");
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = momentum * v[k] + (p.grad[k] + weight_decay * p.value[k]);
      p.value[k] -= lr * v[k];
    }
  }
}

template <typename T>
double clip_grad_norm(std::vector<Parameter<T>>& params, double max_norm) {
  double ss = 0;
  for (const auto& p : params)
    for (T g : p.grad.values()) ss += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& p : params)
      for (T& g : p.grad.values()) g *= factor;
  }
  return norm;
}

template <typename T>
SgdOptimizer<T>::SgdOptimizer(const Model<T>& model) {
  for (const auto& p : model.parameters()) velocity_.emplace_back(p.value.shape());
}

template <typename T>
void SgdOptimizer<T>::step(Model<T>& model, double lr, const TrainConfig& config) {
  if (config.grad_clip > 0.0) clip_grad_norm(model.parameters(), config.grad_clip);
  sgd_update(model.parameters(), velocity_, static_cast<T>(lr), static_cast<T>(config.momentum),
             static_cast<T>(config.weight_decay));
  ++steps_;
}

template <typename T>
StepReport<T> progressive_accumulate(Model<T>& model, const Array<T>& sequence, std::size_t label,
                                     const ProgressiveSchedule& schedule, LossAggregation aggregation, T weight,
                                     ActivationMeter* meter) {
  if (schedule.total_frames() != sequence.frames()) {
    throw ScheduleError("schedule covers " + std::to_string(schedule.total_frames()) + " frames but the sequence has " +
                        std::to_string(sequence.frames()));
  }
  const std::size_t steps = schedule.ranges.size();
  const T step_weight = aggregation == LossAggregation::per_step_mean ? weight / static_cast<T>(steps) : weight;
  ActivationMeter local;
  ActivationMeter* m = meter ? meter : &local;
  m->reset_peak();

  StepReport<T> report;
  MarkovState<T> state = model.initial_state();
  for (std::size_t p = 0; p < steps; ++p) {
    const FrameRange& r = schedule.ranges[p];
    Graph<T> g(m);
    Var<T> x = g.constant(sequence.slice_frames(r.begin, r.end));
    StepForward<T> fwd = model.forward_step(g, x, state);
    Var<T> loss = ops::softmax_cross_entropy(g, fwd.logits, label);
    const T value = loss.value()[0];
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at progressive step " + std::to_string(p + 1));
    }
    g.backward(loss, true, step_weight);
    report.step_losses.push_back(value);
    if (report.logits.empty()) report.logits = Array<T>(fwd.logits.shape());
    for (std::size_t k = 0; k < report.logits.size(); ++k) report.logits[k] += fwd.logits.value()[k];
    state = std::move(fwd.next);
    report.markov_state_elements = std::max(report.markov_state_elements, state.elements());
  }
  for (auto& v : report.logits.values()) v /= static_cast<T>(steps);
  T total = 0;
  for (T v : report.step_losses) total += v;
  report.loss = aggregation == LossAggregation::per_step_mean ? total / static_cast<T>(steps) : total;
  report.peak_activations = m->peak();
  return report;
}

template <typename T>
StepReport<T> integrated_accumulate(Model<T>& model, const Array<T>& clip, std::size_t label, T weight,
                                    ActivationMeter* meter) {
  ActivationMeter local;
  ActivationMeter* m = meter ? meter : &local;
  m->reset_peak();
  StepReport<T> report;
  {
    Graph<T> g(m);
    Var<T> x = g.constant(clip);
    Var<T> logits = model.head(g, model.forward_local(g, x));
    Var<T> loss = ops::softmax_cross_entropy(g, logits, label);
    const T value = loss.value()[0];
    if (!std::isfinite(value)) throw NumericError("non-finite loss in integrated step");
    g.backward(loss, true, weight);
    report.loss = value;
    report.step_losses = {value};
    report.logits = logits.value();
  }
  report.peak_activations = m->peak();
  return report;
}

template <typename T>
StepReport<T> progressive_train_step(Model<T>& model, const Array<T>& sequence, std::size_t label,
                                     const ProgressiveSchedule& schedule, SgdOptimizer<T>& optimizer,
                                     const TrainConfig& config, double lr, ActivationMeter* meter) {
  model.zero_grad();
  auto report = progressive_accumulate(model, sequence, label, schedule, config.loss_aggregation, T{1}, meter);
  optimizer.step(model, lr, config);
  return report;
}

template <typename T>
StepReport<T> integrated_train_step(Model<T>& model, const Array<T>& clip, std::size_t label,
                                    SgdOptimizer<T>& optimizer, const TrainConfig& config, double lr,
                                    ActivationMeter* meter) {
  model.zero_grad();
  auto report = integrated_accumulate(model, clip, label, T{1}, meter);
  optimizer.step(model, lr, config);
  return report;
}

#define PGT_INSTANTIATE_TRAIN(T)                                                                               \
  template void sgd_update(std::vector<Parameter<T>>&, std::vector<Array<T>>&, T, T, T);                       \
  template double clip_grad_norm(std::vector<Parameter<T>>&, double);                                          \
  template class SgdOptimizer<T>;                                                                              \
  template StepReport<T> progressive_accumulate(Model<T>&, const Array<T>&, std::size_t,                       \
                                                const ProgressiveSchedule&, LossAggregation, T, ActivationMeter*); \
  template StepReport<T> integrated_accumulate(Model<T>&, const Array<T>&, std::size_t, T, ActivationMeter*);  \
  template StepReport<T> progressive_train_step(Model<T>&, const Array<T>&, std::size_t,                       \
                                                const ProgressiveSchedule&, SgdOptimizer<T>&,                  \
                                                const TrainConfig&, double, ActivationMeter*);                 \
  template StepReport<T> integrated_train_step(Model<T>&, const Array<T>&, std::size_t, SgdOptimizer<T>&,      \
                                               const TrainConfig&, double, ActivationMeter*);

PGT_INSTANTIATE_TRAIN(float)
PGT_INSTANTIATE_TRAIN(double)

}  // namespace pgt
