#include "pgt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "pgt/ops.hpp"
#include "pgt/train.hpp"

namespace pgt {

std::string aggregation_name(Aggregation a) { return a == Aggregation::mean ? "mean" : "max"; }

Aggregation parse_aggregation(const std::string& text) {
  if (text == "mean") return Aggregation::mean;
  if (text == "max") return Aggregation::max;
  throw ConfigError("eval.aggregation", "expected mean or max, got '" + text + "'");
}

template <typename T>
Array<T> aggregate_logits(std::span<const Array<T>> views, Aggregation aggregation) {
  if (views.empty()) throw LengthError("no views to aggregate");
  Array<T> out(views[0].shape());
  std::vector<T> column(views.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t v = 0; v < views.size(); ++v) {
      require_same_shape(views[v], views[0], "aggregate_logits");
      column[v] = views[v][i];
    }
    std::sort(column.begin(), column.end());
    if (aggregation == Aggregation::max) {
      out[i] = column.back();
    } else {
      T acc = 0;
      for (T c : column) acc += c;
      out[i] = acc / static_cast<T>(column.size());
    }
  }
  return out;
}

std::vector<std::size_t> view_starts(std::size_t frames, std::size_t views, std::size_t clip_length) {
  if (clip_length == 0 || clip_length > frames) {
    throw LengthError("clip of " + std::to_string(clip_length) + " frames does not fit a " + std::to_string(frames) +
                      "-frame sequence");
  }
  if (views == 0) throw LengthError("need at least one view");
  const std::size_t span = frames - clip_length;
  if (views == 1) return {span / 2};
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < views; ++i) {
    out.push_back(static_cast<std::size_t>(
        std::llround(static_cast<double>(i) * static_cast<double>(span) / static_cast<double>(views - 1))));
  }
  return out;
}

template <typename T>
std::vector<Array<T>> pg_long_step_logits(Model<T>& model, const Array<T>& sequence, const ProgressiveSchedule& schedule) {
  if (sequence.frames() < schedule.step_length) {
    throw LengthError("sequence of " + std::to_string(sequence.frames()) + " frames is shorter than one step");
  }
  if (sequence.frames() != schedule.total_frames()) {
    throw ScheduleError("schedule covers " + std::to_string(schedule.total_frames()) + " frames, sequence has " +
                        std::to_string(sequence.frames()));
  }
  std::vector<Array<T>> out;
  MarkovState<T> state = model.initial_state();
  for (const FrameRange& r : schedule.ranges) {
    Graph<T> g;
    auto fwd = model.forward_step(g, g.constant(sequence.slice_frames(r.begin, r.end)), state);
    out.push_back(fwd.logits.value());
    state = std::move(fwd.next);
  }
  return out;
}

template <typename T>
Array<T> infer(Model<T>& model, const Array<T>& sequence, const InferenceMode& mode) {
  switch (mode.kind) {
    case InferenceMode::Kind::orig_long: {
      if (sequence.frames() == 0) throw LengthError("empty sequence");
      Graph<T> g;
      return model.head(g, model.forward_local(g, g.constant(sequence))).value();
    }
    case InferenceMode::Kind::pg_long: {
      const auto steps = pg_long_step_logits(model, sequence, mode.schedule);
      return aggregate_logits<T>(steps, mode.aggregation);
    }
    case InferenceMode::Kind::multi_view: {
      std::vector<Array<T>> views;
      for (std::size_t s : view_starts(sequence.frames(), mode.views, mode.clip_length)) {
        Graph<T> g;
        Var<T> clip = g.constant(sequence.slice_frames(s, s + mode.clip_length));
        views.push_back(model.head(g, model.forward_local(g, clip)).value());
      }
      return aggregate_logits<T>(views, mode.aggregation);
    }
  }
  throw ContractError("unknown inference mode");
}

template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset<T>& data, const InferenceMode& mode) {
  EvalResult r;
  if (data.size() == 0) return r;
  std::size_t correct = 0;
  double loss = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Array<T> logits = infer(model, data.sequences[i], mode);
    Graph<T> g;
    loss += static_cast<double>(ops::softmax_cross_entropy(g, g.constant(logits), data.labels[i]).value()[0]);
    const auto best = std::max_element(logits.vec().begin(), logits.vec().end()) - logits.vec().begin();
    if (static_cast<std::size_t>(best) == data.labels[i]) ++correct;
  }
  r.loss = loss / static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

template <typename T>
EquivalenceReport forward_equivalence_check(Model<T>& model, const Array<T>& sequence,
                                            const ProgressiveSchedule& schedule, double tol) {
  if (sequence.frames() != schedule.total_frames()) {
    throw ScheduleError("schedule and sequence lengths differ");
  }
  std::vector<Array<T>> step_features, step_logits;
  MarkovState<T> state = model.initial_state();
  for (const FrameRange& r : schedule.ranges) {
    Graph<T> g;
    auto fwd = model.forward_step(g, g.constant(sequence.slice_frames(r.begin, r.end)), state);
    step_features.push_back(fwd.features.value());
    step_logits.push_back(fwd.logits.value());
    state = std::move(fwd.next);
  }

  Graph<T> g;
  std::vector<Var<T>> inputs;
  for (const FrameRange& r : schedule.ranges) inputs.push_back(g.constant(sequence.slice_frames(r.begin, r.end)));
  std::vector<Model<T>*> models(inputs.size(), &model);
  const auto layout = layout_forward<T>(g, models, inputs);

  double diff = 0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    diff = std::max(diff, static_cast<double>(max_abs_diff(step_features[p], layout.features[p].value())));
    diff = std::max(diff, static_cast<double>(max_abs_diff(step_logits[p], layout.logits[p].value())));
  }
  return {diff, diff <= tol};
}

namespace {

template <typename T>
std::vector<double> erf_raw(Model<T>& model, const Array<T>& sequence, std::size_t target_frame) {
  if (target_frame >= sequence.frames()) {
    throw LengthError("target frame " + std::to_string(target_frame) + " outside a " +
                      std::to_string(sequence.frames()) + "-frame sequence");
  }
  Graph<T> g;
  Var<T> x = g.variable(sequence);
  Var<T> features = model.forward_local(g, x);
  Var<T> loss = ops::l2_norm(g, ops::frame_at(g, features, target_frame));
  g.backward(loss, false);
  std::vector<double> mag(sequence.frames(), 0.0);
  for (std::size_t t = 0; t < sequence.frames(); ++t)
    for (T v : x.grad().frame(t)) mag[t] += std::abs(static_cast<double>(v));
  return mag;
}

ErfProfile finish_profile(std::vector<double> mag, std::size_t target_frame, double theta) {
  ErfProfile p;
  p.target_frame = target_frame;
  p.theta = theta;
  const double peak = mag.empty() ? 0.0 : *std::max_element(mag.begin(), mag.end());
  if (peak == 0.0) {
    p.degenerate = true;
    std::cerr << "warning: zero input gradient for frame " << target_frame << "; degenerate model\n";
  } else {
    for (double& m : mag) m /= peak;
  }
  p.magnitudes = std::move(mag);
  p.erf_width = static_cast<std::size_t>(
      std::count_if(p.magnitudes.begin(), p.magnitudes.end(), [theta](double m) { return m > theta; }));
  return p;
}

}  // namespace

template <typename T>
ErfProfile compute_erf(Model<T>& model, const Array<T>& sequence, std::size_t target_frame, double theta) {
  return finish_profile(erf_raw(model, sequence, target_frame), target_frame, theta);
}

template <typename T>
ErfProfile compute_erf(Model<T>& model, std::span<const Array<T>> sequences, std::size_t target_frame, double theta) {
  if (sequences.empty()) throw LengthError("no sequences for ERF");
  std::vector<double> total;
  for (const auto& s : sequences) {
    auto mag = erf_raw(model, s, target_frame);
    if (total.empty()) total.assign(mag.size(), 0.0);
    if (mag.size() != total.size()) throw ShapeError("ERF sequences differ in length");
    for (std::size_t t = 0; t < mag.size(); ++t) total[t] += mag[t];
  }
  for (double& v : total) v /= static_cast<double>(sequences.size());
  return finish_profile(std::move(total), target_frame, theta);
}

template <typename T>
MemoryReport peak_activation_memory(const Model<T>& model, std::size_t frames,
                                    const std::optional<ProgressiveSchedule>& schedule) {
  Model<T> probe = model;
  const Array<T> sequence(probe.spec().sequence_shape(frames), T(0.5));
  ActivationMeter meter;
  StepReport<T> report = schedule
                             ? progressive_accumulate(probe, sequence, 0, *schedule, LossAggregation::per_step_mean,
                                                      T{1}, &meter)
                             : integrated_accumulate(probe, sequence, 0, T{1}, &meter);
  return {report.peak_activations, report.markov_state_elements};
}

#define PGT_INSTANTIATE_EVAL(T)                                                                                \
  template Array<T> aggregate_logits(std::span<const Array<T>>, Aggregation);                                  \
  template std::vector<Array<T>> pg_long_step_logits(Model<T>&, const Array<T>&, const ProgressiveSchedule&);  \
  template Array<T> infer(Model<T>&, const Array<T>&, const InferenceMode&);                                   \
  template EvalResult evaluate(Model<T>&, const Dataset<T>&, const InferenceMode&);                            \
  template EquivalenceReport forward_equivalence_check(Model<T>&, const Array<T>&, const ProgressiveSchedule&, \
                                                       double);                                                \
  template ErfProfile compute_erf(Model<T>&, const Array<T>&, std::size_t, double);                            \
  template ErfProfile compute_erf(Model<T>&, std::span<const Array<T>>, std::size_t, double);                  \
  template MemoryReport peak_activation_memory(const Model<T>&, std::size_t,                                   \
                                               const std::optional<ProgressiveSchedule>&);

PGT_INSTANTIATE_EVAL(float)
PGT_INSTANTIATE_EVAL(double)

}  // namespace pgt
