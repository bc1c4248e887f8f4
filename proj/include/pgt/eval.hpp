#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pgt/model.hpp"
#include "pgt/schedule.hpp"
#include "pgt/synthetic.hpp"

namespace pgt {

enum class Aggregation { mean, max };

std::string aggregation_name(Aggregation a);
Aggregation parse_aggregation(const std::string& text);

/// How a long sequence is evaluated.
///   orig_long:  one local-operator pass over every frame.
///   pg_long:    progressive Markov steps, per-step logits aggregated.
///   multi_view: independent clips, uniformly spaced, logits aggregated.
struct InferenceMode {
  enum class Kind { orig_long, pg_long, multi_view };

  Kind kind = Kind::orig_long;
  ProgressiveSchedule schedule;
  std::size_t views = 1;
  std::size_t clip_length = 0;
  Aggregation aggregation = Aggregation::mean;

  static InferenceMode orig_long() { return {}; }
  static InferenceMode pg_long(ProgressiveSchedule s, Aggregation a = Aggregation::mean) {
    return {Kind::pg_long, std::move(s), 1, 0, a};
  }
  static InferenceMode multi_view(std::size_t views, std::size_t clip_length, Aggregation a = Aggregation::mean) {
    return {Kind::multi_view, {}, views, clip_length, a};
  }
};

/// Element-wise mean or max over views. Each element's values are sorted
/// before summation, so the result does not depend on view order.
template <typename T>
Array<T> aggregate_logits(std::span<const Array<T>> views, Aggregation aggregation);

/// Clip start frames for `views` clips spread evenly over `frames`.
std::vector<std::size_t> view_starts(std::size_t frames, std::size_t views, std::size_t clip_length);

/// Per-step logits of the progressive forward (no gradients).
template <typename T>
std::vector<Array<T>> pg_long_step_logits(Model<T>& model, const Array<T>& sequence, const ProgressiveSchedule& schedule);

template <typename T>
Array<T> infer(Model<T>& model, const Array<T>& sequence, const InferenceMode& mode);

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};

/// Cross-entropy of the aggregated logits and top-1 accuracy.
template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset<T>& data, const InferenceMode& mode);

struct EquivalenceReport {
  double max_abs_diff = 0;
  bool pass = false;
};

/// Step-by-step forward with state carry versus a single-graph evaluation of
/// the same operator layout; compares every step's features and logits.
template <typename T>
EquivalenceReport forward_equivalence_check(Model<T>& model, const Array<T>& sequence,
                                            const ProgressiveSchedule& schedule, double tol);

struct ErfProfile {
  std::size_t target_frame = 0;
  /// Per-frame input-gradient magnitude, normalized to a maximum of 1.
  std::vector<double> magnitudes;
  std::size_t erf_width = 0;
  double theta = 0.05;
  bool degenerate = false;
};

/// Effective receptive field of `target_frame`: gradient of the L2 norm of
/// that frame's last-layer feature (orig-long layout) with respect to every
/// input frame, summed over |channel/spatial| entries. Width counts frames
/// whose normalized magnitude exceeds theta.
template <typename T>
ErfProfile compute_erf(Model<T>& model, const Array<T>& sequence, std::size_t target_frame, double theta = 0.05);

/// Same, with raw magnitudes averaged over several sequences before normalizing.
template <typename T>
ErfProfile compute_erf(Model<T>& model, std::span<const Array<T>> sequences, std::size_t target_frame,
                       double theta = 0.05);

struct MemoryReport {
  std::size_t peak_activations = 0;
  std::size_t markov_state_elements = 0;
};

/// Peak simultaneously-live activation elements during one training step
/// on a T-frame input: integrated when `schedule` is empty, progressive
/// otherwise. Runs on a copy of the model.
template <typename T>
MemoryReport peak_activation_memory(const Model<T>& model, std::size_t frames,
                                    const std::optional<ProgressiveSchedule>& schedule);

}  // namespace pgt
