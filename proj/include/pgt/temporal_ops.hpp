#pragma once

#include <optional>
#include <string>

#include "pgt/graph.hpp"

namespace pgt {

enum class PoolMode { avg, max };

/// Which temporal operator a layer uses when run step by step.
struct OperatorVariant {
  enum class Kind { local, basic_mco, cmco, pmco };

  Kind kind = Kind::local;
  PoolMode pool = PoolMode::avg;  // cmco only
  double alpha = 0.5;             // pmco only

  static OperatorVariant local() { return {}; }
  static OperatorVariant basic_mco() { return {Kind::basic_mco, PoolMode::avg, 0.5}; }
  static OperatorVariant cmco(PoolMode mode) { return {Kind::cmco, mode, 0.5}; }
  static OperatorVariant pmco(double alpha = 0.5);

  bool is_markov() const { return kind != Kind::local; }

  /// "local", "mco", "cmco-avg", "cmco-max" or "pmco".
  std::string name() const;
  /// Inverse of name(); pmco takes its momentum from `alpha`.
  static OperatorVariant parse(const std::string& text, double alpha = 0.5);

  bool operator==(const OperatorVariant&) const = default;
};

/// Carried boundary feature of one temporal layer. `carried` is the
/// f_past consumed by the next step's first frame; `momentum` is present
/// for PMCO layers once a step has been seen.
template <typename T>
struct LayerState {
  Array<T> carried;
  std::optional<Array<T>> momentum;

  /// Step-1 state: zeros, which matches zero padding.
  static LayerState zero(const Shape& frame_shape) { return {Array<T>(frame_shape), std::nullopt}; }

  std::size_t elements() const { return carried.size() + (momentum ? momentum->size() : 0); }
};

/// Temporal convolution with kernel 3 over the leading axis.
/// x [T, Cin, ...], weight [3, Cin, Cout], bias [Cout]. Tap 0 reads the
/// previous frame, tap 1 the current, tap 2 the next. Frame -1 comes from
/// `past` ([Cin, ...]) when given and is zero otherwise; frame T is zero.
template <typename T>
Var<T> temporal_conv(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias, Var<T> past = {});

/// Ordinary zero-padded temporal convolution.
template <typename T>
Var<T> local_temporal_conv(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias) {
  return temporal_conv(g, x, weight, bias);
}

template <typename T>
struct MarkovStepOutput {
  Var<T> out;
  LayerState<T> next;
  /// Leaf holding this step's f_past before truncation (set when probing).
  Var<T> carried_leaf;
};

/// One progressive step of a Markov temporal conv. Interior frames use the
/// local operator; the first frame's past tap is stop_gradient(state), the
/// last frame's future tap is zero. Both positions share weight/bias.
/// With `probe_carried`, the state enters as a gradient-tracking leaf so
/// callers can check that it receives exactly zero gradient.
template <typename T>
MarkovStepOutput<T> markov_step_conv(Graph<T>& g, Var<T> x, const LayerState<T>& state, Var<T> weight,
                                     Var<T> bias, const OperatorVariant& variant, bool probe_carried = false);

/// Per-channel pooling of all frames: [T, C, ...] -> [C, ...].
template <typename T>
Array<T> cmco_aggregate(const Array<T>& frames, PoolMode mode);

/// alpha * momentum + (1 - alpha) * step_aggregate.
template <typename T>
Array<T> pmco_update(const Array<T>& momentum, const Array<T>& step_aggregate, T alpha);

/// State handed to the next step given this step's layer input.
template <typename T>
LayerState<T> next_layer_state(const Array<T>& layer_input, const LayerState<T>& prev, const OperatorVariant& variant);

/// Differentiable cmco_aggregate (same arithmetic).
template <typename T>
Var<T> frame_pool(Graph<T>& g, Var<T> x, PoolMode mode);

/// Differentiable pmco_update (same arithmetic).
template <typename T>
Var<T> pmco_combine(Graph<T>& g, Var<T> momentum, Var<T> step_aggregate, T alpha);

/// Global average over frames followed by an affine map to class logits.
template <typename T>
Var<T> classifier_head(Graph<T>& g, Var<T> features, Var<T> weight, Var<T> bias);

}  // namespace pgt
