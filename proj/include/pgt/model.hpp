#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pgt/graph.hpp"
#include "pgt/temporal_ops.hpp"

namespace pgt {

enum class LayerType { temporal_conv, pointwise_conv, spatial_conv, relu, norm };

/// One entry of a model description. Text form: "tconv:16:pmco",
/// "pconv:16", "sconv:16", "relu", "norm".
struct LayerSpec {
  LayerType type = LayerType::relu;
  std::size_t channels = 0;
  OperatorVariant variant;

  std::string to_string() const;
  static LayerSpec parse(const std::string& text, double pmco_alpha);

  bool operator==(const LayerSpec&) const = default;
};

/// Declarative network: layers followed by a pooled linear classifier.
struct ModelSpec {
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t num_classes = 2;
  double pmco_alpha = 0.5;
  std::vector<LayerSpec> layers;

  /// Key-sorted "key=value" lines; independent of field declaration order.
  std::string canonical() const;
  /// FNV-1a of canonical().
  std::uint64_t digest() const;
  void validate() const;

  std::size_t temporal_layer_count() const;
  std::size_t feature_channels() const;
  /// Shape of one input frame: [C] or [C, H, W].
  Shape frame_shape() const;
  Shape sequence_shape(std::size_t frames) const;

  static std::vector<LayerSpec> parse_layers(const std::string& text, double pmco_alpha);
  static std::string format_layers(const std::vector<LayerSpec>& layers);

  bool operator==(const ModelSpec&) const = default;
};

/// Carried state of every temporal layer between progressive steps.
template <typename T>
struct MarkovState {
  std::vector<LayerState<T>> layers;

  std::size_t elements() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.elements();
    return n;
  }
};

template <typename T>
struct StepForward {
  Var<T> features;
  Var<T> logits;
  MarkovState<T> next;
  /// Per temporal layer, the f_past leaf (only when probing).
  std::vector<Var<T>> carried_leaves;
};

template <typename T>
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::size_t parameter_elements() const;
  void zero_grad();

  MarkovState<T> initial_state() const;

  /// Applies layer i. Temporal convs read `past` as their frame -1
  /// (zero padding when empty); other layers ignore it.
  Var<T> apply_layer(Graph<T>& g, std::size_t i, Var<T> x, Var<T> past = {});
  Var<T> head(Graph<T>& g, Var<T> features);

  /// Integrated pass: every temporal layer is the local operator.
  Var<T> forward_local(Graph<T>& g, Var<T> x);
  /// One progressive step with Markov temporal layers consuming `state`.
  StepForward<T> forward_step(Graph<T>& g, Var<T> x, const MarkovState<T>& state, bool probe_carried = false);

  /// Temporal-layer ordinal of layer i (or npos).
  std::size_t temporal_index(std::size_t layer) const { return temporal_index_[layer]; }

  template <typename U>
  Model<U> cast() const {
    Model<U> out(spec_, 0);
    for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i].value = params_[i].value.template cast<U>();
    return out;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  struct Binding {
    std::size_t weight = npos;
    std::size_t bias = npos;
  };

  ModelSpec spec_;
  std::vector<Parameter<T>> params_;
  std::vector<Binding> bindings_;
  std::vector<std::size_t> temporal_index_;
  Binding head_;
};

/// Result of evaluating the progressive layout in one pass.
template <typename T>
struct LayoutForward {
  std::vector<Var<T>> features;  // per segment
  std::vector<Var<T>> logits;    // per segment
  /// [segment][temporal layer]: f_past before truncation. Segment 0 holds
  /// zero-state leaves.
  std::vector<std::vector<Var<T>>> carried;
};

/// Evaluates all segments layer by layer in a single graph, joining
/// segments with the same Markov rule (truncated f_past on the first frame,
/// zero future tap on the last). segment_models[p] supplies segment p's
/// parameters; pass the same model P times for shared weights.
template <typename T>
LayoutForward<T> layout_forward(Graph<T>& g, std::span<Model<T>* const> segment_models,
                                std::span<const Var<T>> segment_inputs);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace pgt
