#include "pgt/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "pgt/ops.hpp"
#include "pgt/text.hpp"

namespace pgt {

std::string LayerSpec::to_string() const {
  switch (type) {
    case LayerType::temporal_conv:
      return "tconv:" + std::to_string(channels) + ":" + variant.name();
    case LayerType::pointwise_conv:
      return "pconv:" + std::to_string(channels);
    case LayerType::spatial_conv:
      return "sconv:" + std::to_string(channels);
    case LayerType::relu:
      return "relu";
    case LayerType::norm:
      return "norm";
  }
  return "relu";
}

LayerSpec LayerSpec::parse(const std::string& text, double pmco_alpha) {
  const auto parts = split(text, ':');
  const std::string& kind = parts[0];
  auto channels = [&]() -> std::size_t {
    if (parts.size() < 2) throw ConfigError("model.layers", "layer '" + text + "' needs a channel count");
    std::size_t c = 0;
    const auto& p = parts[1];
    auto res = std::from_chars(p.data(), p.data() + p.size(), c);
    if (res.ec != std::errc() || res.ptr != p.data() + p.size() || c == 0) {
      throw ConfigError("model.layers", "bad channel count in '" + text + "'");
    }
    return c;
  };
  LayerSpec spec;
  if (kind == "tconv") {
    spec.type = LayerType::temporal_conv;
    spec.channels = channels();
    if (parts.size() > 3) throw ConfigError("model.layers", "too many fields in '" + text + "'");
    spec.variant = parts.size() == 3 ? OperatorVariant::parse(parts[2], pmco_alpha) : OperatorVariant::local();
  } else if (kind == "pconv" || kind == "sconv") {
    spec.type = kind == "pconv" ? LayerType::pointwise_conv : LayerType::spatial_conv;
    spec.channels = channels();
    if (parts.size() > 2) throw ConfigError("model.layers", "too many fields in '" + text + "'");
  } else if (kind == "relu" || kind == "norm") {
    spec.type = kind == "relu" ? LayerType::relu : LayerType::norm;
    if (parts.size() > 1) throw ConfigError("model.layers", "'" + kind + "' takes no fields");
  } else {
    throw ConfigError("model.layers", "unknown layer type '" + kind + "'");
  }
  return spec;
}

std::vector<LayerSpec> ModelSpec::parse_layers(const std::string& text, double pmco_alpha) {
  std::vector<LayerSpec> out;
  if (trim(text).empty()) return out;
  for (const auto& item : split(text, ',')) out.push_back(LayerSpec::parse(item, pmco_alpha));
  return out;
}

std::string ModelSpec::format_layers(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) out += (i ? "," : "") + layers[i].to_string();
  return out;
}

std::string ModelSpec::canonical() const {
  std::vector<std::string> lines = {
      "height=" + std::to_string(height),
      "in_channels=" + std::to_string(in_channels),
      "layers=" + format_layers(layers),
      "num_classes=" + std::to_string(num_classes),
      "pmco_alpha=" + format_double(pmco_alpha),
      "width=" + std::to_string(width),
  };
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::uint64_t ModelSpec::digest() const { return fnv1a64(canonical()); }

void ModelSpec::validate() const {
  if (in_channels == 0) throw ConfigError("task.channels", "must be positive");
  if (num_classes < 2) throw ConfigError("task.markers", "need at least two classes");
  if (height == 0 || width == 0) throw ConfigError("task.height", "spatial extents must be positive");
  if (!(pmco_alpha > 0.0 && pmco_alpha < 1.0)) throw ConfigError("model.pmco_alpha", "must lie in (0, 1)");
  for (const auto& l : layers) {
    if (l.type == LayerType::spatial_conv && height * width == 1) {
      throw ConfigError("model.layers", "sconv needs task.height/task.width > 1");
    }
  }
}

std::size_t ModelSpec::temporal_layer_count() const {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.type == LayerType::temporal_conv; }));
}

std::size_t ModelSpec::feature_channels() const {
  std::size_t c = in_channels;
  for (const auto& l : layers)
    if (l.channels != 0) c = l.channels;
  return c;
}

Shape ModelSpec::frame_shape() const {
  if (height * width == 1) return Shape{in_channels};
  return Shape{in_channels, height, width};
}

Shape ModelSpec::sequence_shape(std::size_t frames) const {
  Shape s{frames};
  for (auto d : frame_shape()) s.push_back(d);
  return s;
}

namespace {

template <typename T>
Array<T> gaussian(const Shape& shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Array<T> a(shape);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<T>(dist(rng));
  return a;
}

}  // namespace

template <typename T>
Model<T>::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  std::size_t c = spec_.in_channels;
  std::size_t temporal = 0;
  params_.reserve(2 * spec_.layers.size() + 2);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    Binding b;
    const std::string prefix = "layer" + std::to_string(i) + ".";
    std::size_t idx = npos;
    switch (l.type) {
      case LayerType::temporal_conv:
        b.weight = params_.size();
        params_.emplace_back(prefix + "tconv.weight", gaussian<T>({3, c, l.channels}, std::sqrt(2.0 / (3.0 * c)), rng));
        b.bias = params_.size();
        params_.emplace_back(prefix + "tconv.bias", Array<T>(Shape{l.channels}));
        idx = temporal++;
        c = l.channels;
        break;
      case LayerType::pointwise_conv:
        b.weight = params_.size();
        params_.emplace_back(prefix + "pconv.weight", gaussian<T>({c, l.channels}, std::sqrt(2.0 / c), rng));
        b.bias = params_.size();
        params_.emplace_back(prefix + "pconv.bias", Array<T>(Shape{l.channels}));
        c = l.channels;
        break;
      case LayerType::spatial_conv:
        b.weight = params_.size();
        params_.emplace_back(prefix + "sconv.weight",
                             gaussian<T>({3, 3, c, l.channels}, std::sqrt(2.0 / (9.0 * c)), rng));
        b.bias = params_.size();
        params_.emplace_back(prefix + "sconv.bias", Array<T>(Shape{l.channels}));
        c = l.channels;
        break;
      case LayerType::norm:
        b.weight = params_.size();
        params_.emplace_back(prefix + "norm.gamma", Array<T>(Shape{c}, T{1}));
        b.bias = params_.size();
        params_.emplace_back(prefix + "norm.beta", Array<T>(Shape{c}));
        break;
      case LayerType::relu:
        break;
    }
    bindings_.push_back(b);
    temporal_index_.push_back(idx);
  }
  head_.weight = params_.size();
  params_.emplace_back("head.weight", gaussian<T>({c, spec_.num_classes}, std::sqrt(1.0 / c), rng));
  head_.bias = params_.size();
  params_.emplace_back("head.bias", Array<T>(Shape{spec_.num_classes}));
}

template <typename T>
std::size_t Model<T>::parameter_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
MarkovState<T> Model<T>::initial_state() const {
  MarkovState<T> state;
  std::size_t c = spec_.in_channels;
  for (const auto& l : spec_.layers) {
    if (l.type == LayerType::temporal_conv) {
      Shape fs{c};
      if (spec_.height * spec_.width != 1) fs = {c, spec_.height, spec_.width};
      state.layers.push_back(LayerState<T>::zero(fs));
    }
    if (l.channels != 0) c = l.channels;
  }
  return state;
}

template <typename T>
Var<T> Model<T>::apply_layer(Graph<T>& g, std::size_t i, Var<T> x, Var<T> past) {
  const LayerSpec& l = spec_.layers.at(i);
  const Binding& b = bindings_[i];
  switch (l.type) {
    case LayerType::temporal_conv:
      return temporal_conv(g, x, g.param(params_[b.weight]), g.param(params_[b.bias]), past);
    case LayerType::pointwise_conv:
      return ops::pointwise_conv(g, x, g.param(params_[b.weight]), g.param(params_[b.bias]));
    case LayerType::spatial_conv:
      return ops::spatial_conv(g, x, g.param(params_[b.weight]), g.param(params_[b.bias]));
    case LayerType::norm:
      return ops::channel_norm(g, x, g.param(params_[b.weight]), g.param(params_[b.bias]));
    case LayerType::relu:
      return ops::relu(g, x);
  }
  return x;
}

template <typename T>
Var<T> Model<T>::head(Graph<T>& g, Var<T> features) {
  return classifier_head(g, features, g.param(params_[head_.weight]), g.param(params_[head_.bias]));
}

template <typename T>
Var<T> Model<T>::forward_local(Graph<T>& g, Var<T> x) {
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) x = apply_layer(g, i, x);
  return x;
}

template <typename T>
StepForward<T> Model<T>::forward_step(Graph<T>& g, Var<T> x, const MarkovState<T>& state, bool probe_carried) {
  if (state.layers.size() != spec_.temporal_layer_count()) {
    throw ShapeError("Markov state has " + std::to_string(state.layers.size()) + " layers, model has " +
                     std::to_string(spec_.temporal_layer_count()) + " temporal layers");
  }
  StepForward<T> out;
  out.next.layers.resize(state.layers.size());
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    if (l.type != LayerType::temporal_conv) {
      x = apply_layer(g, i, x);
      continue;
    }
    const std::size_t ti = temporal_index_[i];
    const Binding& b = bindings_[i];
    auto step = markov_step_conv(g, x, state.layers[ti], g.param(params_[b.weight]), g.param(params_[b.bias]),
                                 l.variant, probe_carried);
    if (probe_carried) out.carried_leaves.push_back(step.carried_leaf);
    out.next.layers[ti] = std::move(step.next);
    x = step.out;
  }
  out.features = x;
  out.logits = head(g, x);
  return out;
}

template <typename T>
LayoutForward<T> layout_forward(Graph<T>& g, std::span<Model<T>* const> segment_models,
                                std::span<const Var<T>> segment_inputs) {
  const std::size_t segments = segment_inputs.size();
  if (segments == 0 || segment_models.size() != segments) {
    throw ShapeError("layout_forward needs one model per segment");
  }
  const ModelSpec& spec = segment_models[0]->spec();
  const std::size_t temporal = spec.temporal_layer_count();
  LayoutForward<T> out;
  out.carried.assign(segments, std::vector<Var<T>>(temporal));
  std::vector<Var<T>> xs(segment_inputs.begin(), segment_inputs.end());
  const MarkovState<T> zero = segment_models[0]->initial_state();

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.type != LayerType::temporal_conv) {
      for (std::size_t p = 0; p < segments; ++p) xs[p] = segment_models[p]->apply_layer(g, i, xs[p]);
      continue;
    }
    if (!l.variant.is_markov()) throw ContractError("progressive layout needs Markov variants on every temporal layer");
    const std::size_t ti = segment_models[0]->temporal_index(i);
    Var<T> momentum;
    std::vector<Var<T>> next(segments);
    for (std::size_t p = 0; p < segments; ++p) {
      Var<T> carried;
      if (p == 0) {
        carried = g.variable(zero.layers[ti].carried);
      } else {
        const Var<T>& prev = xs[p - 1];
        switch (l.variant.kind) {
          case OperatorVariant::Kind::basic_mco:
            carried = ops::frame_at(g, prev, prev.value().frames() - 1);
            break;
          case OperatorVariant::Kind::cmco:
            carried = frame_pool(g, prev, l.variant.pool);
            break;
          case OperatorVariant::Kind::pmco: {
            Var<T> agg = frame_pool(g, prev, PoolMode::avg);
            momentum = momentum ? pmco_combine(g, momentum, agg, static_cast<T>(l.variant.alpha)) : agg;
            carried = momentum;
            break;
          }
          case OperatorVariant::Kind::local:
            break;
        }
      }
      out.carried[p][ti] = carried;
      next[p] = segment_models[p]->apply_layer(g, i, xs[p], g.stop_gradient(carried));
    }
    xs = std::move(next);
  }
  for (std::size_t p = 0; p < segments; ++p) {
    out.features.push_back(xs[p]);
    out.logits.push_back(segment_models[p]->head(g, xs[p]));
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template LayoutForward<float> layout_forward(Graph<float>&, std::span<Model<float>* const>,
                                             std::span<const Var<float>>);
template LayoutForward<double> layout_forward(Graph<double>&, std::span<Model<double>* const>,
                                              std::span<const Var<double>>);

}  // namespace pgt
