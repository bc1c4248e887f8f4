#include "pgt/temporal_ops.hpp"

#include <algorithm>

#include "pgt/ops.hpp"

namespace pgt {

OperatorVariant OperatorVariant::pmco(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("model.pmco_alpha", "PMCO momentum must lie in (0, 1), got " + std::to_string(alpha));
  }
  return {Kind::pmco, PoolMode::avg, alpha};
}

std::string OperatorVariant::name() const {
  switch (kind) {
    case Kind::local:
      return "local";
    case Kind::basic_mco:
      return "mco";
    case Kind::cmco:
      return pool == PoolMode::avg ? "cmco-avg" : "cmco-max";
    case Kind::pmco:
      return "pmco";
  }
  return "local";
}

OperatorVariant OperatorVariant::parse(const std::string& text, double alpha) {
  if (text == "local") return local();
  if (text == "mco") return basic_mco();
  if (text == "cmco-avg") return cmco(PoolMode::avg);
  if (text == "cmco-max") return cmco(PoolMode::max);
  if (text == "pmco") return pmco(alpha);
  throw ConfigError("model.layers", "unknown operator variant '" + text + "'");
}

template <typename T>
Var<T> temporal_conv(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias, Var<T> past) {
  const auto d = ops::seq_dims(x.shape());
  const Shape& ws = weight.shape();
  if (ws.size() != 3 || ws[0] != 3) {
    throw ShapeError("temporal conv weight must be [3, Cin, Cout] (only kernel size 3 is supported), got " +
                     shape_string(ws));
  }
  if (ws[1] != d.channels) {
    throw ShapeError("temporal conv expects " + std::to_string(ws[1]) + " input channels, got " +
                     std::to_string(d.channels));
  }
  const std::size_t cin = d.channels;
  const std::size_t cout = ws[2];
  if (bias.value().size() != cout) throw ShapeError("temporal conv bias does not match output channels");
  const std::size_t fs = cin * d.spatial;
  if (past && past.value().size() != fs) {
    throw ShapeError("carried feature " + shape_string(past.shape()) + " does not match frame of " +
                     shape_string(x.shape()));
  }

  const Array<T>& xv = x.value();
  const Array<T>& wv = weight.value();
  const std::vector<T> zeros(fs, T{0});
  const T* past_data = past ? past.value().data() : zeros.data();
  // Source frame for output t and tap k (frame t + k - 1).
  auto src = [&](std::size_t t, std::size_t k) -> const T* {
    if (t == 0 && k == 0) return past_data;
    const std::size_t f = t + k - 1;
    return f >= d.frames ? zeros.data() : xv.data() + f * fs;
  };

  Shape os = x.shape();
  os[1] = cout;
  Array<T> out(os);
  for (std::size_t t = 0; t < d.frames; ++t)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t s = 0; s < d.spatial; ++s) {
        T acc = bias.value()[co];
        for (std::size_t k = 0; k < 3; ++k) {
          const T* in = src(t, k);
          for (std::size_t ci = 0; ci < cin; ++ci) acc += wv[(k * cin + ci) * cout + co] * in[ci * d.spatial + s];
        }
        out[(t * cout + co) * d.spatial + s] = acc;
      }

  std::vector<Var<T>> parents{x, weight, bias};
  if (past) parents.push_back(past);
  const bool has_past = static_cast<bool>(past);
  return g.make_op(std::move(out), std::move(parents), [d, cin, cout, fs, has_past](Node<T>& n) {
    Node<T>* px = n.parents[0];
    Node<T>* pw = n.parents[1];
    Node<T>* pb = n.parents[2];
    Node<T>* pp = has_past ? n.parents[3] : nullptr;
    const T* xd = px->value.data();
    const T* wd = pw->value.data();
    const std::vector<T> zeros(fs, T{0});
    const T* past_data = pp ? pp->value.data() : zeros.data();
    T* gx = px->requires_grad ? px->grad_buffer().data() : nullptr;
    T* gw = pw->requires_grad ? pw->grad_buffer().data() : nullptr;
    T* gb = pb->requires_grad ? pb->grad_buffer().data() : nullptr;
    T* gp = (pp && pp->requires_grad) ? pp->grad_buffer().data() : nullptr;
    for (std::size_t t = 0; t < d.frames; ++t)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t s = 0; s < d.spatial; ++s) {
          const T go = n.grad[(t * cout + co) * d.spatial + s];
          if (gb) gb[co] += go;
          for (std::size_t k = 0; k < 3; ++k) {
            const bool from_past = (t == 0 && k == 0);
            const std::size_t f = t + k - 1;
            if (!from_past && f >= d.frames) continue;  // zero future tap
            const T* in = from_past ? past_data : xd + f * fs;
            T* gin = from_past ? gp : (gx ? gx + f * fs : nullptr);
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const std::size_t wi = (k * cin + ci) * cout + co;
              const std::size_t ii = ci * d.spatial + s;
              if (gw) gw[wi] += go * in[ii];
              if (gin) gin[ii] += go * wd[wi];
            }
          }
        }
  });
}

template <typename T>
MarkovStepOutput<T> markov_step_conv(Graph<T>& g, Var<T> x, const LayerState<T>& state, Var<T> weight,
                                     Var<T> bias, const OperatorVariant& variant, bool probe_carried) {
  if (!variant.is_markov()) {
    throw ContractError("markov_step_conv called with the local operator variant");
  }
  Var<T> leaf = probe_carried ? g.variable(state.carried) : g.constant(state.carried);
  Var<T> past = g.stop_gradient(leaf);
  Var<T> out = temporal_conv(g, x, weight, bias, past);
  return {out, next_layer_state(x.value(), state, variant), probe_carried ? leaf : Var<T>{}};
}

template <typename T>
Array<T> cmco_aggregate(const Array<T>& frames, PoolMode mode) {
  if (frames.rank() < 2) throw ShapeError("aggregate expects [T, C, ...], got " + shape_string(frames.shape()));
  const std::size_t n = frames.frames();
  if (n == 0) throw DomainError("cannot aggregate an empty progressive step");
  const std::size_t fs = frames.frame_size();
  Array<T> out(frames.frame_shape());
  if (mode == PoolMode::avg) {
    for (std::size_t i = 0; i < fs; ++i) {
      T acc = 0;
      for (std::size_t t = 0; t < n; ++t) acc += frames[t * fs + i];
      out[i] = acc / static_cast<T>(n);
    }
  } else {
    for (std::size_t i = 0; i < fs; ++i) {
      T best = frames[i];
      for (std::size_t t = 1; t < n; ++t) best = std::max(best, frames[t * fs + i]);
      out[i] = best;
    }
  }
  return out;
}

template <typename T>
Array<T> pmco_update(const Array<T>& momentum, const Array<T>& step_aggregate, T alpha) {
  require_same_shape(momentum, step_aggregate, "pmco_update");
  if (!(alpha >= T{0} && alpha < T{1})) throw ConfigError("model.pmco_alpha", "momentum must lie in [0, 1)");
  Array<T> out(momentum.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * momentum[i] + (T{1} - alpha) * step_aggregate[i];
  return out;
}

template <typename T>
LayerState<T> next_layer_state(const Array<T>& layer_input, const LayerState<T>& prev, const OperatorVariant& variant) {
  if (layer_input.frame_size() != prev.carried.size()) {
    throw ShapeError("layer state of " + std::to_string(prev.carried.size()) +
                     " elements does not match frames of " + shape_string(layer_input.shape()));
  }
  switch (variant.kind) {
    case OperatorVariant::Kind::basic_mco: {
      auto last = layer_input.frame(layer_input.frames() - 1);
      return {Array<T>(layer_input.frame_shape(), std::vector<T>(last.begin(), last.end())), std::nullopt};
    }
    case OperatorVariant::Kind::cmco:
      return {cmco_aggregate(layer_input, variant.pool), std::nullopt};
    case OperatorVariant::Kind::pmco: {
      Array<T> agg = cmco_aggregate(layer_input, PoolMode::avg);
      Array<T> m = prev.momentum ? pmco_update(*prev.momentum, agg, static_cast<T>(variant.alpha)) : agg;
      return {m, m};
    }
    case OperatorVariant::Kind::local:
      break;
  }
  throw ContractError("local layers carry no Markov state");
}

template <typename T>
Var<T> frame_pool(Graph<T>& g, Var<T> x, PoolMode mode) {
  Array<T> out = cmco_aggregate(x.value(), mode);
  const std::size_t n = x.value().frames();
  const std::size_t fs = x.value().frame_size();
  return g.make_op(std::move(out), {x}, [mode, n, fs](Node<T>& node) {
    Node<T>* p = node.parents[0];
    auto& gp = p->grad_buffer();
    for (std::size_t i = 0; i < fs; ++i) {
      if (mode == PoolMode::avg) {
        for (std::size_t t = 0; t < n; ++t) gp[t * fs + i] += node.grad[i] / static_cast<T>(n);
      } else {
        std::size_t arg = 0;
        for (std::size_t t = 1; t < n; ++t)
          if (p->value[t * fs + i] > p->value[arg * fs + i]) arg = t;
        gp[arg * fs + i] += node.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> pmco_combine(Graph<T>& g, Var<T> momentum, Var<T> step_aggregate, T alpha) {
  Array<T> out = pmco_update(momentum.value(), step_aggregate.value(), alpha);
  return g.make_op(std::move(out), {momentum, step_aggregate}, [alpha](Node<T>& n) {
    Node<T>* pm = n.parents[0];
    Node<T>* pa = n.parents[1];
    if (pm->requires_grad) {
      auto& gm = pm->grad_buffer();
      for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += alpha * n.grad[i];
    }
    if (pa->requires_grad) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (T{1} - alpha) * n.grad[i];
    }
  });
}

template <typename T>
Var<T> classifier_head(Graph<T>& g, Var<T> features, Var<T> weight, Var<T> bias) {
  return ops::linear(g, ops::mean_pool(g, features), weight, bias);
}

#define PGT_INSTANTIATE_TEMPORAL(T)                                                                          \
  template Var<T> temporal_conv(Graph<T>&, Var<T>, Var<T>, Var<T>, Var<T>);                                  \
  template MarkovStepOutput<T> markov_step_conv(Graph<T>&, Var<T>, const LayerState<T>&, Var<T>, Var<T>,     \
                                                const OperatorVariant&, bool);                               \
  template Array<T> cmco_aggregate(const Array<T>&, PoolMode);                                               \
  template Array<T> pmco_update(const Array<T>&, const Array<T>&, T);                                        \
  template LayerState<T> next_layer_state(const Array<T>&, const LayerState<T>&, const OperatorVariant&);     \
  template Var<T> frame_pool(Graph<T>&, Var<T>, PoolMode);                                                   \
  template Var<T> pmco_combine(Graph<T>&, Var<T>, Var<T>, T);                                                \
  template Var<T> classifier_head(Graph<T>&, Var<T>, Var<T>, Var<T>);

PGT_INSTANTIATE_TEMPORAL(float)
PGT_INSTANTIATE_TEMPORAL(double)

}  // namespace pgt
