#include "pgt/ops.hpp"

#include <algorithm>
#include <cmath>

namespace pgt::ops {

SeqDims seq_dims(const Shape& shape) {
  if (shape.size() < 2) {
    throw ShapeError("sequence tensor needs at least [T, C], got " + shape_string(shape));
  }
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) spatial *= shape[i];
  return {shape[0], shape[1], spatial};
}

namespace {

template <typename T>
Node<T>* parent(Node<T>& n, std::size_t i) {
  return n.parents[i];
}

template <typename T>
void require_rank(const Var<T>& v, std::size_t rank, const char* what) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(v.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "add");
  Array<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return g.make_op(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node<T>* p = parent(n, k);
      if (!p->requires_grad) continue;
      auto& pg = p->grad_buffer();
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "mul");
  Array<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return g.make_op(std::move(out), {a, b}, [](Node<T>& n) {
    Node<T>* pa = parent(n, 0);
    Node<T>* pb = parent(n, 1);
    if (pa->requires_grad) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& gb = pb->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Var<T> scale(Graph<T>& g, Var<T> a, T s) {
  Array<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return g.make_op(std::move(out), {a}, [s](Node<T>& n) {
    auto& pg = parent(n, 0)->grad_buffer();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i] * s;
  });
}

template <typename T>
Var<T> sum(Graph<T>& g, Var<T> a) {
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  return g.make_op(Array<T>::scalar(acc), {a}, [](Node<T>& n) {
    auto& pg = parent(n, 0)->grad_buffer();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[0];
  });
}

template <typename T>
Var<T> relu(Graph<T>& g, Var<T> a) {
  Array<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > T{0} ? a.value()[i] : T{0};
  return g.make_op(std::move(out), {a}, [](Node<T>& n) {
    Node<T>* p = parent(n, 0);
    auto& pg = p->grad_buffer();
    for (std::size_t i = 0; i < pg.size(); ++i) {
      if (p->value[i] > T{0}) pg[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> l2_norm(Graph<T>& g, Var<T> a) {
  T ss = 0;
  for (T v : a.value().values()) ss += v * v;
  const T norm = std::sqrt(ss);
  return g.make_op(Array<T>::scalar(norm), {a}, [norm](Node<T>& n) {
    if (norm == T{0}) return;
    Node<T>* p = parent(n, 0);
    auto& pg = p->grad_buffer();
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[0] * p->value[i] / norm;
  });
}

template <typename T>
Var<T> frame_at(Graph<T>& g, Var<T> x, std::size_t t) {
  const Array<T>& xv = x.value();
  if (t >= xv.frames()) {
    throw ShapeError("frame " + std::to_string(t) + " out of range for " + std::to_string(xv.frames()) +
                     " frames");
  }
  auto f = xv.frame(t);
  Array<T> out(xv.frame_shape(), std::vector<T>(f.begin(), f.end()));
  return g.make_op(std::move(out), {x}, [t](Node<T>& n) {
    Node<T>* p = parent(n, 0);
    auto dst = p->grad_buffer().frame(t);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  });
}

template <typename T>
Var<T> mean_pool(Graph<T>& g, Var<T> x) {
  const auto d = seq_dims(x.shape());
  const Array<T>& xv = x.value();
  Array<T> out(Shape{d.channels});
  const T inv = T{1} / static_cast<T>(d.frames * d.spatial);
  for (std::size_t c = 0; c < d.channels; ++c) {
    T acc = 0;
    for (std::size_t t = 0; t < d.frames; ++t)
      for (std::size_t s = 0; s < d.spatial; ++s) acc += xv[(t * d.channels + c) * d.spatial + s];
    out[c] = acc * inv;
  }
  return g.make_op(std::move(out), {x}, [d, inv](Node<T>& n) {
    auto& pg = parent(n, 0)->grad_buffer();
    for (std::size_t t = 0; t < d.frames; ++t)
      for (std::size_t c = 0; c < d.channels; ++c)
        for (std::size_t s = 0; s < d.spatial; ++s) pg[(t * d.channels + c) * d.spatial + s] += n.grad[c] * inv;
  });
}

template <typename T>
Var<T> linear(Graph<T>& g, Var<T> v, Var<T> weight, Var<T> bias) {
  require_rank(v, 1, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t in = weight.shape()[0];
  const std::size_t outn = weight.shape()[1];
  if (v.shape()[0] != in || bias.value().size() != outn) {
    throw ShapeError("linear: input " + shape_string(v.shape()) + ", weight " + shape_string(weight.shape()) +
                     ", bias " + shape_string(bias.shape()));
  }
  Array<T> out(Shape{outn});
  for (std::size_t k = 0; k < outn; ++k) {
    T acc = bias.value()[k];
    for (std::size_t c = 0; c < in; ++c) acc += v.value()[c] * weight.value()[c * outn + k];
    out[k] = acc;
  }
  return g.make_op(std::move(out), {v, weight, bias}, [in, outn](Node<T>& n) {
    Node<T>* pv = parent(n, 0);
    Node<T>* pw = parent(n, 1);
    Node<T>* pb = parent(n, 2);
    if (pv->requires_grad) {
      auto& gv = pv->grad_buffer();
      for (std::size_t c = 0; c < in; ++c)
        for (std::size_t k = 0; k < outn; ++k) gv[c] += n.grad[k] * pw->value[c * outn + k];
    }
    if (pw->requires_grad) {
      auto& gw = pw->grad_buffer();
      for (std::size_t c = 0; c < in; ++c)
        for (std::size_t k = 0; k < outn; ++k) gw[c * outn + k] += n.grad[k] * pv->value[c];
    }
    if (pb->requires_grad) {
      auto& gb = pb->grad_buffer();
      for (std::size_t k = 0; k < outn; ++k) gb[k] += n.grad[k];
    }
  });
}

template <typename T>
Var<T> pointwise_conv(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias) {
  const auto d = seq_dims(x.shape());
  require_rank(weight, 2, "pointwise weight");
  const std::size_t cout = weight.shape()[1];
  if (weight.shape()[0] != d.channels || bias.value().size() != cout) {
    throw ShapeError("pointwise_conv: input " + shape_string(x.shape()) + ", weight " +
                     shape_string(weight.shape()));
  }
  Shape os = x.shape();
  os[1] = cout;
  Array<T> out(os);
  const Array<T>& xv = x.value();
  const Array<T>& wv = weight.value();
  for (std::size_t t = 0; t < d.frames; ++t)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t s = 0; s < d.spatial; ++s) {
        T acc = bias.value()[co];
        for (std::size_t ci = 0; ci < d.channels; ++ci)
          acc += wv[ci * cout + co] * xv[(t * d.channels + ci) * d.spatial + s];
        out[(t * cout + co) * d.spatial + s] = acc;
      }
  return g.make_op(std::move(out), {x, weight, bias}, [d, cout](Node<T>& n) {
    Node<T>* px = parent(n, 0);
    Node<T>* pw = parent(n, 1);
    Node<T>* pb = parent(n, 2);
    for (std::size_t t = 0; t < d.frames; ++t)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t s = 0; s < d.spatial; ++s) {
          const T go = n.grad[(t * cout + co) * d.spatial + s];
          if (pb->requires_grad) pb->grad_buffer()[co] += go;
          for (std::size_t ci = 0; ci < d.channels; ++ci) {
            const std::size_t xi = (t * d.channels + ci) * d.spatial + s;
            if (pw->requires_grad) pw->grad_buffer()[ci * cout + co] += go * px->value[xi];
            if (px->requires_grad) px->grad_buffer()[xi] += go * pw->value[ci * cout + co];
          }
        }
  });
}

template <typename T>
Var<T> spatial_conv(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias) {
  require_rank(x, 4, "spatial_conv input");
  require_rank(weight, 4, "spatial_conv weight");
  const std::size_t frames = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t cout = weight.shape()[3];
  if (weight.shape()[0] != 3 || weight.shape()[1] != 3 || weight.shape()[2] != cin ||
      bias.value().size() != cout) {
    throw ShapeError("spatial_conv: input " + shape_string(x.shape()) + ", weight " +
                     shape_string(weight.shape()));
  }
  auto xi = [=](std::size_t t, std::size_t c, std::size_t r, std::size_t q) { return ((t * cin + c) * h + r) * w + q; };
  auto oi = [=](std::size_t t, std::size_t c, std::size_t r, std::size_t q) { return ((t * cout + c) * h + r) * w + q; };
  auto wi = [=](std::size_t kr, std::size_t kq, std::size_t ci, std::size_t co) {
    return ((kr * 3 + kq) * cin + ci) * cout + co;
  };
  Array<T> out(Shape{frames, cout, h, w});
  const Array<T>& xv = x.value();
  const Array<T>& wv = weight.value();
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t q = 0; q < w; ++q) {
          T acc = bias.value()[co];
          for (std::size_t kr = 0; kr < 3; ++kr)
            for (std::size_t kq = 0; kq < 3; ++kq) {
              const auto rr = static_cast<std::ptrdiff_t>(r + kr) - 1;
              const auto qq = static_cast<std::ptrdiff_t>(q + kq) - 1;
              if (rr < 0 || qq < 0 || rr >= static_cast<std::ptrdiff_t>(h) || qq >= static_cast<std::ptrdiff_t>(w))
                continue;
              for (std::size_t ci = 0; ci < cin; ++ci)
                acc += wv[wi(kr, kq, ci, co)] * xv[xi(t, ci, static_cast<std::size_t>(rr), static_cast<std::size_t>(qq))];
            }
          out[oi(t, co, r, q)] = acc;
        }
  return g.make_op(std::move(out), {x, weight, bias}, [=](Node<T>& n) {
    Node<T>* px = parent(n, 0);
    Node<T>* pw = parent(n, 1);
    Node<T>* pb = parent(n, 2);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t q = 0; q < w; ++q) {
            const T go = n.grad[oi(t, co, r, q)];
            if (pb->requires_grad) pb->grad_buffer()[co] += go;
            for (std::size_t kr = 0; kr < 3; ++kr)
              for (std::size_t kq = 0; kq < 3; ++kq) {
                const auto rr = static_cast<std::ptrdiff_t>(r + kr) - 1;
                const auto qq = static_cast<std::ptrdiff_t>(q + kq) - 1;
                if (rr < 0 || qq < 0 || rr >= static_cast<std::ptrdiff_t>(h) || qq >= static_cast<std::ptrdiff_t>(w))
                  continue;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const std::size_t xidx = xi(t, ci, static_cast<std::size_t>(rr), static_cast<std::size_t>(qq));
                  const std::size_t widx = wi(kr, kq, ci, co);
                  if (pw->requires_grad) pw->grad_buffer()[widx] += go * px->value[xidx];
                  if (px->requires_grad) px->grad_buffer()[xidx] += go * pw->value[widx];
                }
              }
          }
  });
}

template <typename T>
Var<T> channel_norm(Graph<T>& g, Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const auto d = seq_dims(x.shape());
  if (gamma.value().size() != d.channels || beta.value().size() != d.channels) {
    throw ShapeError("channel_norm: affine parameters do not match " + std::to_string(d.channels) + " channels");
  }
  const Array<T>& xv = x.value();
  const std::size_t count = d.frames * d.spatial;
  auto idx = [d](std::size_t t, std::size_t c, std::size_t s) { return (t * d.channels + c) * d.spatial + s; };
  std::vector<T> mean(d.channels, 0), inv_std(d.channels, 0);
  Array<T> xhat(x.shape());
  Array<T> out(x.shape());
  for (std::size_t c = 0; c < d.channels; ++c) {
    T acc = 0;
    for (std::size_t t = 0; t < d.frames; ++t)
      for (std::size_t s = 0; s < d.spatial; ++s) acc += xv[idx(t, c, s)];
    mean[c] = acc / static_cast<T>(count);
    T var = 0;
    for (std::size_t t = 0; t < d.frames; ++t)
      for (std::size_t s = 0; s < d.spatial; ++s) {
        const T dv = xv[idx(t, c, s)] - mean[c];
        var += dv * dv;
      }
    var /= static_cast<T>(count);
    inv_std[c] = T{1} / std::sqrt(var + eps);
    for (std::size_t t = 0; t < d.frames; ++t)
      for (std::size_t s = 0; s < d.spatial; ++s) {
        const std::size_t i = idx(t, c, s);
        xhat[i] = (xv[i] - mean[c]) * inv_std[c];
        out[i] = gamma.value()[c] * xhat[i] + beta.value()[c];
      }
  }
  return g.make_op(std::move(out), {x, gamma, beta},
                   [d, idx, count, inv_std, xhat = std::move(xhat)](Node<T>& n) {
    Node<T>* px = parent(n, 0);
    Node<T>* pg = parent(n, 1);
    Node<T>* pb = parent(n, 2);
    for (std::size_t c = 0; c < d.channels; ++c) {
      T sum_g = 0, sum_gx = 0;
      for (std::size_t t = 0; t < d.frames; ++t)
        for (std::size_t s = 0; s < d.spatial; ++s) {
          const std::size_t i = idx(t, c, s);
          sum_g += n.grad[i];
          sum_gx += n.grad[i] * xhat[i];
        }
      if (pg->requires_grad) pg->grad_buffer()[c] += sum_gx;
      if (pb->requires_grad) pb->grad_buffer()[c] += sum_g;
      if (px->requires_grad) {
        auto& gx = px->grad_buffer();
        const T gam = pg->value[c];
        const T m = static_cast<T>(count);
        for (std::size_t t = 0; t < d.frames; ++t)
          for (std::size_t s = 0; s < d.spatial; ++s) {
            const std::size_t i = idx(t, c, s);
            gx[i] += gam * inv_std[c] * (n.grad[i] - sum_g / m - xhat[i] * sum_gx / m);
          }
      }
    }
  });
}

template <typename T>
Var<T> softmax_cross_entropy(Graph<T>& g, Var<T> logits, std::size_t label) {
  require_rank(logits, 1, "softmax_cross_entropy");
  const Array<T>& z = logits.value();
  if (label >= z.size()) {
    throw ShapeError("label " + std::to_string(label) + " out of range for " + std::to_string(z.size()) +
                     " classes");
  }
  const T zmax = *std::max_element(z.vec().begin(), z.vec().end());
  T denom = 0;
  for (T v : z.values()) denom += std::exp(v - zmax);
  const T lse = zmax + std::log(denom);
  std::vector<T> prob(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) prob[k] = std::exp(z[k] - lse);
  return g.make_op(Array<T>::scalar(lse - z[label]), {logits}, [prob, label](Node<T>& n) {
    auto& pg = parent(n, 0)->grad_buffer();
    for (std::size_t k = 0; k < prob.size(); ++k) pg[k] += n.grad[0] * (prob[k] - (k == label ? T{1} : T{0}));
  });
}

#define PGT_INSTANTIATE_OPS(T)                                                       \
  template Var<T> add(Graph<T>&, Var<T>, Var<T>);                                    \
  template Var<T> mul(Graph<T>&, Var<T>, Var<T>);                                    \
  template Var<T> scale(Graph<T>&, Var<T>, T);                                       \
  template Var<T> sum(Graph<T>&, Var<T>);                                            \
  template Var<T> relu(Graph<T>&, Var<T>);                                           \
  template Var<T> l2_norm(Graph<T>&, Var<T>);                                        \
  template Var<T> frame_at(Graph<T>&, Var<T>, std::size_t);                          \
  template Var<T> mean_pool(Graph<T>&, Var<T>);                                      \
  template Var<T> linear(Graph<T>&, Var<T>, Var<T>, Var<T>);                         \
  template Var<T> pointwise_conv(Graph<T>&, Var<T>, Var<T>, Var<T>);                 \
  template Var<T> spatial_conv(Graph<T>&, Var<T>, Var<T>, Var<T>);                   \
  template Var<T> channel_norm(Graph<T>&, Var<T>, Var<T>, Var<T>, T);                \
  template Var<T> softmax_cross_entropy(Graph<T>&, Var<T>, std::size_t);

PGT_INSTANTIATE_OPS(float)
PGT_INSTANTIATE_OPS(double)

}  // namespace pgt::ops
