#pragma once

#include <cstddef>

#include "pgt/graph.hpp"

// Differentiable building blocks. Sequence tensors are laid out as
// [T, C, spatial...] with the spatial axes flattened internally.

namespace pgt::ops {

template <typename T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Graph<T>& g, Var<T> a, T s);

/// Sum of all elements, shape [1].
template <typename T>
Var<T> sum(Graph<T>& g, Var<T> a);

template <typename T>
Var<T> relu(Graph<T>& g, Var<T> a);

/// Euclidean norm of all elements, shape [1]. Gradient at zero is zero.
template <typename T>
Var<T> l2_norm(Graph<T>& g, Var<T> a);

/// Frame t of a sequence tensor, shape [C, spatial...].
template <typename T>
Var<T> frame_at(Graph<T>& g, Var<T> x, std::size_t t);

/// Average over frames and spatial positions: [T, C, ...] -> [C].
template <typename T>
Var<T> mean_pool(Graph<T>& g, Var<T> x);

/// v [C] times weight [C, K] plus bias [K].
template <typename T>
Var<T> linear(Graph<T>& g, Var<T> v, Var<T> weight, Var<T> bias);

/// Per-frame channel mixing: x [T, Cin, ...], weight [Cin, Cout], bias [Cout].
template <typename T>
Var<T> pointwise_conv(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias);

/// Per-frame 3x3 spatial convolution with zero padding:
/// x [T, Cin, H, W], weight [3, 3, Cin, Cout], bias [Cout].
template <typename T>
Var<T> spatial_conv(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias);

/// Per-channel affine normalization with statistics over the frames (and
/// spatial positions) of x only.
template <typename T>
Var<T> channel_norm(Graph<T>& g, Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

/// Softmax cross-entropy of logits [K] against a class index, shape [1].
template <typename T>
Var<T> softmax_cross_entropy(Graph<T>& g, Var<T> logits, std::size_t label);

/// Channels and flattened spatial size of a sequence tensor.
struct SeqDims {
  std::size_t frames;
  std::size_t channels;
  std::size_t spatial;
};
SeqDims seq_dims(const Shape& shape);

}  // namespace pgt::ops
