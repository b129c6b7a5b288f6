// Copyright 2026 The tilestream Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "tilestream/tensor.hpp"

namespace tilestream::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Append-only record of a forward computation. Nodes are stored in
/// creation order, so parents always precede children and a reverse sweep
/// is a valid topological order for backpropagation.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient on backward().
  Var variable(Tensor value);

  /// Record an op result. `backward` is called once with the output gradient
  /// available via grad(self); it must accumulate into parents through
  /// grad_target().
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }

  /// Gradient of the last backward() target with respect to `v`. Zero-filled
  /// for nodes the loss does not depend on.
  Tensor grad(Var v) const;
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient buffer to accumulate into, or nullptr when `id` does not need a
  /// gradient.
  Tensor* grad_target(std::size_t id);

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a single-element node.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Elementwise and reductions.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);

/// Softmax over every element of the tensor; output sums to one.
Var softmax_all(Var a);

// Channel-structured ops on [C,H,W] tensors.
Var concat_channels(Var a, Var b);
Var slice_channels(Var a, std::size_t begin, std::size_t count);
Var global_avg_pool(Var x);                 // [C,H,W] -> [C]
Var scale_channels(Var x, Var scales);      // x[c,..] * scales[c]
Var avg_pool(Var x, std::size_t ph, std::size_t pw);         // stride == window
Var upsample_nearest(Var x, std::size_t fh, std::size_t fw);
Var matvec(Var w, Var v);                   // [A,B] x [B] -> [A]

/// Dense 2-D convolution, "same" zero padding, stride 1. kernels [O,C,kh,kw]
/// with odd kh, kw; bias [O].
Var conv2d(Var x, Var kernels, Var bias);
/// Per-channel spatial convolution; kernels [C,kh,kw]. No bias.
Var depthwise_conv2d(Var x, Var kernels);
/// 1x1 channel mixing; weights [O,C], bias [O].
Var pointwise_conv(Var x, Var weights, Var bias);
/// depthwise_conv2d followed by pointwise_conv.
Var separable_conv(Var x, Var depthwise, Var pointwise, Var bias);

/// Squeeze-and-excitation gating: w1 [C/r,C], w2 [C,C/r].
Var se_excitation(Var x, Var w1, Var w2);   // -> [C] in (0,1)
Var se_block(Var x, Var w1, Var w2);

/// Clamp floor for probabilities inside log terms.
inline constexpr double kLogEpsilon = 1e-7;

/// Mean binary cross-entropy; target entries in {0,1}.
Var bce_loss(Var pred, const Tensor& target);
/// KL(target || pred) after normalising both to unit mass.
Var kl_loss(Var pred, const Tensor& target);

/// Number of multiply-adds for a conv2d / separable conv on [C,H,W].
std::size_t conv2d_flops(std::size_t c, std::size_t o, std::size_t h, std::size_t w,
                         std::size_t kh, std::size_t kw);
std::size_t separable_conv_flops(std::size_t c, std::size_t o, std::size_t h, std::size_t w,
                                 std::size_t kh, std::size_t kw);

}  // namespace tilestream::ad
