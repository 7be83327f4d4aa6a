/*
 * Copyright 2026 The denas Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Differentiable primitives. Every function records one entry on the graph
// of its first argument and validates shapes eagerly.

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "denas/graph.hpp"

namespace denas {

inline constexpr double kLeakySlope = 0.2;

// Elementwise, identical shapes.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
/// Multiplies every element of `a` by the single value held in `s`.
template <typename T> Var<T> scale_by(Var<T> a, Var<T> s);
template <typename T> Var<T> leaky_relu(Var<T> a, T slope = T(kLeakySlope));

// Reductions to a 1x1x1x1 scalar.
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
/// mean |a - b|
template <typename T> Var<T> l1_loss(Var<T> a, Var<T> b);
/// mean (a - b)^2
template <typename T> Var<T> mse_loss(Var<T> a, Var<T> b);

// Channel manipulation.
template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& xs);
template <typename T> Var<T> narrow_channels(Var<T> x, int start, int count);
/// Leading-channel rule: truncate to the first `channels` or zero-pad the
/// trailing channels.
template <typename T> Var<T> resize_channels(Var<T> x, int channels);
/// Leading [0, d0) x [0, d1) block of the first two dimensions; used for
/// slimmable kernels (d0 = out channels, d1 = in channels) and biases.
template <typename T> Var<T> slice_leading(Var<T> w, int d0, int d1);

// Spatial.
/// Cross-correlation. kernel (C_out, C_in, k, k), optional bias (C_out,1,1,1).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::optional<Var<T>> bias, int stride,
              int dilation, int padding);
/// Transposed convolution without padding. kernel (C_in, C_out, k, k).
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> kernel, std::optional<Var<T>> bias,
                        int stride);
template <typename T> Var<T> pixel_shuffle(Var<T> x, int r);
template <typename T> Var<T> pixel_unshuffle(Var<T> x, int r);
template <typename T> Var<T> avg_pool2(Var<T> x);
/// Bilinear x2 upsampling, half-pixel centres (align_corners = false).
template <typename T> Var<T> upsample_bilinear2(Var<T> x);
template <typename T> Var<T> instance_norm(Var<T> x, T eps);
/// Single-head scaled dot-product attention inside non-overlapping windows
/// of a grid cyclically shifted by `shift`. q, k, v share one shape.
template <typename T>
Var<T> window_attention_core(Var<T> q, Var<T> k, Var<T> v, int window,
                             int shift);

// Small vectors (architecture weights) are stored as (1, K, 1, 1).
template <typename T> Var<T> softmax(Var<T> logits);
template <typename T> Var<T> gather(Var<T> v, std::span<const int> idx);
template <typename T> Var<T> pick(Var<T> v, int i);

// Search-specific gradient estimators. Each returns the sampled value in the
// forward pass and attaches a surrogate gradient for the weights.

/// Forward: `out` unchanged. Backward: `out` receives the incoming gradient;
/// logits receive <g, out> * (1[j = sampled] - softmax(logits)_j).
template <typename T>
Var<T> score_gate(Var<T> out, Var<T> logits, int sampled);
/// Forward: outs[sampled] bit-exactly. Backward: outs[sampled] receives g,
/// the others nothing; relaxed[j] receives <g, outs[j]>.
template <typename T>
Var<T> straight_through(const std::vector<Var<T>>& outs, Var<T> relaxed,
                        int sampled);
/// Forward: `out` unchanged (it has widths[sampled] channels). Backward:
/// relaxed[j] receives <g, out> restricted to the leading widths[j]
/// channels.
template <typename T>
Var<T> width_gate(Var<T> out, Var<T> relaxed, std::span<const int> widths,
                  int sampled);

}  // namespace denas
