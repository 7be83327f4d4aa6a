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

// Cell-level operator menu and the resampling modules. Every operator owns
// full-capacity kernels; narrower instances use leading slices of them.

#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "denas/ops.hpp"
#include "denas/params.hpp"
#include "denas/rng.hpp"

namespace denas {

enum class OpKind { conv_d1, conv_d2, conv_d3, conv_r, skip, IB, HIN, SWIN };

inline constexpr int kNumOps = 8;
inline constexpr int kNumWidths = 5;
inline constexpr std::array<OpKind, kNumOps> kAllOps = {
    OpKind::conv_d1, OpKind::conv_d2, OpKind::conv_d3, OpKind::conv_r,
    OpKind::skip,    OpKind::IB,      OpKind::HIN,     OpKind::SWIN};

std::string_view op_name(OpKind kind);
OpKind parse_op(std::string_view name);

/// Width menu fraction R[i] = (8 - i) / 8.
double menu_fraction(int index);
/// ceil(R[index] * full), never below one channel.
int menu_width(int full, int index);

struct ZooOptions {
  int window = 8;
  int mlp_ratio = 2;
  double norm_eps = 1e-5;
};

template <typename T>
class Operator {
 public:
  /// `parity` selects the SWIN shift (0: none, 1: half a window).
  Operator(OpKind kind, int in_full, int out_full, ParamStore<T>& store,
           const std::string& prefix, Rng& rng, const ZooOptions& options = {},
           int parity = 0);

  OpKind kind() const { return kind_; }
  int in_width() const { return in_full_; }
  int out_width() const { return out_full_; }

  /// Full-width application; x must carry in_width() channels.
  Var<T> apply(Graph<T>& g, Var<T> x) const;
  /// Slimmed application on x.c <= in_width() channels producing
  /// `out_width` <= out_width() channels.
  Var<T> apply_slim(Graph<T>& g, Var<T> x, int out_width) const;

  /// Inverse of the additive coupling at y's width (IB only, in = out).
  Var<T> invert_ib(Graph<T>& g, Var<T> y) const;
  /// HIN activations right before the leaky-relu (normalized half first).
  Var<T> hin_pre_activation(Graph<T>& g, Var<T> x, int out_width) const;
  /// SWIN attention stage: x + proj_o(attention(proj_q x, proj_k x, proj_v x)).
  Var<T> swin_attention(Graph<T>& g, Var<T> x) const;

  const std::vector<Parameter<T>*>& params() const { return params_; }
  std::size_t param_count() const;

 private:
  Parameter<T>& own(ParamStore<T>& store, const std::string& name, Tensor<T> v);
  Var<T> conv(Graph<T>& g, Var<T> x, int w, int out, int stride, int dil,
              int pad) const;
  Var<T> coupling(Graph<T>& g, Var<T> x1) const;

  OpKind kind_;
  int in_full_;
  int out_full_;
  ZooOptions options_;
  int parity_;
  std::string prefix_;
  std::vector<Parameter<T>*> params_;
};

/// Stride-2 3x3 convolution that doubles the channel count.
template <typename T>
class Downsample {
 public:
  Downsample(int in_full, ParamStore<T>& store, const std::string& prefix,
             Rng& rng);
  /// out_width defaults to 2 * x.c.
  Var<T> apply(Graph<T>& g, Var<T> x, int out_width = -1) const;
  int in_width() const { return in_full_; }

 private:
  int in_full_;
  Parameter<T>* kernel_;
  Parameter<T>* bias_;
};

/// pixel_shuffle(x_low, 2) concatenated with x_skip, then a 1x1 convolution.
template <typename T>
class Upsample {
 public:
  Upsample(int low_full, int skip_full, int out_full, ParamStore<T>& store,
           const std::string& prefix, Rng& rng);
  Var<T> apply(Graph<T>& g, Var<T> x_low, Var<T> x_skip, int out_width) const;

  Parameter<T>& low_kernel() { return *low_; }
  Parameter<T>& skip_kernel() { return *skip_; }

 private:
  int low_full_, skip_full_, out_full_;
  Parameter<T>* low_;
  Parameter<T>* skip_;
  Parameter<T>* bias_;
};

/// Leading (in, out) slice of a (C_out, C_in, k, k) slimmable kernel chosen
/// by width-menu indices.
template <typename T>
Var<T> slice_kernel(Graph<T>& g, Parameter<T>& kernel, int i_in, int i_out);

/// The sequential down/up comparison models (variants 1..5).
template <typename T>
class ToyModel {
 public:
  ToyModel(int variant, int channels, ParamStore<T>& store, Rng& rng,
           int middle_convs = 12);
  Var<T> forward(Graph<T>& g, Var<T> x) const;

  int variant() const { return variant_; }
  /// Module names of the variant, e.g. {"conv-stride2", "pixelshuffle",
  /// "concatenation"}.
  std::vector<std::string> modules() const;
  bool has_concat() const { return variant_ >= 2; }

 private:
  struct Conv {
    Parameter<T>* w;
    Parameter<T>* b;
  };
  Conv make(ParamStore<T>& store, const std::string& name, int out, int in,
            int k, Rng& rng);
  static Var<T> run(Graph<T>& g, const Conv& c, Var<T> x, int stride, int pad);

  int variant_;
  int channels_;
  std::vector<Conv> head_;
  std::vector<Conv> middle_;
  std::vector<Conv> tail_;
  Conv down_{};
  Conv up_{};
  Conv fuse_{};
};

extern template class Operator<float>;
extern template class Operator<double>;
extern template class Downsample<float>;
extern template class Downsample<double>;
extern template class Upsample<float>;
extern template class Upsample<double>;
extern template class ToyModel<float>;
extern template class ToyModel<double>;

}  // namespace denas
