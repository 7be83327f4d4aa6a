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

#include "denas/zoo.hpp"

#include <algorithm>

namespace denas {
namespace {

constexpr std::array<std::string_view, kNumOps> kNames = {
    "conv_d1", "conv_d2", "conv_d3", "conv_r", "skip", "IB", "HIN", "SWIN"};

template <typename T>
std::optional<Var<T>> bias_slice(Graph<T>& g, Parameter<T>* b, int out) {
  if (b == nullptr) return std::nullopt;
  return slice_leading(g.param(*b), out, 1);
}

}  // namespace

std::string_view op_name(OpKind kind) {
  return kNames.at(static_cast<std::size_t>(kind));
}

OpKind parse_op(std::string_view name) {
  for (int i = 0; i < kNumOps; ++i) {
    if (kNames[i] == name) return kAllOps[i];
  }
  throw Error("unknown operator '" + std::string(name) + "'");
}

double menu_fraction(int index) {
  if (index < 0 || index >= kNumWidths) {
    throw Error("width index " + std::to_string(index) + " outside [0, 4]");
  }
  return (8 - index) / 8.0;
}

int menu_width(int full, int index) {
  menu_fraction(index);
  return std::max(1, (full * (8 - index) + 7) / 8);
}

// ---------------------------------------------------------------------------

template <typename T>
Operator<T>::Operator(OpKind kind, int in_full, int out_full,
                      ParamStore<T>& store, const std::string& prefix, Rng& rng,
                      const ZooOptions& options, int parity)
    : kind_(kind),
      in_full_(in_full),
      out_full_(out_full),
      options_(options),
      parity_(parity),
      prefix_(prefix) {
  if (in_full < 1 || out_full < 1) throw Error("operator widths must be positive");
  auto zeros = [](int c) { return Tensor<T>(Shape{c, 1, 1, 1}); };
  switch (kind) {
    case OpKind::conv_d1:
    case OpKind::conv_d2:
    case OpKind::conv_d3:
    case OpKind::conv_r:
      own(store, "w", init_kernel<T>(out_full, in_full, 3, rng));
      own(store, "b", zeros(out_full));
      break;
    case OpKind::skip:
      break;
    case OpKind::IB: {
      if (in_full % 2 != 0) throw Error("IB requires an even channel count");
      const int h = in_full / 2;
      own(store, "f1_w", init_kernel<T>(h, h, 3, rng));
      own(store, "f1_b", zeros(h));
      own(store, "f2_w", init_kernel<T>(h, h, 3, rng));
      own(store, "f2_b", zeros(h));
      break;
    }
    case OpKind::HIN:
      own(store, "c1_w", init_kernel<T>(out_full, in_full, 3, rng));
      own(store, "c1_b", zeros(out_full));
      own(store, "c2_w", init_kernel<T>(out_full, out_full, 3, rng));
      own(store, "c2_b", zeros(out_full));
      own(store, "sc_w", init_kernel<T>(out_full, in_full, 1, rng));
      break;
    case OpKind::SWIN: {
      const int hidden = options.mlp_ratio * in_full;
      own(store, "q_w", init_kernel<T>(in_full, in_full, 1, rng));
      own(store, "k_w", init_kernel<T>(in_full, in_full, 1, rng));
      own(store, "v_w", init_kernel<T>(in_full, in_full, 1, rng));
      own(store, "o_w", init_kernel<T>(in_full, in_full, 1, rng));
      own(store, "o_b", zeros(in_full));
      own(store, "m1_w", init_kernel<T>(hidden, in_full, 1, rng));
      own(store, "m1_b", zeros(hidden));
      own(store, "m2_w", init_kernel<T>(out_full, hidden, 1, rng));
      own(store, "m2_b", zeros(out_full));
      break;
    }
  }
}

template <typename T>
Parameter<T>& Operator<T>::own(ParamStore<T>& store, const std::string& name,
                               Tensor<T> v) {
  Parameter<T>& p = store.add(prefix_ + "/" + name, std::move(v));
  params_.push_back(&p);
  return p;
}

template <typename T>
std::size_t Operator<T>::param_count() const {
  std::size_t n = 0;
  for (auto* p : params_) n += p->value().size();
  return n;
}

// params_[w] is a kernel and params_[w + 1] its bias.
template <typename T>
Var<T> Operator<T>::conv(Graph<T>& g, Var<T> x, int w, int out, int stride,
                         int dil, int pad) const {
  Var<T> k = slice_leading(g.param(*params_.at(w)), out, x.shape().c);
  return conv2d(x, k, bias_slice(g, params_.at(w + 1), out), stride, dil, pad);
}

template <typename T>
Var<T> Operator<T>::coupling(Graph<T>& g, Var<T> x1) const {
  const int h = x1.shape().c;
  Var<T> t = leaky_relu(conv(g, x1, 0, h, 1, 1, 1));
  return conv(g, t, 2, h, 1, 1, 1);
}

template <typename T>
Var<T> Operator<T>::apply(Graph<T>& g, Var<T> x) const {
  if (x.shape().c != in_full_) {
    throw Error(std::string(op_name(kind_)) + ": input has " +
                std::to_string(x.shape().c) + " channels, expected " +
                std::to_string(in_full_));
  }
  return apply_slim(g, x, out_full_);
}

template <typename T>
Var<T> Operator<T>::apply_slim(Graph<T>& g, Var<T> x, int out_width) const {
  const int win = x.shape().c;
  if (win < 1 || win > in_full_) {
    throw Error(std::string(op_name(kind_)) + ": input width " +
                std::to_string(win) + " exceeds capacity " + std::to_string(in_full_));
  }
  if (out_width < 1 || out_width > out_full_) {
    throw Error(std::string(op_name(kind_)) + ": output width " +
                std::to_string(out_width) + " exceeds capacity " +
                std::to_string(out_full_));
  }
  switch (kind_) {
    case OpKind::conv_d1:
      return leaky_relu(conv(g, x, 0, out_width, 1, 1, 1));
    case OpKind::conv_d2:
      return leaky_relu(conv(g, x, 0, out_width, 1, 2, 2));
    case OpKind::conv_d3:
      return leaky_relu(conv(g, x, 0, out_width, 1, 3, 3));
    case OpKind::conv_r:
      return add(resize_channels(x, out_width),
                 leaky_relu(conv(g, x, 0, out_width, 1, 1, 1)));
    case OpKind::skip:
      return resize_channels(x, out_width);
    case OpKind::IB: {
      if (win % 2 != 0) throw Error("IB: odd channel count " + std::to_string(win));
      const int h = win / 2;
      Var<T> x1 = narrow_channels(x, 0, h);
      Var<T> x2 = narrow_channels(x, h, h);
      Var<T> y = concat_channels<T>({x1, add(x2, coupling(g, x1))});
      return resize_channels(y, out_width);
    }
    case OpKind::HIN: {
      Var<T> t = leaky_relu(hin_pre_activation(g, x, out_width));
      Var<T> body = conv(g, t, 2, out_width, 1, 1, 1);
      Var<T> sc = slice_leading(g.param(*params_[4]), out_width, win);
      return add(body, conv2d(x, sc, std::optional<Var<T>>(), 1, 1, 0));
    }
    case OpKind::SWIN: {
      Var<T> a = swin_attention(g, x);
      const int hidden = options_.mlp_ratio * win;
      Var<T> h = leaky_relu(conv(g, a, 5, hidden, 1, 1, 0));
      return add(resize_channels(a, out_width), conv(g, h, 7, out_width, 1, 1, 0));
    }
  }
  throw Error("unreachable operator kind");
}

template <typename T>
Var<T> Operator<T>::invert_ib(Graph<T>& g, Var<T> y) const {
  if (kind_ != OpKind::IB) {
    throw Error("invert_ib called on " + std::string(op_name(kind_)));
  }
  const int c = y.shape().c;
  if (c % 2 != 0 || c > in_full_) throw Error("invert_ib: invalid width " + std::to_string(c));
  const int h = c / 2;
  Var<T> y1 = narrow_channels(y, 0, h);
  Var<T> y2 = narrow_channels(y, h, h);
  return concat_channels<T>({y1, sub(y2, coupling(g, y1))});
}

template <typename T>
Var<T> Operator<T>::hin_pre_activation(Graph<T>& g, Var<T> x, int out_width) const {
  if (kind_ != OpKind::HIN) throw Error("hin_pre_activation on non-HIN operator");
  Var<T> c = conv(g, x, 0, out_width, 1, 1, 1);
  const int half = out_width / 2;
  if (half == 0) return c;
  Var<T> normed = instance_norm(narrow_channels(c, 0, half), static_cast<T>(options_.norm_eps));
  return concat_channels<T>({normed, narrow_channels(c, half, out_width - half)});
}

template <typename T>
Var<T> Operator<T>::swin_attention(Graph<T>& g, Var<T> x) const {
  if (kind_ != OpKind::SWIN) throw Error("swin_attention on non-SWIN operator");
  const Shape s = x.shape();
  const int win = s.c;
  const int ew = std::min({options_.window, s.h, s.w});
  if (s.h % ew != 0 || s.w % ew != 0) {
    throw Error("SWIN: spatial size " + std::to_string(s.h) + "x" +
                std::to_string(s.w) + " not divisible by window " + std::to_string(ew));
  }
  const int shift = parity_ % 2 == 1 ? ew / 2 : 0;
  auto proj = [&](int idx) {
    Var<T> k = slice_leading(g.param(*params_[idx]), win, win);
    return conv2d(x, k, std::optional<Var<T>>(), 1, 1, 0);
  };
  Var<T> attn = window_attention_core(proj(0), proj(1), proj(2), ew, shift);
  Var<T> ko = slice_leading(g.param(*params_[3]), win, win);
  return add(x, conv2d(attn, ko, bias_slice(g, params_[4], win), 1, 1, 0));
}

// ---------------------------------------------------------------------------

template <typename T>
Downsample<T>::Downsample(int in_full, ParamStore<T>& store,
                          const std::string& prefix, Rng& rng)
    : in_full_(in_full) {
  kernel_ = &store.add(prefix + "/w", init_kernel<T>(2 * in_full, in_full, 3, rng));
  bias_ = &store.add(prefix + "/b", Tensor<T>(Shape{2 * in_full, 1, 1, 1}));
}

template <typename T>
Var<T> Downsample<T>::apply(Graph<T>& g, Var<T> x, int out_width) const {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw Error("downsample: odd spatial size " + s.str());
  }
  if (s.c > in_full_) throw Error("downsample: input wider than capacity");
  if (out_width < 0) out_width = 2 * s.c;
  if (out_width < 1 || out_width > 2 * in_full_) {
    throw Error("downsample: output width " + std::to_string(out_width) + " out of range");
  }
  Var<T> k = slice_leading(g.param(*kernel_), out_width, s.c);
  return conv2d(x, k, std::optional<Var<T>>(slice_leading(g.param(*bias_), out_width, 1)), 2, 1, 1);
}

template <typename T>
Upsample<T>::Upsample(int low_full, int skip_full, int out_full,
                      ParamStore<T>& store, const std::string& prefix, Rng& rng)
    : low_full_(low_full), skip_full_(skip_full), out_full_(out_full) {
  if (low_full % 4 != 0) throw Error("upsample: low-resolution width must be divisible by 4");
  const int fan = low_full / 4 + skip_full;
  const T sd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan)));
  low_ = &store.add(prefix + "/low_w", Tensor<T>::randn(Shape{out_full, low_full / 4, 1, 1}, rng, sd));
  skip_ = &store.add(prefix + "/skip_w", Tensor<T>::randn(Shape{out_full, skip_full, 1, 1}, rng, sd));
  bias_ = &store.add(prefix + "/b", Tensor<T>(Shape{out_full, 1, 1, 1}));
}

template <typename T>
Var<T> Upsample<T>::apply(Graph<T>& g, Var<T> x_low, Var<T> x_skip, int out_width) const {
  const Shape ls = x_low.shape(), ss = x_skip.shape();
  if (ls.c % 4 != 0) throw Error("upsample: low-resolution channels not divisible by 4");
  if (ls.c > low_full_ || ss.c > skip_full_) throw Error("upsample: input wider than capacity");
  if (ls.h * 2 != ss.h || ls.w * 2 != ss.w || ls.n != ss.n) {
    throw Error("upsample: spatial mismatch " + ls.str() + " vs " + ss.str());
  }
  if (out_width < 1 || out_width > out_full_) {
    throw Error("upsample: output width " + std::to_string(out_width) + " out of range");
  }
  Var<T> shuffled = pixel_shuffle(x_low, 2);
  Var<T> cat = concat_channels<T>({shuffled, x_skip});
  Var<T> k = concat_channels<T>({slice_leading(g.param(*low_), out_width, ls.c / 4),
                                 slice_leading(g.param(*skip_), out_width, ss.c)});
  return conv2d(cat, k, std::optional<Var<T>>(slice_leading(g.param(*bias_), out_width, 1)), 1, 1, 0);
}

template <typename T>
Var<T> slice_kernel(Graph<T>& g, Parameter<T>& kernel, int i_in, int i_out) {
  const Shape s = kernel.value().shape();
  return slice_leading(g.param(kernel), menu_width(s.n, i_out), menu_width(s.c, i_in));
}

// ---------------------------------------------------------------------------

template <typename T>
typename ToyModel<T>::Conv ToyModel<T>::make(ParamStore<T>& store, const std::string& name,
                                             int out, int in, int k, Rng& rng) {
  Conv c;
  c.w = &store.add(name + "/w", init_kernel<T>(out, in, k, rng));
  c.b = &store.add(name + "/b", Tensor<T>(Shape{out, 1, 1, 1}));
  return c;
}

template <typename T>
Var<T> ToyModel<T>::run(Graph<T>& g, const Conv& c, Var<T> x, int stride, int pad) {
  return conv2d(x, g.param(*c.w), std::optional<Var<T>>(g.param(*c.b)), stride, 1, pad);
}

template <typename T>
ToyModel<T>::ToyModel(int variant, int channels, ParamStore<T>& store, Rng& rng,
                      int middle_convs)
    : variant_(variant), channels_(channels) {
  if (variant < 1 || variant > 5) {
    throw Error("toy model variant must be in 1..5, got " + std::to_string(variant));
  }
  if (middle_convs < 1) throw Error("toy model needs at least one middle conv");
  const int c = channels, c2 = 2 * channels;
  if (variant == 5 && c2 % 4 != 0) throw Error("pixelshuffle variant needs channels divisible by 2");
  head_.push_back(make(store, "head0", c, 3, 3, rng));
  head_.push_back(make(store, "head1", c, c, 3, rng));
  const bool pooled = variant <= 2;
  if (!pooled) down_ = make(store, "down", c2, c, 3, rng);
  for (int i = 0; i < middle_convs; ++i) {
    const int in = (pooled && i == 0) ? c : c2;
    middle_.push_back(make(store, "mid" + std::to_string(i), c2, in, 3, rng));
  }
  switch (variant) {
    case 1:
      fuse_ = make(store, "fuse", c, c2, 1, rng);
      break;
    case 2:
    case 3:
      fuse_ = make(store, "fuse", c, c2 + c, 1, rng);
      break;
    case 4:
      up_.w = &store.add("up/w", init_kernel<T>(c2, c, 2, rng));
      up_.b = &store.add("up/b", Tensor<T>(Shape{c, 1, 1, 1}));
      fuse_ = make(store, "fuse", c, 2 * c, 1, rng);
      break;
    case 5:
      fuse_ = make(store, "fuse", c, c2 / 4 + c, 1, rng);
      break;
  }
  tail_.push_back(make(store, "tail0", c, c, 3, rng));
  tail_.push_back(make(store, "tail1", 3, c, 3, rng));
}

template <typename T>
Var<T> ToyModel<T>::forward(Graph<T>& g, Var<T> x) const {
  Var<T> h = leaky_relu(run(g, head_[0], x, 1, 1));
  Var<T> xm = leaky_relu(run(g, head_[1], h, 1, 1));
  h = variant_ <= 2 ? avg_pool2(xm) : run(g, down_, xm, 2, 1);
  for (const auto& c : middle_) h = leaky_relu(run(g, c, h, 1, 1));
  Var<T> up;
  switch (variant_) {
    case 1:
      up = upsample_bilinear2(h);
      break;
    case 2:
    case 3:
      up = concat_channels<T>({upsample_bilinear2(h), xm});
      break;
    case 4: {
      Var<T> t = conv_transpose2d(h, g.param(*up_.w), std::optional<Var<T>>(g.param(*up_.b)), 2);
      up = concat_channels<T>({t, xm});
      break;
    }
    default:
      up = concat_channels<T>({pixel_shuffle(h, 2), xm});
      break;
  }
  h = run(g, fuse_, up, 1, 0);
  h = leaky_relu(run(g, tail_[0], h, 1, 1));
  return add(x, run(g, tail_[1], h, 1, 1));
}

template <typename T>
std::vector<std::string> ToyModel<T>::modules() const {
  switch (variant_) {
    case 1:
      return {"avgpool", "bilinear"};
    case 2:
      return {"avgpool", "bilinear", "concatenation"};
    case 3:
      return {"conv-stride2", "bilinear", "concatenation"};
    case 4:
      return {"conv-stride2", "transposed-conv", "concatenation"};
    default:
      return {"conv-stride2", "pixelshuffle", "concatenation"};
  }
}

template class Operator<float>;
template class Operator<double>;
template class Downsample<float>;
template class Downsample<double>;
template class Upsample<float>;
template class Upsample<double>;
template class ToyModel<float>;
template class ToyModel<double>;
template Var<float> slice_kernel(Graph<float>&, Parameter<float>&, int, int);
template Var<double> slice_kernel(Graph<double>&, Parameter<double>&, int, int);

}  // namespace denas
