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

#include "denas/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace denas {
namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

template <typename T>
void require_same(Var<T> a, Var<T> b, const char* op) {
  require(a.graph == b.graph,
          std::string(op) + ": operands belong to different graphs");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      a.shape().str() + " vs " +
                                      b.shape().str());
}

template <typename T>
Tensor<T> scalar_tensor(T v) {
  return Tensor<T>(Shape{1, 1, 1, 1}, v);
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Geometry of a strided, dilated, zero-padded sliding window.
struct Window {
  int channels, height, width;  // image
  int k, stride, dilation, pad;
  int out_h, out_w;             // grid of window positions
};

// col is (channels*k*k) x (out_h*out_w), row-major.
template <typename T>
void im2col(const T* img, const Window& g, T* col) {
  const int ohw = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        T* row = col + ((static_cast<std::size_t>(c) * g.k + ki) * g.k + kj) * ohw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki * g.dilation;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj * g.dilation;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const Window& g, T* img) {
  const int ohw = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const T* row =
            col + ((static_cast<std::size_t>(c) * g.k + ki) * g.k + kj) * ohw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki * g.dilation;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = img + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          const T* src = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj * g.dilation;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Window& g) {
  return g.k == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return a.graph->record("add", std::move(out), {a, b}, [ia, ib](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    for (int id : {ia, ib}) {
      if (!g.requires_grad(id)) continue;
      auto& d = g.grad_ref(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int ia = a.id, ib = b.id;
  return a.graph->record("sub", std::move(out), {a, b}, [ia, ib](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    if (g.requires_grad(ia)) {
      auto& d = g.grad_ref(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i];
    }
    if (g.requires_grad(ib)) {
      auto& d = g.grad_ref(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= go[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id, ib = b.id;
  return a.graph->record("mul", std::move(out), {a, b}, [ia, ib](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    if (g.requires_grad(ia)) {
      const auto& other = g.value(ib);
      auto& d = g.grad_ref(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i] * other[i];
    }
    if (g.requires_grad(ib)) {
      const auto& other = g.value(ia);
      auto& d = g.grad_ref(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i] * other[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  const int ia = a.id;
  return a.graph->record("scale", std::move(out), {a}, [ia, s](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    auto& d = g.grad_ref(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i] * s;
  });
}

template <typename T>
Var<T> scale_by(Var<T> a, Var<T> s) {
  require(a.graph == s.graph, "scale_by: operands belong to different graphs");
  require(s.value().size() == 1, "scale_by: factor must hold one value, got " +
                                     s.shape().str());
  const T f = s.value()[0];
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= f;
  const int ia = a.id, is = s.id;
  return a.graph->record("scale_by", std::move(out), {a, s}, [ia, is](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    if (g.requires_grad(ia)) {
      const T f = g.value(is)[0];
      auto& d = g.grad_ref(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i] * f;
    }
    if (g.requires_grad(is)) g.grad_ref(is)[0] += dot(go, g.value(ia));
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T slope) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : v * slope;
  const int ia = a.id;
  return a.graph->record("leaky_relu", std::move(out), {a}, [ia, slope](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    const auto& x = g.value(ia);
    auto& d = g.grad_ref(ia);
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] += x[i] > T(0) ? go[i] : go[i] * slope;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  const int ia = a.id;
  return a.graph->record("sum", scalar_tensor(s), {a}, [ia](Graph<T>& g, int self) {
    const T go = g.out_grad(self)[0];
    auto& d = g.grad_ref(ia);
    for (auto& v : d.values()) v += go;
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  const T inv = T(1) / static_cast<T>(a.value().size());
  const int ia = a.id;
  return a.graph->record("mean", scalar_tensor(s * inv), {a}, [ia, inv](Graph<T>& g, int self) {
    const T go = g.out_grad(self)[0] * inv;
    auto& d = g.grad_ref(ia);
    for (auto& v : d.values()) v += go;
  });
}

template <typename T>
Var<T> l1_loss(Var<T> a, Var<T> b) {
  require_same(a, b, "l1_loss");
  const auto& av = a.value();
  const auto& bv = b.value();
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += std::abs(av[i] - bv[i]);
  const T inv = T(1) / static_cast<T>(av.size());
  const int ia = a.id, ib = b.id;
  return a.graph->record("l1_loss", scalar_tensor(s * inv), {a, b}, [ia, ib, inv](Graph<T>& g, int self) {
    const T go = g.out_grad(self)[0] * inv;
    const auto& x = g.value(ia);
    const auto& y = g.value(ib);
    auto sgn = [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); };
    if (g.requires_grad(ia)) {
      auto& d = g.grad_ref(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += go * sgn(x[i] - y[i]);
    }
    if (g.requires_grad(ib)) {
      auto& d = g.grad_ref(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= go * sgn(x[i] - y[i]);
    }
  });
}

template <typename T>
Var<T> mse_loss(Var<T> a, Var<T> b) {
  require_same(a, b, "mse_loss");
  const auto& av = a.value();
  const auto& bv = b.value();
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    s += d * d;
  }
  const T inv = T(1) / static_cast<T>(av.size());
  const int ia = a.id, ib = b.id;
  return a.graph->record("mse_loss", scalar_tensor(s * inv), {a, b}, [ia, ib, inv](Graph<T>& g, int self) {
    const T go = g.out_grad(self)[0] * inv * T(2);
    const auto& x = g.value(ia);
    const auto& y = g.value(ib);
    if (g.requires_grad(ia)) {
      auto& d = g.grad_ref(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += go * (x[i] - y[i]);
    }
    if (g.requires_grad(ib)) {
      auto& d = g.grad_ref(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= go * (x[i] - y[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Channels

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), "concat_channels: no inputs");
  const Shape s0 = xs[0].shape();
  int channels = 0;
  for (const auto& x : xs) {
    const Shape s = x.shape();
    require(x.graph == xs[0].graph, "concat_channels: mixed graphs");
    require(s.n == s0.n && s.h == s0.h && s.w == s0.w,
            "concat_channels: extent mismatch " + s.str() + " vs " + s0.str());
    channels += s.c;
  }
  Tensor<T> out(Shape{s0.n, channels, s0.h, s0.w});
  const std::size_t plane = s0.plane();
  std::vector<int> ids, offsets;
  int off = 0;
  for (const auto& x : xs) {
    const auto& v = x.value();
    for (int n = 0; n < s0.n; ++n) {
      std::copy_n(v.data() + static_cast<std::size_t>(n) * v.shape().c * plane,
                  v.shape().c * plane, out.data() + out.offset(n, off, 0, 0));
    }
    ids.push_back(x.id);
    offsets.push_back(off);
    off += v.shape().c;
  }
  return xs[0].graph->record("concat_channels", std::move(out), xs,
      [ids, offsets, plane](Graph<T>& g, int self) {
        const auto& go = g.out_grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!g.requires_grad(ids[k])) continue;
          auto& d = g.grad_ref(ids[k]);
          const int c = d.shape().c;
          for (int n = 0; n < d.shape().n; ++n) {
            const T* src = go.data() + go.offset(n, offsets[k], 0, 0);
            T* dst = d.data() + static_cast<std::size_t>(n) * c * plane;
            for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename T>
Var<T> narrow_channels(Var<T> x, int start, int count) {
  const Shape s = x.shape();
  require(start >= 0 && count >= 1 && start + count <= s.c,
          "narrow_channels: range [" + std::to_string(start) + ", " +
              std::to_string(start + count) + ") outside " + std::to_string(s.c) +
              " channels");
  if (start == 0 && count == s.c) return x;
  const std::size_t plane = s.plane();
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  const auto& v = x.value();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(v.data() + v.offset(n, start, 0, 0), count * plane,
                out.data() + out.offset(n, 0, 0, 0));
  }
  const int ix = x.id;
  return x.graph->record("narrow_channels", std::move(out), {x}, [ix, start, count, plane](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    auto& d = g.grad_ref(ix);
    for (int n = 0; n < d.shape().n; ++n) {
      const T* src = go.data() + go.offset(n, 0, 0, 0);
      T* dst = d.data() + d.offset(n, start, 0, 0);
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> resize_channels(Var<T> x, int channels) {
  const Shape s = x.shape();
  require(channels >= 1, "resize_channels: target must be >= 1");
  if (channels == s.c) return x;
  if (channels < s.c) return narrow_channels(x, 0, channels);
  const std::size_t plane = s.plane();
  Tensor<T> out(Shape{s.n, channels, s.h, s.w});
  const auto& v = x.value();
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(v.data() + v.offset(n, 0, 0, 0), s.c * plane,
                out.data() + out.offset(n, 0, 0, 0));
  }
  const int ix = x.id;
  return x.graph->record("pad_channels", std::move(out), {x}, [ix, plane](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    auto& d = g.grad_ref(ix);
    const int c = d.shape().c;
    for (int n = 0; n < d.shape().n; ++n) {
      const T* src = go.data() + go.offset(n, 0, 0, 0);
      T* dst = d.data() + d.offset(n, 0, 0, 0);
      for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> slice_leading(Var<T> w, int d0, int d1) {
  const Shape s = w.shape();
  require(d0 >= 1 && d0 <= s.n && d1 >= 1 && d1 <= s.c,
          "slice_leading: [" + std::to_string(d0) + ", " + std::to_string(d1) +
              "] outside " + s.str());
  if (d0 == s.n && d1 == s.c) return w;
  const std::size_t plane = s.plane();
  Tensor<T> out(Shape{d0, d1, s.h, s.w});
  const auto& v = w.value();
  for (int a = 0; a < d0; ++a) {
    std::copy_n(v.data() + v.offset(a, 0, 0, 0), d1 * plane,
                out.data() + out.offset(a, 0, 0, 0));
  }
  const int iw = w.id;
  return w.graph->record("slice_leading", std::move(out), {w}, [iw, d0, d1, plane](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    auto& d = g.grad_ref(iw);
    for (int a = 0; a < d0; ++a) {
      const T* src = go.data() + go.offset(a, 0, 0, 0);
      T* dst = d.data() + d.offset(a, 0, 0, 0);
      for (std::size_t i = 0; i < d1 * plane; ++i) dst[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::optional<Var<T>> bias, int stride,
              int dilation, int padding) {
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  require(stride >= 1, "conv2d: stride must be positive");
  require(dilation >= 1, "conv2d: dilation must be positive");
  require(padding >= 0, "conv2d: negative padding");
  require(ks.h == ks.w, "conv2d: kernel must be square");
  require(xs.c == ks.c, "conv2d: input has " + std::to_string(xs.c) +
                            " channels, kernel expects " + std::to_string(ks.c));
  const int k = ks.h;
  const int oh = (xs.h + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  const int ow = (xs.w + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  require(oh >= 1 && ow >= 1, "conv2d: empty output for input " + xs.str());
  if (bias) {
    require(bias->shape() == (Shape{ks.n, 1, 1, 1}),
            "conv2d: bias shape " + bias->shape().str());
  }
  const Window geo{xs.c, xs.h, xs.w, k, stride, dilation, padding, oh, ow};
  const int cout = ks.n;
  const int rows = xs.c * k * k;
  const int ohw = oh * ow;

  Tensor<T> out(Shape{xs.n, cout, oh, ow});
  CMapRM<T> wmat(kernel.value().data(), cout, rows);
  std::vector<T> col(is_pointwise(geo) ? 0 : static_cast<std::size_t>(rows) * ohw);
  for (int n = 0; n < xs.n; ++n) {
    const T* img = x.value().data() + x.value().offset(n, 0, 0, 0);
    const T* colp = img;
    if (!is_pointwise(geo)) {
      im2col(img, geo, col.data());
      colp = col.data();
    }
    MapRM<T> o(out.data() + out.offset(n, 0, 0, 0), cout, ohw);
    o.noalias() = wmat * CMapRM<T>(colp, rows, ohw);
    if (bias) {
      const auto& b = bias->value();
      for (int c = 0; c < cout; ++c) o.row(c).array() += b[c];
    }
  }

  std::vector<Var<T>> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  const int ix = x.id, ik = kernel.id, ib = bias ? bias->id : -1;
  return x.graph->record("conv2d", std::move(out), inputs,
      [ix, ik, ib, geo, cout, rows, ohw](Graph<T>& g, int self) {
        const auto& go = g.out_grad(self);
        const auto& xv = g.value(ix);
        const auto& kv = g.value(ik);
        const bool need_x = g.requires_grad(ix);
        const bool need_k = g.requires_grad(ik);
        const bool need_b = ib >= 0 && g.requires_grad(ib);
        CMapRM<T> wmat(kv.data(), cout, rows);
        std::vector<T> col(static_cast<std::size_t>(rows) * ohw);
        for (int n = 0; n < xv.shape().n; ++n) {
          CMapRM<T> gn(go.data() + go.offset(n, 0, 0, 0), cout, ohw);
          if (need_k) {
            const T* img = xv.data() + xv.offset(n, 0, 0, 0);
            const T* colp = img;
            if (!is_pointwise(geo)) {
              im2col(img, geo, col.data());
              colp = col.data();
            }
            MapRM<T> dw(g.grad_ref(ik).data(), cout, rows);
            dw.noalias() += gn * CMapRM<T>(colp, rows, ohw).transpose();
          }
          if (need_x) {
            T* dimg = g.grad_ref(ix).data() + xv.offset(n, 0, 0, 0);
            if (is_pointwise(geo)) {
              MapRM<T> dx(dimg, rows, ohw);
              dx.noalias() += wmat.transpose() * gn;
            } else {
              MapRM<T> dcol(col.data(), rows, ohw);
              dcol.noalias() = wmat.transpose() * gn;
              col2im_add(col.data(), geo, dimg);
            }
          }
          if (need_b) {
            auto& db = g.grad_ref(ib);
            for (int c = 0; c < cout; ++c) db[c] += gn.row(c).sum();
          }
        }
      });
}

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> kernel, std::optional<Var<T>> bias,
                        int stride) {
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  require(stride >= 1, "conv_transpose2d: stride must be positive");
  require(ks.h == ks.w, "conv_transpose2d: kernel must be square");
  require(xs.c == ks.n, "conv_transpose2d: input has " + std::to_string(xs.c) +
                            " channels, kernel expects " + std::to_string(ks.n));
  const int k = ks.h;
  const int cout = ks.c;
  const int oh = (xs.h - 1) * stride + k;
  const int ow = (xs.w - 1) * stride + k;
  if (bias) {
    require(bias->shape() == (Shape{cout, 1, 1, 1}),
            "conv_transpose2d: bias shape " + bias->shape().str());
  }
  // The adjoint of a convolution over the output image.
  const Window geo{cout, oh, ow, k, stride, 1, 0, xs.h, xs.w};
  const int rows = cout * k * k;
  const int hw = xs.h * xs.w;

  Tensor<T> out(Shape{xs.n, cout, oh, ow});
  CMapRM<T> wmat(kernel.value().data(), xs.c, rows);
  std::vector<T> col(static_cast<std::size_t>(rows) * hw);
  for (int n = 0; n < xs.n; ++n) {
    CMapRM<T> xn(x.value().data() + x.value().offset(n, 0, 0, 0), xs.c, hw);
    MapRM<T>(col.data(), rows, hw).noalias() = wmat.transpose() * xn;
    col2im_add(col.data(), geo, out.data() + out.offset(n, 0, 0, 0));
    if (bias) {
      const auto& b = bias->value();
      for (int c = 0; c < cout; ++c) {
        T* p = out.data() + out.offset(n, c, 0, 0);
        for (int i = 0; i < oh * ow; ++i) p[i] += b[c];
      }
    }
  }

  std::vector<Var<T>> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  const int ix = x.id, ik = kernel.id, ib = bias ? bias->id : -1;
  const int cin = xs.c;
  return x.graph->record("conv_transpose2d", std::move(out), inputs,
      [ix, ik, ib, geo, cin, cout, rows, hw](Graph<T>& g, int self) {
        const auto& go = g.out_grad(self);
        const auto& xv = g.value(ix);
        const auto& kv = g.value(ik);
        CMapRM<T> wmat(kv.data(), cin, rows);
        std::vector<T> col(static_cast<std::size_t>(rows) * hw);
        const int ohw = geo.height * geo.width;
        for (int n = 0; n < xv.shape().n; ++n) {
          im2col(go.data() + go.offset(n, 0, 0, 0), geo, col.data());
          CMapRM<T> gcol(col.data(), rows, hw);
          if (g.requires_grad(ix)) {
            MapRM<T> dx(g.grad_ref(ix).data() + xv.offset(n, 0, 0, 0), cin, hw);
            dx.noalias() += wmat * gcol;
          }
          if (g.requires_grad(ik)) {
            CMapRM<T> xn(xv.data() + xv.offset(n, 0, 0, 0), cin, hw);
            MapRM<T> dw(g.grad_ref(ik).data(), cin, rows);
            dw.noalias() += xn * gcol.transpose();
          }
          if (ib >= 0 && g.requires_grad(ib)) {
            auto& db = g.grad_ref(ib);
            for (int c = 0; c < cout; ++c) {
              const T* p = go.data() + go.offset(n, c, 0, 0);
              T s = 0;
              for (int i = 0; i < ohw; ++i) s += p[i];
              db[c] += s;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Spatial rearrangement and resampling

namespace {

// Index map of pixel_shuffle: out element -> in element.
std::vector<std::size_t> shuffle_map(const Shape& in, int r) {
  const Shape o{in.n, in.c / (r * r), in.h * r, in.w * r};
  std::vector<std::size_t> map(o.numel());
  std::size_t idx = 0;
  for (int n = 0; n < o.n; ++n)
    for (int c = 0; c < o.c; ++c)
      for (int y = 0; y < o.h; ++y)
        for (int x = 0; x < o.w; ++x) {
          const int ci = c * r * r + (y % r) * r + (x % r);
          map[idx++] = ((static_cast<std::size_t>(n) * in.c + ci) * in.h + y / r) * in.w + x / r;
        }
  return map;
}

template <typename T>
Var<T> permute(Var<T> x, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> gather_from,
               const char* name) {
  Tensor<T> out(out_shape);
  const auto& v = x.value();
  const auto& map = *gather_from;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = v[map[i]];
  const int ix = x.id;
  return x.graph->record(name, std::move(out), {x}, [ix, gather_from](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    auto& d = g.grad_ref(ix);
    const auto& map = *gather_from;
    for (std::size_t i = 0; i < map.size(); ++i) d[map[i]] += go[i];
  });
}

}  // namespace

template <typename T>
Var<T> pixel_shuffle(Var<T> x, int r) {
  const Shape s = x.shape();
  require(r >= 1, "pixel_shuffle: factor must be positive");
  require(s.c % (r * r) == 0, "pixel_shuffle: " + std::to_string(s.c) +
                                  " channels not divisible by " +
                                  std::to_string(r * r));
  if (r == 1) return x;
  auto map = std::make_shared<const std::vector<std::size_t>>(shuffle_map(s, r));
  return permute(x, Shape{s.n, s.c / (r * r), s.h * r, s.w * r}, map, "pixel_shuffle");
}

template <typename T>
Var<T> pixel_unshuffle(Var<T> x, int r) {
  const Shape s = x.shape();
  require(r >= 1, "pixel_unshuffle: factor must be positive");
  require(s.h % r == 0 && s.w % r == 0,
          "pixel_unshuffle: extent " + s.str() + " not divisible by factor");
  if (r == 1) return x;
  const Shape in{s.n, s.c * r * r, s.h / r, s.w / r};
  // Inverse permutation of the shuffle map.
  const auto fwd = shuffle_map(in, r);
  std::vector<std::size_t> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
  return permute(x, in, std::make_shared<const std::vector<std::size_t>>(std::move(inv)),
                 "pixel_unshuffle");
}

template <typename T>
Var<T> avg_pool2(Var<T> x) {
  const Shape s = x.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0, "avg_pool2: odd extent " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> out(os);
  const auto& v = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx) {
          out.at(n, c, y, xx) = T(0.25) * (v.at(n, c, 2 * y, 2 * xx) + v.at(n, c, 2 * y, 2 * xx + 1) +
                                           v.at(n, c, 2 * y + 1, 2 * xx) + v.at(n, c, 2 * y + 1, 2 * xx + 1));
        }
  const int ix = x.id;
  return x.graph->record("avg_pool2", std::move(out), {x}, [ix](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    auto& d = g.grad_ref(ix);
    const Shape os = go.shape();
    for (int n = 0; n < os.n; ++n)
      for (int c = 0; c < os.c; ++c)
        for (int y = 0; y < os.h; ++y)
          for (int xx = 0; xx < os.w; ++xx) {
            const T v = T(0.25) * go.at(n, c, y, xx);
            d.at(n, c, 2 * y, 2 * xx) += v;
            d.at(n, c, 2 * y, 2 * xx + 1) += v;
            d.at(n, c, 2 * y + 1, 2 * xx) += v;
            d.at(n, c, 2 * y + 1, 2 * xx + 1) += v;
          }
  });
}

namespace {

struct Tap {
  int i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * static_cast<double>(in) / out - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = Tap{i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> upsample_bilinear2(Var<T> x) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h * 2, s.w * 2};
  const auto ty = bilinear_taps(s.h, os.h);
  const auto tx = bilinear_taps(s.w, os.w);
  Tensor<T> out(os);
  const auto& v = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < os.h; ++y) {
        const T fy = static_cast<T>(ty[y].frac);
        for (int xx = 0; xx < os.w; ++xx) {
          const T fx = static_cast<T>(tx[xx].frac);
          const T a = v.at(n, c, ty[y].i0, tx[xx].i0), b = v.at(n, c, ty[y].i0, tx[xx].i1);
          const T cc = v.at(n, c, ty[y].i1, tx[xx].i0), d = v.at(n, c, ty[y].i1, tx[xx].i1);
          out.at(n, c, y, xx) = (T(1) - fy) * ((T(1) - fx) * a + fx * b) + fy * ((T(1) - fx) * cc + fx * d);
        }
      }
  const int ix = x.id;
  return x.graph->record("upsample_bilinear2", std::move(out), {x}, [ix, ty, tx](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    auto& d = g.grad_ref(ix);
    const Shape os = go.shape();
    for (int n = 0; n < os.n; ++n)
      for (int c = 0; c < os.c; ++c)
        for (int y = 0; y < os.h; ++y) {
          const T fy = static_cast<T>(ty[y].frac);
          for (int xx = 0; xx < os.w; ++xx) {
            const T fx = static_cast<T>(tx[xx].frac);
            const T gv = go.at(n, c, y, xx);
            d.at(n, c, ty[y].i0, tx[xx].i0) += gv * (T(1) - fy) * (T(1) - fx);
            d.at(n, c, ty[y].i0, tx[xx].i1) += gv * (T(1) - fy) * fx;
            d.at(n, c, ty[y].i1, tx[xx].i0) += gv * fy * (T(1) - fx);
            d.at(n, c, ty[y].i1, tx[xx].i1) += gv * fy * fx;
          }
        }
  });
}

template <typename T>
Var<T> instance_norm(Var<T> x, T eps) {
  const Shape s = x.shape();
  require(s.plane() >= 2, "instance_norm: degenerate spatial extent " + s.str());
  require(eps >= T(0), "instance_norm: negative eps");
  const std::size_t plane = s.plane();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  Tensor<T> out(s);
  auto inv_std = std::make_shared<std::vector<T>>(planes);
  const auto& v = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = v.data() + p * plane;
    T mu = 0;
    for (std::size_t i = 0; i < plane; ++i) mu += src[i];
    mu /= static_cast<T>(plane);
    // One correction pass makes constant planes normalize to exact zeros.
    T resid = 0;
    for (std::size_t i = 0; i < plane; ++i) resid += src[i] - mu;
    mu += resid / static_cast<T>(plane);
    T var = 0;
    for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(plane);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[p] = is;
    T* dst = out.data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * is;
  }
  const int ix = x.id;
  return x.graph->record("instance_norm", std::move(out), {x}, [ix, inv_std, plane, planes](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    const auto& y = g.value(self);
    auto& d = g.grad_ref(ix);
    for (std::size_t p = 0; p < planes; ++p) {
      const T* gp = go.data() + p * plane;
      const T* yp = y.data() + p * plane;
      T mg = 0, mgy = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        mg += gp[i];
        mgy += gp[i] * yp[i];
      }
      mg /= static_cast<T>(plane);
      mgy /= static_cast<T>(plane);
      T* dp = d.data() + p * plane;
      const T is = (*inv_std)[p];
      for (std::size_t i = 0; i < plane; ++i) dp[i] += is * (gp[i] - mg - yp[i] * mgy);
    }
  });
}

template <typename T>
Var<T> window_attention_core(Var<T> q, Var<T> k, Var<T> v, int window, int shift) {
  require_same(q, k, "window_attention");
  require_same(q, v, "window_attention");
  const Shape s = q.shape();
  require(window >= 1 && s.h % window == 0 && s.w % window == 0,
          "window_attention: extent " + s.str() + " not divisible by window " +
              std::to_string(window));
  require(shift >= 0 && shift < window, "window_attention: shift outside [0, window)");
  const int tokens = window * window;
  const int wy = s.h / window, wx = s.w / window;
  const int windows = s.n * wy * wx;
  const int ch = s.c;
  const T scale = T(1) / std::sqrt(static_cast<T>(ch));
  const std::size_t plane = s.plane();

  // pos[w * tokens + t] = (n, spatial index) of token t in window w.
  auto pos = std::make_shared<std::vector<std::pair<int, int>>>(static_cast<std::size_t>(windows) * tokens);
  for (int n = 0, w = 0; n < s.n; ++n)
    for (int by = 0; by < wy; ++by)
      for (int bx = 0; bx < wx; ++bx, ++w)
        for (int i = 0; i < window; ++i)
          for (int j = 0; j < window; ++j) {
            const int y = (by * window + i + shift) % s.h;
            const int x = (bx * window + j + shift) % s.w;
            (*pos)[static_cast<std::size_t>(w) * tokens + i * window + j] = {n, y * s.w + x};
          }

  auto gather = [&](const Tensor<T>& src, int w, MatRM<T>& m) {
    m.resize(tokens, ch);
    for (int t = 0; t < tokens; ++t) {
      const auto [n, p] = (*pos)[static_cast<std::size_t>(w) * tokens + t];
      const T* base = src.data() + static_cast<std::size_t>(n) * ch * plane + p;
      for (int c = 0; c < ch; ++c) m(t, c) = base[c * plane];
    }
  };

  Tensor<T> out(s);
  auto attn = std::make_shared<std::vector<MatRM<T>>>(windows);
  MatRM<T> qm, km, vm;
  for (int w = 0; w < windows; ++w) {
    gather(q.value(), w, qm);
    gather(k.value(), w, km);
    gather(v.value(), w, vm);
    MatRM<T> a = (qm * km.transpose()) * scale;
    for (int t = 0; t < tokens; ++t) {
      const T mx = a.row(t).maxCoeff();
      a.row(t) = (a.row(t).array() - mx).exp();
      a.row(t) /= a.row(t).sum();
    }
    const MatRM<T> o = a * vm;
    for (int t = 0; t < tokens; ++t) {
      const auto [n, p] = (*pos)[static_cast<std::size_t>(w) * tokens + t];
      T* base = out.data() + static_cast<std::size_t>(n) * ch * plane + p;
      for (int c = 0; c < ch; ++c) base[c * plane] = o(t, c);
    }
    (*attn)[w] = std::move(a);
  }

  const int iq = q.id, ik = k.id, iv = v.id;
  return q.graph->record("window_attention", std::move(out), {q, k, v},
      [iq, ik, iv, pos, attn, tokens, windows, ch, plane, scale](Graph<T>& g, int self) {
        const auto& go = g.out_grad(self);
        auto gather = [&](const Tensor<T>& src, int w, MatRM<T>& m) {
          m.resize(tokens, ch);
          for (int t = 0; t < tokens; ++t) {
            const auto [n, p] = (*pos)[static_cast<std::size_t>(w) * tokens + t];
            const T* base = src.data() + static_cast<std::size_t>(n) * ch * plane + p;
            for (int c = 0; c < ch; ++c) m(t, c) = base[c * plane];
          }
        };
        auto scatter_add = [&](int id, int w, const MatRM<T>& m) {
          auto& d = g.grad_ref(id);
          for (int t = 0; t < tokens; ++t) {
            const auto [n, p] = (*pos)[static_cast<std::size_t>(w) * tokens + t];
            T* base = d.data() + static_cast<std::size_t>(n) * ch * plane + p;
            for (int c = 0; c < ch; ++c) base[c * plane] += m(t, c);
          }
        };
        MatRM<T> qm, km, vm, dout;
        for (int w = 0; w < windows; ++w) {
          const MatRM<T>& a = (*attn)[w];
          gather(go, w, dout);
          gather(g.value(iv), w, vm);
          if (g.requires_grad(iv)) scatter_add(iv, w, a.transpose() * dout);
          if (!g.requires_grad(iq) && !g.requires_grad(ik)) continue;
          const MatRM<T> da = dout * vm.transpose();
          MatRM<T> ds = a.cwiseProduct(da);
          for (int t = 0; t < tokens; ++t) {
            const T r = ds.row(t).sum();
            ds.row(t) -= r * a.row(t);
          }
          ds *= scale;
          if (g.requires_grad(iq)) {
            gather(g.value(ik), w, km);
            scatter_add(iq, w, ds * km);
          }
          if (g.requires_grad(ik)) {
            gather(g.value(iq), w, qm);
            scatter_add(ik, w, ds.transpose() * qm);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Vectors

template <typename T>
Var<T> softmax(Var<T> logits) {
  const auto& v = logits.value();
  Tensor<T> out(v.shape());
  T mx = v[0];
  for (T x : v.values()) mx = std::max(mx, x);
  T s = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    s += out[i];
  }
  for (auto& x : out.values()) x /= s;
  const int il = logits.id;
  return logits.graph->record("softmax", std::move(out), {logits}, [il](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    const auto& y = g.value(self);
    const T gy = dot(go, y);
    auto& d = g.grad_ref(il);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += y[i] * (go[i] - gy);
  });
}

template <typename T>
Var<T> gather(Var<T> v, std::span<const int> idx) {
  require(!idx.empty(), "gather: empty index list");
  const auto& src = v.value();
  Tensor<T> out(Shape{1, static_cast<int>(idx.size()), 1, 1});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && static_cast<std::size_t>(idx[i]) < src.size(),
            "gather: index " + std::to_string(idx[i]) + " out of range");
    out[i] = src[idx[i]];
  }
  const int iv = v.id;
  std::vector<int> copy(idx.begin(), idx.end());
  return v.graph->record("gather", std::move(out), {v}, [iv, copy](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    auto& d = g.grad_ref(iv);
    for (std::size_t i = 0; i < copy.size(); ++i) d[copy[i]] += go[i];
  });
}

template <typename T>
Var<T> pick(Var<T> v, int i) {
  const int idx[1] = {i};
  return gather(v, std::span<const int>(idx, 1));
}

// ---------------------------------------------------------------------------
// Estimators

template <typename T>
Var<T> score_gate(Var<T> out, Var<T> logits, int sampled) {
  require(out.graph == logits.graph, "score_gate: mixed graphs");
  require(sampled >= 0 && static_cast<std::size_t>(sampled) < logits.value().size(),
          "score_gate: sampled index out of range");
  const int io = out.id, il = logits.id;
  return out.graph->record("score_gate", out.value(), {out, logits}, [io, il, sampled](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    if (g.requires_grad(io)) {
      auto& d = g.grad_ref(io);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i];
    }
    if (g.requires_grad(il)) {
      const auto& a = g.value(il);
      T mx = a[0];
      for (T x : a.values()) mx = std::max(mx, x);
      std::vector<T> sm(a.size());
      T s = 0;
      for (std::size_t j = 0; j < a.size(); ++j) s += (sm[j] = std::exp(a[j] - mx));
      const T score = dot(go, g.value(io));
      auto& d = g.grad_ref(il);
      for (std::size_t j = 0; j < a.size(); ++j) {
        d[j] += score * ((static_cast<int>(j) == sampled ? T(1) : T(0)) - sm[j] / s);
      }
    }
  });
}

template <typename T>
Var<T> straight_through(const std::vector<Var<T>>& outs, Var<T> relaxed, int sampled) {
  require(!outs.empty() && outs.size() == relaxed.value().size(),
          "straight_through: " + std::to_string(outs.size()) + " outputs for " +
              std::to_string(relaxed.value().size()) + " weights");
  require(sampled >= 0 && static_cast<std::size_t>(sampled) < outs.size(),
          "straight_through: sampled index out of range");
  for (const auto& o : outs) require_same(o, outs[0], "straight_through");
  std::vector<Var<T>> inputs = outs;
  inputs.push_back(relaxed);
  std::vector<int> ids;
  for (const auto& o : outs) ids.push_back(o.id);
  const int ir = relaxed.id;
  return relaxed.graph->record("straight_through", outs[sampled].value(), inputs,
      [ids, ir, sampled](Graph<T>& g, int self) {
        const auto& go = g.out_grad(self);
        const int is = ids[sampled];
        if (g.requires_grad(is)) {
          auto& d = g.grad_ref(is);
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i];
        }
        if (g.requires_grad(ir)) {
          auto& d = g.grad_ref(ir);
          for (std::size_t j = 0; j < ids.size(); ++j) d[j] += dot(go, g.value(ids[j]));
        }
      });
}

template <typename T>
Var<T> width_gate(Var<T> out, Var<T> relaxed, std::span<const int> widths, int sampled) {
  require(out.graph == relaxed.graph, "width_gate: mixed graphs");
  require(widths.size() == relaxed.value().size(), "width_gate: menu/weight length mismatch");
  require(sampled >= 0 && static_cast<std::size_t>(sampled) < widths.size(),
          "width_gate: sampled index out of range");
  require(out.shape().c == widths[sampled], "width_gate: output has " +
                                                std::to_string(out.shape().c) +
                                                " channels, expected " +
                                                std::to_string(widths[sampled]));
  const int io = out.id, ir = relaxed.id;
  std::vector<int> ws(widths.begin(), widths.end());
  return out.graph->record("width_gate", out.value(), {out, relaxed}, [io, ir, ws](Graph<T>& g, int self) {
    const auto& go = g.out_grad(self);
    if (g.requires_grad(io)) {
      auto& d = g.grad_ref(io);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i];
    }
    if (g.requires_grad(ir)) {
      const auto& y = g.value(io);
      const Shape s = y.shape();
      const std::size_t plane = s.plane();
      // Per-channel <g, y>, then prefix sums give every truncation at once.
      std::vector<T> per_channel(s.c, T(0));
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const T* gp = go.data() + go.offset(n, c, 0, 0);
          const T* yp = y.data() + y.offset(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) per_channel[c] += gp[i] * yp[i];
        }
      auto& d = g.grad_ref(ir);
      for (std::size_t j = 0; j < ws.size(); ++j) {
        const int keep = std::min(ws[j], s.c);
        T acc = 0;
        for (int c = 0; c < keep; ++c) acc += per_channel[c];
        d[j] += acc;
      }
    }
  });
}

#define DENAS_INSTANTIATE_OPS(T)                                                   \
  template Var<T> add(Var<T>, Var<T>);                                             \
  template Var<T> sub(Var<T>, Var<T>);                                             \
  template Var<T> mul(Var<T>, Var<T>);                                             \
  template Var<T> scale(Var<T>, T);                                                \
  template Var<T> scale_by(Var<T>, Var<T>);                                        \
  template Var<T> leaky_relu(Var<T>, T);                                           \
  template Var<T> sum(Var<T>);                                                     \
  template Var<T> mean(Var<T>);                                                    \
  template Var<T> l1_loss(Var<T>, Var<T>);                                         \
  template Var<T> mse_loss(Var<T>, Var<T>);                                        \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                     \
  template Var<T> narrow_channels(Var<T>, int, int);                               \
  template Var<T> resize_channels(Var<T>, int);                                    \
  template Var<T> slice_leading(Var<T>, int, int);                                 \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, int, int, int);    \
  template Var<T> conv_transpose2d(Var<T>, Var<T>, std::optional<Var<T>>, int);    \
  template Var<T> pixel_shuffle(Var<T>, int);                                      \
  template Var<T> pixel_unshuffle(Var<T>, int);                                    \
  template Var<T> avg_pool2(Var<T>);                                               \
  template Var<T> upsample_bilinear2(Var<T>);                                      \
  template Var<T> instance_norm(Var<T>, T);                                        \
  template Var<T> window_attention_core(Var<T>, Var<T>, Var<T>, int, int);         \
  template Var<T> softmax(Var<T>);                                                 \
  template Var<T> gather(Var<T>, std::span<const int>);                            \
  template Var<T> pick(Var<T>, int);                                               \
  template Var<T> score_gate(Var<T>, Var<T>, int);                                 \
  template Var<T> straight_through(const std::vector<Var<T>>&, Var<T>, int);       \
  template Var<T> width_gate(Var<T>, Var<T>, std::span<const int>, int);

DENAS_INSTANTIATE_OPS(float)
DENAS_INSTANTIATE_OPS(double)

}  // namespace denas
