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

#include "denas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "denas/rng.hpp"

namespace denas {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

void check_shape(const Shape& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw Error("invalid tensor shape " + s.str());
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape) {
  check_shape(shape);
  data_.assign(shape.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& values)
    : Tensor(shape, Buffer<T>(values.begin(), values.end())) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values)
    : shape_(shape), data_(std::move(values)) {
  check_shape(shape);
  if (data_.size() != shape.numel()) {
    throw Error("tensor of shape " + shape.str() + " given " +
                std::to_string(data_.size()) + " values");
  }
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, T stddev) {
  Tensor t(shape);
  for (auto& v : t.data_) v = static_cast<T>(rng.normal()) * stddev;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, Rng& rng, T lo, T hi) {
  Tensor t(shape);
  for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) {
    throw Error("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) {
    throw Error("max_abs_diff: shape mismatch " + a.shape().str() + " vs " +
                b.shape().str());
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace denas
