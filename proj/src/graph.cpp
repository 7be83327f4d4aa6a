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

#include "denas/graph.hpp"

#include <string>

namespace denas {

template <typename T>
Parameter<T>::Parameter(std::string name, Tensor<T> value)
    : name_(std::move(name)), value_(std::move(value)) {
  grad_ = Tensor<T>(value_.shape());
}

template <typename T>
void Parameter<T>::zero_grad() {
  grad_.fill(T(0));
  has_grad_ = false;
}

template <typename T>
void Parameter<T>::accumulate_grad(const Tensor<T>& g) {
  if (!(g.shape() == value_.shape())) {
    throw Error("gradient shape " + g.shape().str() + " does not match " +
                name_ + " " + value_.shape().str());
  }
  if (grad_.shape() != value_.shape()) grad_ = Tensor<T>(value_.shape());
  for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
  has_grad_ = true;
}

template <typename T>
Var<T> Graph<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value, bool requires_grad) {
  if (!value.all_finite()) throw NonFiniteError("non-finite graph input");
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  if (!p.value().all_finite()) {
    throw NonFiniteError("non-finite parameter " + p.name());
  }
  Node n;
  n.op = "param";
  n.value = p.value();
  n.requires_grad = p.trainable();
  n.param = p.trainable() ? &p : nullptr;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::record(const char* op, Tensor<T> value,
                        std::initializer_list<Var<T>> inputs,
                        Backward backward) {
  return record(op, std::move(value), std::vector<Var<T>>(inputs),
                std::move(backward));
}

template <typename T>
Var<T> Graph<T>::record(const char* op, Tensor<T> value,
                        const std::vector<Var<T>>& inputs, Backward backward) {
  if (consumed_) {
    throw Error(std::string("recording '") + op + "' on a consumed graph");
  }
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("non-finite output from '") + op + "'");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (const auto& v : inputs) {
    if (v.graph != this) {
      throw Error(std::string("'") + op + "' mixes values of distinct graphs");
    }
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
Tensor<T>& Graph<T>::grad_ref(int id) {
  Node& n = nodes_.at(id);
  if (!n.grad_ready) {
    n.grad = Tensor<T>(n.value.shape());
    n.grad_ready = true;
  }
  return n.grad;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad_ready) return n.grad;
  return Tensor<T>(n.value.shape());
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw Error("backward: loss belongs to another graph");
  if (consumed_) throw Error("backward: graph already consumed");
  if (value(loss.id).size() != 1) {
    throw Error("backward: loss must be scalar, got " +
                value(loss.id).shape().str());
  }
  consumed_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_ref(loss.id)[0] = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.grad_ready || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) n.param->accumulate_grad(n.grad);
  }
}

template <typename T>
void Graph<T>::reset() {
  nodes_.clear();
  consumed_ = false;
}

template class Parameter<float>;
template class Parameter<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace denas
