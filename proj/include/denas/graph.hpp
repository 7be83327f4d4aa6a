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

#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "denas/tensor.hpp"

namespace denas {

template <typename T>
class Graph;

/// A named, persistent tensor updated by an optimizer. Gradients from every
/// graph that reads the parameter accumulate into grad().
template <typename T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor<T> value);

  const std::string& name() const { return name_; }
  Tensor<T>& value() { return value_; }
  const Tensor<T>& value() const { return value_; }
  const Tensor<T>& grad() const { return grad_; }
  Tensor<T>& grad() { return grad_; }

  /// True once any backward pass delivered a gradient since zero_grad().
  bool has_grad() const { return has_grad_; }
  void zero_grad();
  void accumulate_grad(const Tensor<T>& g);

  /// Frozen parameters enter graphs as constants.
  bool trainable() const { return trainable_; }
  void set_trainable(bool on) { trainable_ = on; }

 private:
  std::string name_;
  Tensor<T> value_;
  Tensor<T> grad_;
  bool has_grad_ = false;
  bool trainable_ = true;
};

/// Handle to one value recorded on a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return graph->value(id).shape(); }
  bool requires_grad() const { return graph->requires_grad(id); }
};

/// Ordered record of primitive applications. Each record keeps its output
/// value and a backward rule; backward() walks the records once in reverse.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> input(Tensor<T> value, bool requires_grad = false);
  Var<T> param(Parameter<T>& p);

  /// Appends a primitive application. The backward rule is dropped when no
  /// input requires a gradient. Non-finite outputs raise NonFiniteError
  /// naming `op`.
  Var<T> record(const char* op, Tensor<T> value,
                std::initializer_list<Var<T>> inputs, Backward backward);
  Var<T> record(const char* op, Tensor<T> value,
                const std::vector<Var<T>>& inputs, Backward backward);

  const Tensor<T>& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  const std::vector<int>& inputs_of(int id) const { return nodes_.at(id).inputs; }
  const char* op_name(int id) const { return nodes_.at(id).op; }

  /// Gradient of the last backward() target with respect to `v`; zeros when
  /// nothing flowed into it.
  Tensor<T> grad(Var<T> v) const;
  bool has_grad(int id) const { return nodes_.at(id).grad_ready; }
  /// Incoming gradient of a record, valid inside its backward rule.
  const Tensor<T>& out_grad(int id) const { return nodes_.at(id).grad; }
  /// Lazily zero-initialised accumulator for backward rules.
  Tensor<T>& grad_ref(int id);

  /// Populates gradients of every requires_grad leaf from a scalar loss.
  /// Throws if `loss` is not scalar or the graph was already consumed.
  void backward(Var<T> loss);

  bool consumed() const { return consumed_; }
  void reset();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "";
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<int> inputs;
    Backward backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

extern template class Parameter<float>;
extern template class Parameter<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace denas
